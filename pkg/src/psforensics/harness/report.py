"""Accuracy tables and confusion matrices as CSV, plus heat-map images."""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from ..imaging import ImageBuffer, save_image
from .training import EvalReport

HEATMAP_CELL = 24  # pixels per matrix cell


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text).strip("_") or "report"


def report_stem(rep: EvalReport, index: int) -> str:
    return f"{index:02d}_{_slug(rep.model_name)}__{_slug(rep.dataset_name)}"


def heatmap(confusion: np.ndarray, cell: int = HEATMAP_CELL) -> ImageBuffer:
    """Row-normalised confusion as a white-to-blue heat map, one ``cell``-sized square per entry."""
    conf = np.asarray(confusion, dtype=np.float64)
    rows = conf.sum(axis=1, keepdims=True)
    frac = np.divide(conf, rows, out=np.zeros_like(conf), where=rows > 0)
    white, blue = np.array([255.0, 255.0, 255.0]), np.array([8.0, 48.0, 107.0])
    rgb = white + frac[:, :, None] * (blue - white)
    img = np.repeat(np.repeat(rgb, cell, axis=0), cell, axis=1)
    return ImageBuffer(np.rint(img).astype(np.uint8))


def write_confusion_csv(rep: EvalReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + list(rep.labels))
        for label, row in zip(rep.labels, rep.confusion):
            w.writerow([label] + [int(v) for v in row])
    return path


def read_confusion_csv(path):
    """Returns ``(labels, matrix)``."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    labels = rows[0][1:]
    return labels, np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)


def write_accuracy_csv(reports: Sequence[EvalReport], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "dataset", "accuracy", "samples"])
        for rep in reports:
            w.writerow([rep.model_name, rep.dataset_name, repr(float(rep.accuracy)), rep.total])
    return path


def read_accuracy_csv(path) -> List[Dict]:
    with Path(path).open(newline="") as fh:
        return [{"model": r["model"], "dataset": r["dataset"], "accuracy": float(r["accuracy"]),
                 "samples": int(r["samples"])} for r in csv.DictReader(fh)]


def emit_report(reports: Sequence[EvalReport], out_dir, cell: int = HEATMAP_CELL) -> Dict[str, List[Path]]:
    """Write ``accuracy.csv`` plus, per report, a confusion CSV, a heat-map PNG and the JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {"tables": [write_accuracy_csv(reports, out / "accuracy.csv")],
               "confusion": [], "heatmaps": [], "json": []}
    for i, rep in enumerate(reports):
        stem = report_stem(rep, i)
        written["confusion"].append(write_confusion_csv(rep, out / f"{stem}_confusion.csv"))
        written["heatmaps"].append(save_image(heatmap(rep.confusion, cell), out / f"{stem}_confusion.png"))
        jpath = out / f"{stem}.json"
        rep.save(jpath)
        written["json"].append(jpath)
    return written


def load_reports(paths) -> List[EvalReport]:
    """Collect EvalReports from JSON files or directories of them."""
    found = []
    for p in map(Path, paths):
        files = sorted(p.glob("*.json")) if p.is_dir() else [p]
        for f in files:
            data = json.loads(f.read_text())
            if isinstance(data, list):
                found.extend(EvalReport.from_dict(d) for d in data)
            elif "confusion" in data:
                found.append(EvalReport.from_dict(data))
    return found
