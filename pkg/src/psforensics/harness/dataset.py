"""Block datasets and their manifests.

A manifest is a JSON-lines file. The first line is a header object; each
following line is one block record with keys in this order::

    block_path, label, source, split, parent_image_id, block_origin, parent_path

``block_path`` and ``parent_path`` are relative to the manifest's directory.
``block_origin`` is ``[row, col]`` in the cropped parent. ``parent_path``
points at the full (uncropped) manipulated parent so the print-scan channel
can be applied to whole pages and re-blocked.
"""

from __future__ import annotations

import json
import os
from collections import Counter, OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from ..imaging import ImageBuffer, center_crop, extract_blocks, load_image, save_image
from ..manipulations import CLASS_SETS, Manipulation, ManipulationKind, apply_manipulation
from ..jpeg import jpeg_roundtrip
from ..printscan import PrinterProfile, simulate_printscan

MANIFEST_VERSION = 1
RECORD_FIELDS = ("block_path", "label", "source", "split", "parent_image_id",
                 "block_origin", "parent_path")
IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")


class DataError(ValueError):
    """Bad or missing input data (CLI exit code 2)."""


@dataclass(frozen=True)
class Record:
    block_path: str
    label: str
    source: str
    split: str
    parent_image_id: str
    block_origin: tuple
    parent_path: str = ""

    def to_json(self) -> str:
        d = OrderedDict((k, getattr(self, k)) for k in RECORD_FIELDS)
        d["block_origin"] = list(self.block_origin)
        return json.dumps(d, separators=(", ", ": "))


@dataclass
class DatasetManifest:
    records: List[Record]
    seed: int
    class_set: str
    header: Dict = field(default_factory=dict)
    root: Path = field(default_factory=Path)  # directory relative paths resolve against
    name: str = ""
    path: Optional[Path] = None

    @property
    def labels(self) -> List[str]:
        """Label vocabulary in canonical order."""
        if "labels" in self.header:
            return list(self.header["labels"])
        if self.class_set in CLASS_SETS:
            return [m.value for m in CLASS_SETS[self.class_set]]
        return sorted({r.label for r in self.records})

    def split(self, which: str) -> List[Record]:
        return [r for r in self.records if r.split == which]

    def resolve(self, rel: str) -> Path:
        return (self.root / rel).resolve() if not os.path.isabs(rel) else Path(rel)

    def class_counts(self, split: Optional[str] = None) -> Counter:
        return Counter(r.label for r in self.records if split is None or r.split == split)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        root = path.parent.resolve()
        header = OrderedDict([("manifest_version", MANIFEST_VERSION), ("class_set", self.class_set),
                              ("seed", self.seed)])
        for k, v in self.header.items():
            if k not in header:
                header[k] = v
        lines = [json.dumps(header, separators=(", ", ": "))]
        for r in self.records:
            rebased = replace(r, block_path=_rel(self.resolve(r.block_path), root),
                              parent_path=_rel(self.resolve(r.parent_path), root) if r.parent_path else "")
            lines.append(rebased.to_json())
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"manifest not found: {path}")
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
        if not lines:
            raise DataError(f"{path}: empty manifest")
        try:
            header = json.loads(lines[0])
            records = []
            for ln in lines[1:]:
                d = json.loads(ln)
                d["block_origin"] = tuple(d["block_origin"])
                records.append(Record(**d))
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise DataError(f"{path}: malformed manifest ({exc})") from exc
        if header.get("manifest_version") != MANIFEST_VERSION:
            raise DataError(f"{path}: unsupported manifest version {header.get('manifest_version')}")
        extra = {k: v for k, v in header.items() if k not in ("manifest_version", "class_set", "seed")}
        return cls(records, header["seed"], header["class_set"], extra, path.parent.resolve(),
                   header.get("name", path.stem), path.resolve())


def _rel(p: Path, root: Path) -> str:
    return os.path.relpath(p, root)


def list_images(source_dir) -> List[Path]:
    src = Path(source_dir)
    if not src.is_dir():
        raise DataError(f"source directory not found: {src}")
    files = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no PNG/PPM images in {src}")
    return files


def assign_splits(parent_ids: Sequence[str], seed: int, val_fraction: float = 0.25) -> Dict[str, str]:
    """Whole parents go to one split; round(val_fraction * n) parents become validation."""
    ids = sorted(parent_ids)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_val = int(np.floor(val_fraction * len(ids) + 0.5))
    if len(ids) > 1:
        n_val = min(max(n_val, 1), len(ids) - 1)
    val = {ids[i] for i in order[:n_val]}
    return {pid: ("val" if pid in val else "train") for pid in ids}


def _block_name(parent_id, label, origin):
    return f"{parent_id}_{label}_r{origin[0]:04d}_c{origin[1]:04d}.ppm"


def _block_page(page: ImageBuffer, crop, block_size, selection, parent_id):
    if crop is not None:
        ch, cw = crop
        if ch > page.height or cw > page.width:
            raise DataError(f"{parent_id}: {page.height}x{page.width} image smaller than crop {ch}x{cw}")
        page = center_crop(page, ch, cw)
    if block_size > page.height or block_size > page.width:
        raise DataError(f"{parent_id}: image smaller than block size {block_size}")
    return extract_blocks(page, block_size, selection, parent_id)


def _map(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def generate_dataset(source_dir, class_set: str, block_size: int, out_dir, seed: int = 0,
                     crop=None, selection="all", val_fraction: float = 0.25,
                     manipulations: Optional[Dict[Manipulation, ManipulationKind]] = None,
                     workers: int = 0, name: str = "original") -> DatasetManifest:
    """Manipulate every source image once per class, crop, block, write, record.

    Image ``i`` (in sorted filename order) uses seed ``seed + i``.
    """
    if class_set not in CLASS_SETS:
        raise DataError(f"unknown class set {class_set!r}")
    sources = list_images(source_dir)
    out = Path(out_dir)
    (out / "blocks").mkdir(parents=True, exist_ok=True)
    (out / "parents").mkdir(parents=True, exist_ok=True)
    kinds = [(manipulations or {}).get(m, ManipulationKind.default(m)) for m in CLASS_SETS[class_set]]
    parent_ids = [p.stem for p in sources]
    if len(set(parent_ids)) != len(parent_ids):
        raise DataError("source images must have unique file stems")
    splits = assign_splits(parent_ids, seed, val_fraction)

    def work(idx):
        path = sources[idx]
        img = load_image(path)
        if img.channels != 3:
            raise DataError(f"{path}: expected an RGB image")
        pid = path.stem
        recs = []
        for kind in kinds:
            label = kind.tag.value
            page = apply_manipulation(img, kind, seed + idx)
            parent_path = save_image(page, out / "parents" / f"{pid}_{label}.png")
            for blk in _block_page(page, crop, block_size, selection, pid):
                origin = (blk.origin_row, blk.origin_col)
                bpath = save_image(blk.pixels, out / "blocks" / _block_name(pid, label, origin))
                recs.append(Record(str(bpath), label, "original", splits[pid], pid, origin,
                                   str(parent_path)))
        return recs

    per_image = _map(work, range(len(sources)), workers)
    records = [r for recs in per_image for r in recs]
    header = {"name": name, "block_size": block_size, "crop": list(crop) if crop else None,
              "selection": selection if isinstance(selection, str) else f"central({selection})",
              "val_fraction": val_fraction,
              "manipulations": {k.tag.value: k.params for k in kinds}}
    manifest = DatasetManifest(records, seed, class_set, header, out.resolve(), name)
    manifest.save(out / "manifest.jsonl")
    return DatasetManifest.load(out / "manifest.jsonl")


def transform_dataset(manifest: DatasetManifest, page_fn: Callable[[ImageBuffer, int], ImageBuffer],
                      source: str, out_dir, workers: int = 0, name: Optional[str] = None) -> DatasetManifest:
    """Apply ``page_fn(page, parent_index)`` to each full parent page and re-block.

    Labels, splits and block origins carry over; ``source`` becomes the
    new records' source field.
    """
    out = Path(out_dir)
    (out / "blocks").mkdir(parents=True, exist_ok=True)
    (out / "parents").mkdir(parents=True, exist_ok=True)
    crop = manifest.header.get("crop")
    block_size = manifest.header.get("block_size")
    selection = manifest.header.get("selection", "all")
    if block_size is None:
        raise DataError("manifest header lacks block_size; cannot re-block parents")

    by_parent: "OrderedDict[str, List[Record]]" = OrderedDict()
    for r in manifest.records:
        if not r.parent_path:
            raise DataError(f"record {r.block_path} has no parent image")
        by_parent.setdefault(r.parent_path, []).append(r)
    parent_order = sorted({r.parent_image_id for r in manifest.records})
    parent_index = {pid: i for i, pid in enumerate(parent_order)}

    def work(item):
        ppath, recs = item
        full = manifest.resolve(ppath)
        if not full.is_file():
            raise DataError(f"missing parent image {full}")
        pid = recs[0].parent_image_id
        label = recs[0].label
        page = page_fn(load_image(full), parent_index[pid])
        new_parent = save_image(page, out / "parents" / f"{pid}_{label}.png")
        blocks = {(b.origin_row, b.origin_col): b
                  for b in _block_page(page, tuple(crop) if crop else None, block_size,
                                       _selection_arg(selection), pid)}
        new = []
        for r in recs:
            blk = blocks.get(tuple(r.block_origin))
            if blk is None:
                raise DataError(f"block {r.block_origin} of {pid} not reproducible")
            bpath = save_image(blk.pixels, out / "blocks" / _block_name(pid, r.label, r.block_origin))
            new.append(replace(r, block_path=str(bpath), source=source, parent_path=str(new_parent)))
        return new

    results = dict(zip(by_parent, _map(work, list(by_parent.items()), workers)))
    records = []
    emitted = set()
    for r in manifest.records:
        if r.parent_path in emitted:
            continue
        emitted.add(r.parent_path)
        records.extend(results[r.parent_path])
    header = dict(manifest.header)
    header["name"] = name or source
    if "derived_from" not in header and manifest.path is not None:
        header["derived_from"] = str(manifest.path)
    new_manifest = DatasetManifest(records, manifest.seed, manifest.class_set, header,
                                   out.resolve(), header["name"])
    new_manifest.save(out / "manifest.jsonl")
    return DatasetManifest.load(out / "manifest.jsonl")


def _selection_arg(selection):
    if isinstance(selection, str) and selection.startswith("central"):
        return int(selection[len("central"):].strip("()"))
    return selection


def printscan_dataset(manifest: DatasetManifest, profile: PrinterProfile, seed: int, out_dir,
                      workers: int = 0) -> DatasetManifest:
    """Print-scan every full parent page with ``profile``; parent ``i`` uses ``seed + i``."""
    return transform_dataset(manifest, lambda page, i: simulate_printscan(page, profile, seed + i),
                             profile.name, out_dir, workers)


def jpeg_dataset(manifest: DatasetManifest, quality: int, out_dir, workers: int = 0) -> DatasetManifest:
    return transform_dataset(manifest, lambda page, i: jpeg_roundtrip(page, quality),
                             f"jpeg{quality}", out_dir, workers, name=f"jpeg-q{quality}")


def build_composite(manifests: Sequence[DatasetManifest], include_original: bool = False,
                    seed: int = 0, original: Optional[DatasetManifest] = None,
                    name: str = "composite") -> DatasetManifest:
    """Balanced union of per-printer manifests.

    Every source contributes the same number of blocks per (label, split):
    the minimum across sources, sampled with ``seed``. With
    ``include_original`` the undegraded blocks join as one more source of
    the same size.
    """
    if not manifests:
        raise DataError("composite needs at least one manifest")
    sources = list(manifests)
    if include_original:
        if original is None:
            ref = sources[0].header.get("derived_from")
            if not ref:
                raise DataError("cannot locate original manifest; pass it explicitly")
            original = DatasetManifest.load(ref)
        sources.append(original)
    class_set = sources[0].class_set
    if any(m.class_set != class_set for m in sources):
        raise DataError("all manifests must share a class set")

    def groups(m):
        g: Dict[tuple, List[Record]] = {}
        for r in m.records:
            g.setdefault((r.label, r.split), []).append(replace(
                r, block_path=str(m.resolve(r.block_path)),
                parent_path=str(m.resolve(r.parent_path)) if r.parent_path else ""))
        return g

    grouped = [groups(m) for m in sources]
    keys = sorted(set().union(*[g.keys() for g in grouped]))
    rng = np.random.default_rng(seed)
    records = []
    for gi, g in enumerate(grouped):
        for key in keys:
            quota = min(len(other.get(key, [])) for other in grouped)
            pool = g.get(key, [])
            if quota < len(pool):
                keep = np.sort(rng.choice(len(pool), size=quota, replace=False))
                pool = [pool[i] for i in keep]
            records.extend(pool)
    header = {"name": name, "block_size": sources[0].header.get("block_size"),
              "crop": sources[0].header.get("crop"),
              "selection": sources[0].header.get("selection", "all"),
              "components": [m.name for m in sources]}
    return DatasetManifest(records, seed, class_set, header, Path.cwd(), name)


def relabel_by_source(manifests: Sequence[DatasetManifest], keep_label: str = "pr",
                      name: str = "printer-id") -> DatasetManifest:
    """Pristine blocks from several printers, labelled by printer name."""
    records, sources = [], []
    for m in manifests:
        for r in m.records:
            if r.label != keep_label:
                continue
            records.append(replace(r, label=r.source, block_path=str(m.resolve(r.block_path)),
                                   parent_path=str(m.resolve(r.parent_path)) if r.parent_path else ""))
        sources.append(m.records[0].source if m.records else m.name)
    if len(set(sources)) < 2:
        raise DataError("printer identification needs blocks from at least two sources")
    header = {"name": name, "labels": sorted(set(sources)),
              "block_size": manifests[0].header.get("block_size")}
    return DatasetManifest(records, manifests[0].seed, "printer-id", header, Path.cwd(), name)


def load_split(manifest: DatasetManifest, split: str, labels: Optional[Sequence[str]] = None):
    """Stack a split's blocks into (N, H, W, C) uint8 plus integer labels."""
    labels = list(labels) if labels is not None else manifest.labels
    index = {lab: i for i, lab in enumerate(labels)}
    recs = manifest.split(split)
    if not recs:
        return np.zeros((0, 0, 0, 0), np.uint8), np.zeros(0, np.intp)
    missing = sorted({r.label for r in recs} - set(index))
    if missing:
        raise DataError(f"labels {missing} not known to the model ({labels})")
    first = load_image(manifest.resolve(recs[0].block_path))
    x = np.empty((len(recs),) + first.shape, dtype=np.uint8)
    for i, r in enumerate(recs):
        img = load_image(manifest.resolve(r.block_path))
        if img.shape != first.shape:
            raise DataError(f"{r.block_path}: block shape {img.shape} differs from {first.shape}")
        x[i] = img.data
    y = np.array([index[r.label] for r in recs], dtype=np.intp)
    return x, y
