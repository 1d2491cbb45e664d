"""Experiment configuration file (INI key-value).

Sections: ``[manipulations]`` (``<tag>.<param>`` keys), ``[dataset]``,
``[model]``, ``[train]`` with optional ``[train:<family>]`` overrides, and
one ``[profile:<name>]`` per simulated printer.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional

from .manipulations import Manipulation, ManipulationKind
from .nn.optim import TrainConfig
from .printscan import PrinterProfile


class ConfigFileError(ValueError):
    pass


@dataclass
class DatasetSettings:
    parent_height: int = 144
    parent_width: int = 208
    crop_height: int = 128
    crop_width: int = 192
    block_size: int = 64
    selection: str = "all"
    val_fraction: float = 0.25
    jpeg_attack_quality: int = 80


@dataclass
class ExperimentConfig:
    manipulations: Dict[Manipulation, ManipulationKind]
    dataset: DatasetSettings
    model: Dict[str, float]
    train: Dict[str, Dict]
    profiles: List[PrinterProfile]

    def train_config(self, family: Optional[str] = None, **overrides) -> TrainConfig:
        values = dict(self.train.get("", {}))
        if family:
            values.update(self.train.get(family, {}))
        values.update(overrides)
        return TrainConfig(**values)

    def profile(self, name: str) -> PrinterProfile:
        for p in self.profiles:
            if p.name == name:
                return p
        raise KeyError(f"no printer profile named {name!r}; have {[p.name for p in self.profiles]}")


def _number(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        return float(text)


def _floats(text: str):
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


_TRAIN_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _train_section(section) -> Dict:
    out = {}
    for key, raw in section.items():
        if key not in _TRAIN_TYPES:
            raise ConfigFileError(f"unknown train key {key!r}")
        if key == "schedule":
            out[key] = raw.strip()
        elif key in ("max_iter", "clip_norm"):
            off = raw.strip().lower() in ("", "none", "off")
            out[key] = None if off else (int(raw) if key == "max_iter" else float(raw))
        else:
            out[key] = _number(raw)
    return out


def _profile(name: str, section) -> PrinterProfile:
    kw = {"name": name}
    for key, raw in section.items():
        if key == "color_matrix":
            vals = _floats(raw)
            if len(vals) != 9:
                raise ConfigFileError(f"profile {name}: color_matrix needs 9 numbers")
            kw[key] = tuple(tuple(vals[r * 3:r * 3 + 3]) for r in range(3))
        elif key in ("color_offset", "gain_field_cycles"):
            kw[key] = tuple(_floats(raw))
        elif key == "requant_quality":
            kw[key] = None if raw.strip().lower() in ("off", "none", "") else int(raw)
        elif key == "halftone_cell":
            kw[key] = int(raw)
        elif key in ("halftone_amplitude", "blur_sigma", "noise_sigma",
                     "gain_field_amplitude", "geometric_jitter"):
            kw[key] = float(raw)
        else:
            raise ConfigFileError(f"profile {name}: unknown key {key!r}")
    try:
        return PrinterProfile(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigFileError(f"profile {name}: {exc}") from exc


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    cp.read_string(text)

    params: Dict[Manipulation, Dict] = {m: {} for m in Manipulation}
    if cp.has_section("manipulations"):
        for key, raw in cp["manipulations"].items():
            tag, _, param = key.partition(".")
            params[Manipulation(tag)][param] = _number(raw)
    manips = {m: ManipulationKind(m, p) for m, p in params.items()}

    ds = DatasetSettings()
    if cp.has_section("dataset"):
        for key, raw in cp["dataset"].items():
            if not hasattr(ds, key):
                raise ConfigFileError(f"unknown dataset key {key!r}")
            setattr(ds, key, raw.strip() if key == "selection" else _number(raw))

    model = {k: _number(v) for k, v in cp["model"].items()} if cp.has_section("model") else {}

    train: Dict[str, Dict] = {"": _train_section(cp["train"]) if cp.has_section("train") else {}}
    profiles = []
    for sec in cp.sections():
        if sec.startswith("train:"):
            train[sec.split(":", 1)[1]] = _train_section(cp[sec])
        elif sec.startswith("profile:"):
            profiles.append(_profile(sec.split(":", 1)[1], cp[sec]))
    return ExperimentConfig(manips, ds, model, train, profiles)


def default_config_text() -> str:
    return resources.files("psforensics").joinpath("data/default.ini").read_text()


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return parse_config(default_config_text())
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text())


def format_profile(p: PrinterProfile) -> str:
    """Render a profile as an INI section (inverse of the parser)."""
    m = ",  ".join(", ".join(f"{v:g}" for v in row) for row in p.color_matrix)
    lines = [
        f"[profile:{p.name}]",
        f"color_matrix = {m}",
        "color_offset = " + ", ".join(f"{v:g}" for v in p.color_offset),
        f"halftone_amplitude = {p.halftone_amplitude:g}",
        f"halftone_cell = {p.halftone_cell}",
        f"blur_sigma = {p.blur_sigma:g}",
        f"noise_sigma = {p.noise_sigma:g}",
        f"gain_field_amplitude = {p.gain_field_amplitude:g}",
        "gain_field_cycles = " + ", ".join(f"{v:g}" for v in p.gain_field_cycles),
        f"geometric_jitter = {p.geometric_jitter:g}",
        f"requant_quality = {'off' if p.requant_quality is None else p.requant_quality}",
    ]
    return "\n".join(lines) + "\n"
