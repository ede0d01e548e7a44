"""Layered key=value training configuration.

Config files are plain text, one ``dotted.key=value`` per line with ``#``
comments. Later layers (files, then CLI overrides) win. The canonical
serialization is embedded verbatim in every checkpoint and its hash is
checked on resume, so a checkpoint can never silently continue under
different settings.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

from ..core.transforms import JitterRanges, TransformRanges
from ..losses import LossWeights


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "model.arch": "tiny",
    "model.parts": 8,
    "model.width": 32,
    "model.weights_path": "",
    "train.resolution": 128,
    "train.batch_size": 16,
    "train.iterations": 50000,  # unstated upstream; a guess, override per run
    "train.lr_model": 0.003,
    "train.lr_basis": 0.001,
    "train.momentum": 0.9,
    "train.seed": 0,
    "train.checkpoint_interval": 500,
    "train.log_interval": 10,
    "loss.con": 0.1,
    "loss.eqv": 10.0,
    "loss.sc": 100.0,
    "loss.ot": 0.1,
    "loss.eqv_s": 10.0,
    "loss.eqv_c": 1.0,
    "loss.apply_to_transformed": False,
    "eqv.rotation_deg": 60.0,
    "eqv.shift_frac": 0.2,
    "eqv.scale_min": 0.3,
    "eqv.scale_max": 2.0,
    "eqv.tps_grid": 5,
    "eqv.tps_shift_frac": 0.1,
    "eqv.branches": 1,
    "jitter.brightness": 0.3,
    "jitter.contrast": 0.3,
    "jitter.saturation": 0.2,
    "jitter.hue": 0.2,
    "features.provider": "synthetic",
    "features.weights_path": "",
    "saliency.policy": "error",
    "coords.units": "normalized",
    "dff.mask_features": True,
}


def _parse_value(key: str, raw: str):
    default = DEFAULTS[key]
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc
    return raw


def parse_config_file(path) -> dict:
    values = {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{ln}: expected key=value, got {stripped!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{ln}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


@dataclass(frozen=True)
class TrainConfig:
    """Fully resolved configuration; construct via load_config()."""

    values: tuple  # sorted (key, value) pairs, hashable

    def __getitem__(self, key: str):
        d = dict(self.values)
        if key not in d:
            raise KeyError(key)
        return d[key]

    @property
    def parts(self) -> int:
        return self["model.parts"]

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            con=self["loss.con"],
            eqv=self["loss.eqv"],
            sc=self["loss.sc"],
            ot=self["loss.ot"],
            eqv_s=self["loss.eqv_s"],
            eqv_c=self["loss.eqv_c"],
        )

    def transform_ranges(self) -> TransformRanges:
        return TransformRanges(
            rotation_deg=self["eqv.rotation_deg"],
            shift_frac=self["eqv.shift_frac"],
            scale_min=self["eqv.scale_min"],
            scale_max=self["eqv.scale_max"],
            tps_grid=self["eqv.tps_grid"],
            tps_shift_frac=self["eqv.tps_shift_frac"],
        )

    def jitter_ranges(self) -> JitterRanges:
        return JitterRanges(
            brightness=self["jitter.brightness"],
            contrast=self["jitter.contrast"],
            saturation=self["jitter.saturation"],
            hue=self["jitter.hue"],
        )

    def canonical_text(self) -> str:
        lines = []
        for key, value in self.values:
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


def load_config(paths=(), overrides: dict | None = None) -> TrainConfig:
    """Resolve defaults, then config files in order, then overrides."""
    merged = dict(DEFAULTS)
    for p in paths:
        merged.update(parse_config_file(p))
    for key, raw in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = _parse_value(key, str(raw)) if isinstance(raw, str) else raw
    cfg = TrainConfig(values=tuple(sorted(merged.items())))
    cfg.transform_ranges().validate()
    cfg.jitter_ranges().validate()
    cfg.loss_weights()
    if cfg["model.parts"] < 1:
        raise ConfigError("model.parts must be at least 1")
    if cfg["coords.units"] not in ("normalized", "pixel"):
        raise ConfigError("coords.units must be 'normalized' or 'pixel'")
    if cfg["saliency.policy"] not in ("error", "ones"):
        raise ConfigError("saliency.policy must be 'error' or 'ones'")
    return cfg


def config_from_text(text: str) -> TrainConfig:
    """Rebuild a TrainConfig from the canonical text stored in a checkpoint."""
    values = {}
    for ln, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped:
            continue
        key, raw = stripped.split("=", 1)
        if key not in DEFAULTS:
            raise ConfigError(f"checkpoint config line {ln}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    merged = dict(DEFAULTS)
    merged.update(values)
    return TrainConfig(values=tuple(sorted(merged.items())))
