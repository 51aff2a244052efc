"""Run configuration: every tunable in one place, flat key=value on disk."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import InputError


@dataclass(frozen=True)
class RunConfig:
    # input geometry
    resolution: int = 64            # square side of host/sticker inputs
    classifier_resize: int = 80     # pre-crop resize for the type classifier
    classifier_crop: int = 64
    anchor_scales: tuple = ((8, 8), (4, 4))

    # loss and decision knobs
    lam: float = 3.0                # weight of the box-regression term
    loss_kind: str = "diou"         # "diou" or "iou" (ablation)
    threshold_filter: float = 0.5
    threshold_mask: float = 0.5
    threshold_transparency: float = 0.5
    filter_opacity: float = 0.6     # applied when transparency is predicted

    # optimization
    lr_classifier: float = 0.05
    lr_placement: float = 0.02
    momentum: float = 0.9
    batch_size: int = 64
    epochs_classifier: int = 4
    epochs_placement: int = 14

    # reproducibility
    seed: int = 42

    def thresholds(self):
        return (self.threshold_filter, self.threshold_mask,
                self.threshold_transparency)

    def override(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)


def _fmt(value):
    if isinstance(value, tuple):
        return ";".join(",".join(str(x) for x in pair) for pair in value) \
            if value and isinstance(value[0], tuple) \
            else ",".join(str(x) for x in value)
    return str(value)


def _parse(name: str, raw: str, kind):
    if name == "anchor_scales":
        return tuple(tuple(int(x) for x in pair.split(","))
                     for pair in raw.split(";"))
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def config_text(config: RunConfig) -> str:
    return "\n".join(f"{k}={_fmt(v)}" for k, v in asdict(config).items()) + "\n"


def config_fingerprint(config: RunConfig) -> str:
    """Short stable digest of the effective configuration."""
    return hashlib.blake2b(config_text(config).encode(), digest_size=8).hexdigest()


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(config_text(config), encoding="utf-8")


def load_config(path) -> RunConfig:
    known = {f.name: f.type for f in fields(RunConfig)}
    types = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in known:
            raise InputError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _parse(key, raw.strip(), types[key])
    return RunConfig(**values)
