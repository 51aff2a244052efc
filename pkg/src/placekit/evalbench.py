"""Placement baselines and test-set scoring.

A "method" is any callable (record, scene_set) -> Box.  evaluate() runs
every method over every record, scores each prediction with DIoU against
the record's ground-truth box, and aggregates.  A method that raises is
scored -1 (the worst possible DIoU) with the error noted, so all methods
keep the same denominator.
"""
from __future__ import annotations

import hashlib
import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, config_fingerprint
from .errors import InputError
from .geometry import Box, diou

FAILURE_SCORE = -1.0


@dataclass
class MethodResult:
    scores: list
    mean: float
    median: float
    notes: dict = field(default_factory=dict)   # record_id -> error text


@dataclass
class EvalReport:
    methods: dict                # name -> MethodResult, insertion-ordered
    record_ids: list
    sample_count: int
    config_fingerprint: str


def baseline_center(host_dims, sticker_dims) -> Box:
    """Centered box with the sticker's aspect ratio and 1/9 of the area.

    Dims are (width, height) pairs; only their ratios matter.  Aspect is
    preserved in normalized units, so w*h = 1/9 and w/h = sticker aspect.
    """
    hw, hh = host_dims
    sw, sh = sticker_dims
    if hw <= 0 or hh <= 0 or sw <= 0 or sh <= 0:
        raise InputError("dimensions must be positive")
    aspect = sw / sh
    w = math.sqrt(aspect / 9.0)
    h = math.sqrt(1.0 / (9.0 * aspect))
    return Box(0.5 - w / 2.0, 0.5 - h / 2.0, w, h)


def baseline_random(host_dims, sticker_dims, seed: int) -> Box:
    """Random box: aspect x U[0.5, 2], area U[1/25, 1], center in [0,1]^2."""
    hw, hh = host_dims
    sw, sh = sticker_dims
    if hw <= 0 or hh <= 0 or sw <= 0 or sh <= 0:
        raise InputError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    aspect = (sw / sh) * rng.uniform(0.5, 2.0)
    area = rng.uniform(1.0 / 25.0, 1.0)
    w = math.sqrt(area * aspect)
    h = math.sqrt(area / aspect)
    cx, cy = rng.uniform(0.0, 1.0, size=2)
    return Box(cx - w / 2.0, cy - h / 2.0, w, h)


def center_method(record, scene_set) -> Box:
    sticker = scene_set.stickers[record.sticker_id]
    host = scene_set.hosts[record.record_id]
    return baseline_center((host.shape[1], host.shape[0]),
                           (sticker.shape[1], sticker.shape[0]))


def make_random_method(seed: int):
    """Random baseline with a per-record derived seed (order-independent)."""
    def method(record, scene_set):
        sticker = scene_set.stickers[record.sticker_id]
        host = scene_set.hosts[record.record_id]
        digest = hashlib.blake2b(f"{seed}:{record.record_id}".encode(),
                                 digest_size=4).digest()
        sub = int.from_bytes(digest, "little")
        return baseline_random((host.shape[1], host.shape[0]),
                               (sticker.shape[1], sticker.shape[0]), sub)
    return method


def make_model_method(params, scene_set, records, config: RunConfig):
    """Wrap a trained placement net as a method via precomputed boxes."""
    from .placement import evaluate_on_records
    boxes = evaluate_on_records(params, scene_set, records, config)

    def method(record, _scene_set):
        return boxes[record.record_id]
    return method


def evaluate(methods: dict, scene_set, records, config: RunConfig) -> EvalReport:
    """Score every method on every record; failures count as -1."""
    if not records:
        raise InputError("empty test set")
    results = {}
    for name, fn in methods.items():
        scores, notes = [], {}
        for record in records:
            gt = Box(record.x, record.y, record.w, record.h)
            try:
                scores.append(diou(fn(record, scene_set), gt))
            except Exception as exc:  # failures are data, not crashes
                scores.append(FAILURE_SCORE)
                notes[record.record_id] = f"{type(exc).__name__}: {exc}"
        results[name] = MethodResult(
            scores=scores,
            mean=math.fsum(scores) / len(scores),
            median=statistics.median(scores),
            notes=notes)
    return EvalReport(methods=results,
                      record_ids=[r.record_id for r in records],
                      sample_count=len(records),
                      config_fingerprint=config_fingerprint(config))


def format_table(report: EvalReport) -> str:
    width = max(6, max(len(n) for n in report.methods))
    lines = [f"{'method':<{width}}  {'mean':>8}  {'median':>8}  "
             f"{'n':>5}  {'failures':>8}"]
    for name, res in report.methods.items():
        lines.append(f"{name:<{width}}  {res.mean:>8.4f}  {res.median:>8.4f}  "
                     f"{report.sample_count:>5}  {len(res.notes):>8}")
    lines.append(f"config {report.config_fingerprint}")
    return "\n".join(lines)


def write_report(report: EvalReport, path) -> None:
    """One JSON object per line: a header, then one line per method."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"kind": "header",
                            "sample_count": report.sample_count,
                            "config_fingerprint": report.config_fingerprint,
                            "record_ids": report.record_ids}) + "\n")
        for name, res in report.methods.items():
            f.write(json.dumps({"kind": "method", "name": name,
                                "mean": res.mean, "median": res.median,
                                "scores": res.scores,
                                "notes": res.notes}) + "\n")


def read_report(path) -> EvalReport:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    methods = {}
    for line in lines[1:]:
        obj = json.loads(line)
        methods[obj["name"]] = MethodResult(
            scores=obj["scores"], mean=obj["mean"], median=obj["median"],
            notes=obj["notes"])
    return EvalReport(methods=methods, record_ids=header["record_ids"],
                      sample_count=header["sample_count"],
                      config_fingerprint=header["config_fingerprint"])
