"""Dataset schema, sticker-level splitting, and the synthetic scene generator.

The on-disk layout of a dataset directory:
    manifest.jsonl   one JSON object per PlacementRecord, UTF-8
    split.txt        two columns: sticker_id <TAB> split
    images/          8-bit RGBA PNGs for hosts and stickers, 8-bit
                     grayscale PNGs for foreground masks
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .compositor import bilinear_resample
from .errors import DataError, InputError

RECORD_FIELDS = ("record_id", "sticker_id", "host_ref", "sticker_ref",
                 "x", "y", "w", "h", "opacity", "rotation_deg",
                 "mask_ref", "style_label")

SPLIT_FRACTIONS = {"train": 0.90, "val": 0.05, "test": 0.05}

# generator geometry (64x64 hosts)
HOST_SIZE = 64
STICKER_AREA_RATIO = 0.5     # gt box area as a fraction of target area
MIN_GT_DIM = 0.14            # keeps at least one desk-grid anchor positive
MAX_GT_DIM = 1.2
FILTER_STICKER_FRACTION = 0.2
FILTER_REDUCED_OPACITY = 0.6


@dataclass
class PlacementRecord:
    """One composition action: what was placed where, and how."""

    record_id: str
    sticker_id: str
    host_ref: str
    sticker_ref: str
    x: float
    y: float
    w: float
    h: float
    opacity: float
    rotation_deg: float
    mask_ref: Optional[str]
    style_label: str

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise InputError(f"record {self.record_id}: non-positive extents")
        if not 0.0 <= self.opacity <= 1.0:
            raise InputError(f"record {self.record_id}: opacity out of [0,1]")
        if self.style_label not in ("filter", "sticker", "unknown"):
            raise InputError(f"record {self.record_id}: bad style {self.style_label!r}")

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k) for k in RECORD_FIELDS})

    @classmethod
    def from_json(cls, line: str) -> "PlacementRecord":
        obj = json.loads(line)
        return cls(**{k: obj[k] for k in RECORD_FIELDS})


@dataclass
class SceneSet:
    """A dataset held in memory: records plus their pixel data."""

    records: list
    hosts: dict          # record_id -> (H, W, 4) uint8
    masks: dict          # record_id -> (H, W) float32 in [0, 1]
    stickers: dict       # sticker_id -> (h, w, 4) uint8


def write_records(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_records(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(PlacementRecord.from_json(line))
    return out


# ---------------------------------------------------------------------------
# labeling and splitting


def label_filter_candidates(usages: dict) -> set:
    """Stickers covering more than half the host in at least half their uses.

    usages maps sticker_id -> list of per-use coverage fractions
    (sticker box area / host area).
    """
    candidates = set()
    for sid, covs in usages.items():
        if not covs:
            raise InputError(f"sticker {sid} has no usages")
        big = sum(1 for c in covs if c > 0.5)
        if big / len(covs) >= 0.5:
            candidates.add(sid)
    return candidates


def _hash_key(seed: int, sticker_id: str) -> str:
    return hashlib.blake2b(f"{seed}:{sticker_id}".encode(), digest_size=8).hexdigest()


def split_by_sticker(records, seed: int) -> dict:
    """Deterministic 90/5/5 sticker-level split; no id crosses splits."""
    return split_sticker_ids({r.sticker_id for r in records}, seed)


def split_sticker_ids(ids, seed: int) -> dict:
    ids = sorted(ids)
    if len(ids) < 20:
        raise DataError(f"need at least 20 distinct stickers, got {len(ids)}")
    ordered = sorted(ids, key=lambda s: _hash_key(seed, s))
    n = len(ordered)
    n_val = max(1, round(SPLIT_FRACTIONS["val"] * n))
    n_test = max(1, round(SPLIT_FRACTIONS["test"] * n))
    manifest = {}
    for i, sid in enumerate(ordered):
        if i < n - n_val - n_test:
            manifest[sid] = "train"
        elif i < n - n_test:
            manifest[sid] = "val"
        else:
            manifest[sid] = "test"
    return manifest


def write_split(manifest: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid in sorted(manifest):
            fh.write(f"{sid}\t{manifest[sid]}\n")


def read_split(path) -> dict:
    manifest = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                sid, split = line.rstrip("\n").split("\t")
                manifest[sid] = split
    return manifest


def sample_cap(records, cap: int = 300, seed: int = 0):
    """Keep at most cap records per sticker, uniformly without replacement.

    Retained records keep their input order.
    """
    by_sticker = {}
    for i, r in enumerate(records):
        by_sticker.setdefault(r.sticker_id, []).append(i)
    rng = np.random.default_rng(seed)
    keep = set()
    for sid in sorted(by_sticker):
        idx = by_sticker[sid]
        if len(idx) <= cap:
            keep.update(idx)
        else:
            chosen = rng.choice(len(idx), size=cap, replace=False)
            keep.update(idx[j] for j in chosen)
    return [r for i, r in enumerate(records) if i in keep]


# ---------------------------------------------------------------------------
# synthetic scene generation


def _smooth_background(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = rng.uniform(30, 140, size=(4, 4, 3))
    rgb = bilinear_resample(coarse, size, size)
    return rgb


def _ellipse_mask(size: int, cx: float, cy: float, rx: float, ry: float):
    yy, xx = np.mgrid[0:size, 0:size]
    return (((xx + 0.5 - cx) / rx) ** 2 + ((yy + 0.5 - cy) / ry) ** 2) <= 1.0


def _draw_glyph(rng: np.random.Generator) -> np.ndarray:
    """A standalone sticker: opaque shape on a transparent canvas."""
    w = int(rng.integers(32, 97))
    h = int(rng.integers(32, 97))
    yy, xx = np.mgrid[0:h, 0:w]
    nx = (xx + 0.5) / w * 2 - 1
    ny = (yy + 0.5) / h * 2 - 1
    kind = rng.integers(0, 4)
    if kind == 0:                                   # disc
        shape = nx ** 2 + ny ** 2 <= 0.9
    elif kind == 1:                                 # ring
        r2 = nx ** 2 + ny ** 2
        shape = (r2 <= 0.9) & (r2 >= 0.35)
    elif kind == 2:                                 # diamond
        shape = np.abs(nx) + np.abs(ny) <= 0.95
    else:                                           # cross
        shape = (np.abs(nx) <= 0.3) | (np.abs(ny) <= 0.3)
    color = rng.integers(120, 256, size=3)
    img = np.zeros((h, w, 4), dtype=np.uint8)
    img[shape, :3] = color
    img[shape, 3] = 255
    return img


def _draw_filter_texture(rng: np.random.Generator):
    """A full-canvas overlay sticker; visual traits encode its labels.

    Horizontal gradient -> masking is used; dark palette -> reduced
    opacity. Returns (image, use_mask, transparency).
    """
    size = 80
    use_mask = bool(rng.integers(0, 2))
    transparency = bool(rng.integers(0, 2))
    lo, hi = (0, 110) if transparency else (150, 255)
    c0 = rng.integers(lo, hi + 1, size=3).astype(np.float64)
    c1 = rng.integers(lo, hi + 1, size=3).astype(np.float64)
    ramp = np.linspace(0, 1, size)
    grad = ramp[None, :, None] if use_mask else ramp[:, None, None]
    rgb = c0 * (1 - grad) + c1 * grad
    img = np.empty((size, size, 4), dtype=np.uint8)
    img[..., :3] = np.floor(np.broadcast_to(rgb, (size, size, 3)) + 0.5)
    img[..., 3] = 255
    return img, use_mask, transparency


def synth_generate(n: int, seed: int) -> SceneSet:
    """Generate n scenes with exact placement ground truth.

    Sticker-style rules: the glyph is centered on the host's salient
    target, with box area proportional to the target area and aspect
    matching the glyph. Filter-style rows are full-canvas overlays.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    rng = np.random.default_rng(seed)
    size = HOST_SIZE

    n_stickers = max(20, n // 10)
    stickers, styles, filter_props = {}, {}, {}
    for i in range(n_stickers):
        sid = f"s{i:05d}"
        if rng.uniform() < FILTER_STICKER_FRACTION:
            img, use_mask, transparency = _draw_filter_texture(rng)
            stickers[sid] = img
            styles[sid] = "filter"
            filter_props[sid] = (use_mask, transparency)
        else:
            stickers[sid] = _draw_glyph(rng)
            styles[sid] = "sticker"

    records, hosts, masks = [], {}, {}
    sticker_ids = sorted(stickers)
    for i in range(n):
        rid = f"r{i:06d}"
        sid = sticker_ids[int(rng.integers(0, n_stickers))]

        # host scene: smooth background plus one salient elliptical target
        bg = _smooth_background(rng, size)
        rx = float(rng.uniform(7, 18))
        ry = float(rng.uniform(7, 18))
        cx = float(rng.uniform(rx + 2, size - rx - 2))
        cy = float(rng.uniform(ry + 2, size - ry - 2))
        target = _ellipse_mask(size, cx, cy, rx, ry)
        color = rng.integers(150, 256, size=3)
        host = np.empty((size, size, 4), dtype=np.uint8)
        host[..., :3] = np.floor(bg + 0.5)
        host[target, :3] = color
        host[..., 3] = 255
        fg = target.astype(np.float32)

        ys, xs = np.nonzero(target)
        cen_x = float((xs + 0.5).mean()) / size
        cen_y = float((ys + 0.5).mean()) / size
        area_frac = float(target.sum()) / (size * size)

        if styles[sid] == "sticker":
            simg = stickers[sid]
            aspect = simg.shape[1] / simg.shape[0]
            area = STICKER_AREA_RATIO * area_frac
            w = min(max(math.sqrt(area * aspect), MIN_GT_DIM), MAX_GT_DIM)
            h = min(max(math.sqrt(area / aspect), MIN_GT_DIM), MAX_GT_DIM)
            rec = PlacementRecord(
                record_id=rid, sticker_id=sid,
                host_ref=f"images/host_{rid}.png",
                sticker_ref=f"images/sticker_{sid}.png",
                x=cen_x - w / 2, y=cen_y - h / 2, w=w, h=h,
                opacity=1.0, rotation_deg=float(rng.uniform(-15, 15)),
                mask_ref=f"images/mask_{rid}.png", style_label="sticker")
        else:
            use_mask, transparency = filter_props[sid]
            rec = PlacementRecord(
                record_id=rid, sticker_id=sid,
                host_ref=f"images/host_{rid}.png",
                sticker_ref=f"images/sticker_{sid}.png",
                x=0.0, y=0.0, w=1.0, h=1.0,
                opacity=FILTER_REDUCED_OPACITY if transparency else 1.0,
                rotation_deg=0.0,
                mask_ref=f"images/mask_{rid}.png" if use_mask else None,
                style_label="filter")
        records.append(rec)
        hosts[rid] = host
        masks[rid] = fg

    return SceneSet(records=records, hosts=hosts, masks=masks, stickers=stickers)


# ---------------------------------------------------------------------------
# on-disk datasets


def write_dataset(scene_set: SceneSet, out_dir, seed: int) -> None:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    write_records(scene_set.records, out / "manifest.jsonl")
    write_split(split_sticker_ids(scene_set.stickers, seed), out / "split.txt")
    for rid, host in scene_set.hosts.items():
        Image.fromarray(host, "RGBA").save(out / f"images/host_{rid}.png")
        m = (scene_set.masks[rid] * 255).astype(np.uint8)
        Image.fromarray(m, "L").save(out / f"images/mask_{rid}.png")
    for sid, img in scene_set.stickers.items():
        Image.fromarray(img, "RGBA").save(out / f"images/sticker_{sid}.png")


def load_dataset(data_dir) -> SceneSet:
    root = Path(data_dir)
    manifest = root / "manifest.jsonl"
    if not manifest.exists():
        raise DataError(f"no manifest.jsonl under {root}")
    records = read_records(manifest)
    hosts, masks, stickers = {}, {}, {}
    for r in records:
        hosts[r.record_id] = np.asarray(
            Image.open(root / r.host_ref).convert("RGBA"), dtype=np.uint8)
        mask_path = root / f"images/mask_{r.record_id}.png"
        if mask_path.exists():
            masks[r.record_id] = np.asarray(
                Image.open(mask_path), dtype=np.float32) / 255.0
        else:
            masks[r.record_id] = np.zeros(hosts[r.record_id].shape[:2], np.float32)
        if r.sticker_id not in stickers:
            stickers[r.sticker_id] = np.asarray(
                Image.open(root / r.sticker_ref).convert("RGBA"), dtype=np.uint8)
    return SceneSet(records=records, hosts=hosts, masks=masks, stickers=stickers)


def load_split(data_dir) -> dict:
    path = Path(data_dir) / "split.txt"
    if not path.exists():
        raise DataError(f"no split.txt under {data_dir}")
    return read_split(path)
