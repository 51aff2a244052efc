"""Sticker-style placement predictor.

Two backbones (host with a fifth foreground-mask channel, sticker RGBA)
feed a dense per-anchor head: at every cell of each tap feature map the
local feature is fused with global context vectors from both branches,
then a confidence head and a box-regression head (two 1x1 conv layers
each) score and refine the candidate placement. The anchor with the
highest confidence wins.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nncore
from .compositor import bilinear_resample
from .config import RunConfig
from .errors import DataError, InputError
from .geometry import (AnchorGrid, Box, RegressionTarget, assign_positives,
                       build_anchor_grid, decode_placement, diou,
                       encode_target)
from .nncore import autograd as ag
from .nncore.autograd import Var

HOST_BACKBONE = nncore.BackboneSpec(input_channels=5)
STICKER_BACKBONE = nncore.BackboneSpec(input_channels=4)
HEAD_HIDDEN = 64


@dataclass(frozen=True)
class HostInput:
    """Host image plus its foreground mask (fifth input channel)."""

    rgba: np.ndarray       # (H, W, 4) uint8
    fg_mask: np.ndarray    # (H, W) float in [0, 1]

    def __post_init__(self):
        if self.rgba.ndim != 3 or self.rgba.shape[2] != 4:
            raise InputError(f"expected (H, W, 4) host, got {self.rgba.shape}")
        if self.fg_mask.shape != self.rgba.shape[:2]:
            raise InputError(
                f"mask {self.fg_mask.shape} does not match host "
                f"{self.rgba.shape[:2]}")


@dataclass(frozen=True)
class PlacementOutput:
    confidences: np.ndarray   # (N,) probabilities
    targets: np.ndarray       # (N, 4) regression rows
    chosen: int               # argmax of confidences, ties -> lowest index
    box: Box


def default_grid(config: RunConfig) -> AnchorGrid:
    return build_anchor_grid(config.anchor_scales)


def init_placement(config: RunConfig) -> nncore.ModelParams:
    params = nncore.ModelParams(config.seed)
    rng = np.random.default_rng(config.seed)
    nncore.init_backbone(params, rng, HOST_BACKBONE, "pl.host")
    nncore.init_backbone(params, rng, STICKER_BACKBONE, "pl.sticker")
    fused = HOST_BACKBONE.widths[-1] * 2 + STICKER_BACKBONE.widths[-1]
    nncore.init_conv_head(params, rng, fused, HEAD_HIDDEN, 1, "pl.conf")
    nncore.init_conv_head(params, rng, fused, HEAD_HIDDEN, 4, "pl.reg")
    return params


def prepare_host(host: HostInput, config: RunConfig) -> np.ndarray:
    """(5, R, R) float32: scaled RGBA channels plus the mask."""
    r = config.resolution
    if host.rgba.shape[:2] != (r, r):
        raise InputError(
            f"host must be pre-resized to {r}x{r}, got {host.rgba.shape[:2]}")
    chw = host.rgba.transpose(2, 0, 1) / 255.0
    return np.concatenate([chw, host.fg_mask[None]], axis=0).astype(np.float32)


def prepare_sticker(rgba: np.ndarray, config: RunConfig) -> np.ndarray:
    r = config.resolution
    if rgba.shape[:2] != (r, r):
        rgba = bilinear_resample(rgba, r, r)
    return (np.asarray(rgba).transpose(2, 0, 1) / 255.0).astype(np.float32)


def forward_raw(vars_: dict, host_chw: np.ndarray, sticker_chw: np.ndarray,
                grid: AnchorGrid):
    """Dense forward pass. Returns (conf (B, N) Var, reg (B, N, 4) Var)."""
    b = host_chw.shape[0]
    host_taps, host_g = nncore.forward_backbone(vars_, HOST_BACKBONE, "pl.host",
                                                Var(host_chw, needs=False))
    _, sticker_g = nncore.forward_backbone(vars_, STICKER_BACKBONE, "pl.sticker",
                                           Var(sticker_chw, needs=False))
    if len(host_taps) != len(grid.scales):
        raise InputError(
            f"grid has {len(grid.scales)} scales but backbone exports "
            f"{len(host_taps)} taps")
    conf_parts, reg_parts = [], []
    for tap, (rows, cols) in zip(host_taps, grid.scales):
        h, w = tap.shape[2:]
        if (h, w) != (rows, cols):
            raise InputError(
                f"tap map {h}x{w} does not match grid scale {rows}x{cols}")
        fused = ag.concat([tap,
                           ag.broadcast_to_map(host_g, h, w),
                           ag.broadcast_to_map(sticker_g, h, w)], axis=1)
        conf = ag.sigmoid(nncore.forward_conv_head(vars_, "pl.conf", fused))
        reg = nncore.forward_conv_head(vars_, "pl.reg", fused)
        conf_parts.append(ag.reshape(conf, (b, h * w)))
        reg_parts.append(ag.reshape(ag.permute(reg, (0, 2, 3, 1)), (b, h * w, 4)))
    return ag.concat(conf_parts, axis=1), ag.concat(reg_parts, axis=1)


def predict_placement(params: nncore.ModelParams, host: HostInput,
                      sticker_rgba: np.ndarray,
                      config: RunConfig = None) -> PlacementOutput:
    config = config or RunConfig()
    grid = default_grid(config)
    conf, reg = forward_raw(params.as_vars(),
                            prepare_host(host, config)[None],
                            prepare_sticker(sticker_rgba, config)[None], grid)
    return _decode_output(conf.data[0], reg.data[0], grid)


def _decode_output(conf: np.ndarray, reg: np.ndarray, grid: AnchorGrid):
    chosen = int(np.argmax(conf))
    anchor = grid.anchors[chosen]
    box = decode_placement(anchor, grid, RegressionTarget(*map(float, reg[chosen])))
    return PlacementOutput(confidences=conf, targets=reg, chosen=chosen, box=box)


def _positive_labels(grid: AnchorGrid, gt: Box):
    """assign_positives with the nearest-center fallback for tiny boxes."""
    mask = assign_positives(grid, gt)
    if not any(mask):
        d2 = [(a.center_x - gt.cx) ** 2 + (a.center_y - gt.cy) ** 2
              for a in grid.anchors]
        mask[int(np.argmin(d2))] = True
    return mask


def placement_loss(conf: Var, reg: Var, grid: AnchorGrid, gts, lam: float,
                   kind: str = "diou") -> Var:
    """Batch loss: mean over samples of
    mean-BCE(all anchors) + lam * mean over positive anchors of (1 - DIoU).
    """
    b, n = conf.shape
    gts = list(gts)
    if len(gts) != b:
        raise InputError(f"{len(gts)} ground-truth boxes for batch of {b}")
    labels = np.zeros((b, n))
    batch_idx, row_idx, row_gts, row_w = [], [], [], []
    for s, gt in enumerate(gts):
        mask = _positive_labels(grid, gt)
        pos = [i for i, m in enumerate(mask) if m]
        labels[s, :] = mask
        for i in pos:
            batch_idx.append(s)
            row_idx.append(i)
            row_gts.append(gt)
            row_w.append(1.0 / (len(pos) * b))
    bce_term = nncore.bce_mean(ag.reshape(conf, (b * n,)), labels.reshape(-1))
    reg_rows = ag.gather_rows(reg, batch_idx, row_idx)
    anchors = [grid.anchors[i] for i in row_idx]
    penalty = nncore.box_alignment_penalty(reg_rows, anchors, grid, row_gts,
                                           kind=kind, weights=row_w)
    return ag.add(bce_term, ag.scale(penalty, lam))


# ---------------------------------------------------------------------------
# training


def _sticker_records(scene_set):
    return [r for r in scene_set.records if r.style_label == "sticker"]


def _prep_inputs(scene_set, records, config):
    hosts, stickers = {}, {}
    sticker_cache = {}
    for r in records:
        hosts[r.record_id] = prepare_host(
            HostInput(rgba=scene_set.hosts[r.record_id],
                      fg_mask=scene_set.masks[r.record_id]), config)
        if r.sticker_id not in sticker_cache:
            sticker_cache[r.sticker_id] = prepare_sticker(
                scene_set.stickers[r.sticker_id], config)
        stickers[r.record_id] = sticker_cache[r.sticker_id]
    return hosts, stickers


def mean_diou(params, records, hosts, stickers, grid, batch_size=32) -> float:
    """Mean DIoU of predicted vs ground-truth boxes over records."""
    vars_ = params.as_vars()
    scores = []
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        hb = np.stack([hosts[r.record_id] for r in chunk])
        sb = np.stack([stickers[r.record_id] for r in chunk])
        conf, reg = forward_raw(vars_, hb, sb, grid)
        for i, r in enumerate(chunk):
            out = _decode_output(conf.data[i], reg.data[i], grid)
            scores.append(diou(out.box, Box(r.x, r.y, r.w, r.h)))
    return float(np.mean(scores))


def train_placement(scene_set, config: RunConfig, split=None, params=None):
    """Train on a SceneSet's sticker-style records; returns (params, history).

    split, when given, maps sticker_id -> train/val/test; only train
    records are optimized and val records are scored each epoch.
    Pass params to resume from existing weights instead of a fresh init.
    """
    records = _sticker_records(scene_set)
    if not records:
        raise DataError("no sticker-style records to train on")
    if split:
        train_recs = [r for r in records if split.get(r.sticker_id) == "train"]
        val_recs = [r for r in records if split.get(r.sticker_id) == "val"]
    else:
        train_recs, val_recs = records, []
    if not train_recs:
        raise DataError("empty training split")

    grid = default_grid(config)
    hosts, stickers = _prep_inputs(scene_set, train_recs + val_recs, config)
    gts = {r.record_id: Box(r.x, r.y, r.w, r.h) for r in train_recs}

    if params is None:
        params = init_placement(config)
    rng = np.random.default_rng(config.seed)
    history = []
    best_val, best_weights = -np.inf, None
    for epoch in range(config.epochs_placement):
        order = rng.permutation(len(train_recs))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_recs[i] for i in order[start:start + config.batch_size]]
            hb = np.stack([hosts[r.record_id] for r in batch])
            sb = np.stack([stickers[r.record_id] for r in batch])
            vars_ = params.as_vars()
            conf, reg = forward_raw(vars_, hb, sb, grid)
            loss = placement_loss(conf, reg, grid,
                                  [gts[r.record_id] for r in batch],
                                  lam=config.lam, kind=config.loss_kind)
            ag.backward(loss)
            params.collect_grads(vars_)
            nncore.sgd_step(params, config.lr_placement, config.momentum)
            epoch_loss += float(loss.data) * len(batch)
        entry = {"epoch": epoch, "loss": epoch_loss / len(train_recs),
                 "train_diou": mean_diou(params, train_recs[:200], hosts,
                                         stickers, grid)}
        if val_recs:
            entry["val_diou"] = mean_diou(params, val_recs, hosts, stickers, grid)
            if entry["val_diou"] > best_val:
                best_val = entry["val_diou"]
                best_weights = {k: v.copy() for k, v in params.weights.items()}
        history.append(entry)
    # keep the best-validation epoch's weights when a split was given
    if best_weights is not None:
        params.weights = best_weights
    return params, history


def evaluate_on_records(params, scene_set, records, config: RunConfig):
    """Predicted boxes for a record list (inference path, batched)."""
    hosts, stickers = _prep_inputs(scene_set, records, config)
    grid = default_grid(config)
    vars_ = params.as_vars()
    boxes = {}
    for start in range(0, len(records), 32):
        chunk = records[start:start + 32]
        hb = np.stack([hosts[r.record_id] for r in chunk])
        sb = np.stack([stickers[r.record_id] for r in chunk])
        conf, reg = forward_raw(vars_, hb, sb, grid)
        for i, r in enumerate(chunk):
            boxes[r.record_id] = _decode_output(conf.data[i], reg.data[i], grid).box
    return boxes
