"""Type classifier: sticker image + two scalar features -> style decision.

A compact backbone summarizes the RGBA sticker; its global feature is
joined with the has_alpha flag and the elongation feature, then a
three-layer MLP with sigmoid outputs produces probabilities for
is_filter, use_mask and transparency.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nncore
from .compositor import bilinear_resample
from .config import RunConfig
from .errors import DataError, InputError
from .geometry import aspect_ratio_feature
from .nncore import autograd as ag
from .nncore.autograd import Var

BACKBONE = nncore.BackboneSpec(input_channels=4)
MLP_PREFIX = "cls.mlp"
BACKBONE_PREFIX = "cls.bb"
MLP_LAYERS = 3


@dataclass(frozen=True)
class StickerInput:
    """Classifier input: RGBA pixels plus the two scalar features."""

    rgba: np.ndarray          # (H, W, 4) uint8
    has_alpha: int
    aspect_feature: float

    def __post_init__(self):
        if self.rgba.ndim != 3 or self.rgba.shape[2] != 4:
            raise InputError(f"expected (H, W, 4) rgba, got {self.rgba.shape}")
        if self.has_alpha not in (0, 1):
            raise InputError("has_alpha must be 0 or 1")
        if self.has_alpha == 0 and not np.all(self.rgba[..., 3] == 255):
            raise InputError("has_alpha=0 requires a constant-255 alpha plane")


@dataclass(frozen=True)
class TypeDecision:
    p_filter: float
    p_mask: float
    p_transparency: float
    is_filter: bool
    use_mask: bool
    transparency: bool


def make_sticker_input(image: np.ndarray) -> StickerInput:
    """Build a StickerInput from an RGB or RGBA image array."""
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] not in (3, 4):
        raise InputError(f"expected (H, W, 3|4) image, got {img.shape}")
    if img.shape[2] == 3:
        alpha = np.full(img.shape[:2] + (1,), 255, np.uint8)
        img = np.concatenate([img, alpha], axis=2)
    has_alpha = 0 if np.all(img[..., 3] == 255) else 1
    return StickerInput(rgba=img, has_alpha=has_alpha,
                        aspect_feature=aspect_ratio_feature(img.shape[1], img.shape[0]))


def _prepare(rgba: np.ndarray, config: RunConfig, rng=None) -> np.ndarray:
    """Resize, crop (random in training, centered otherwise), scale to [0,1]."""
    resized = bilinear_resample(rgba, config.classifier_resize, config.classifier_resize)
    crop = config.classifier_crop
    margin = config.classifier_resize - crop
    if rng is None:
        oy = ox = margin // 2
    else:
        oy, ox = (int(rng.integers(0, margin + 1)) for _ in range(2))
    window = resized[oy:oy + crop, ox:ox + crop]
    return (window.transpose(2, 0, 1) / 255.0).astype(np.float32)


def init_classifier(config: RunConfig) -> nncore.ModelParams:
    params = nncore.ModelParams(config.seed)
    rng = np.random.default_rng(config.seed)
    nncore.init_backbone(params, rng, BACKBONE, BACKBONE_PREFIX)
    feat = BACKBONE.widths[-1] + 2
    nncore.init_mlp(params, rng, (feat, 64, 32, 3), MLP_PREFIX)
    return params


def _forward(vars_: dict, batch_chw: np.ndarray, scalars: np.ndarray) -> Var:
    """scalars: (B, 2) = (has_alpha, aspect_feature). Returns (B, 3) probs."""
    _, gvec = nncore.forward_backbone(vars_, BACKBONE, BACKBONE_PREFIX,
                                     Var(batch_chw, needs=False))
    joined = ag.concat([gvec, Var(scalars.astype(batch_chw.dtype), needs=False)], axis=1)
    return nncore.forward_mlp(vars_, MLP_LAYERS, MLP_PREFIX, joined,
                              final_activation=ag.sigmoid)


def classify(params: nncore.ModelParams, sticker: StickerInput,
             thresholds, config: Optional[RunConfig] = None) -> TypeDecision:
    """Deterministic inference: center crop, probabilities, thresholding."""
    config = config or RunConfig()
    chw = _prepare(sticker.rgba, config)[None]
    scalars = np.array([[sticker.has_alpha, sticker.aspect_feature]])
    probs = _forward(params.as_vars(), chw, scalars).data[0]
    t = tuple(thresholds)
    return TypeDecision(
        p_filter=float(probs[0]), p_mask=float(probs[1]),
        p_transparency=float(probs[2]),
        is_filter=bool(probs[0] >= t[0]),
        use_mask=bool(probs[1] >= t[1]),
        transparency=bool(probs[2] >= t[2]),
    )


@dataclass(frozen=True)
class ClassifierExample:
    sticker: StickerInput
    is_filter: int
    use_mask: int          # meaningful only when is_filter == 1
    transparency: int      # meaningful only when is_filter == 1


def examples_from_scenes(scene_set, sticker_ids=None):
    """One training row per record whose sticker is in sticker_ids."""
    out = []
    for r in scene_set.records:
        if sticker_ids is not None and r.sticker_id not in sticker_ids:
            continue
        out.append(ClassifierExample(
            sticker=make_sticker_input(scene_set.stickers[r.sticker_id]),
            is_filter=int(r.style_label == "filter"),
            use_mask=int(r.mask_ref is not None and r.style_label == "filter"),
            transparency=int(r.opacity < 1.0),
        ))
    return out


def accuracy(params, examples, thresholds, config=None) -> float:
    """Fraction of examples whose is_filter decision matches the label."""
    hits = 0
    for ex in examples:
        d = classify(params, ex.sticker, thresholds, config)
        hits += int(d.is_filter == bool(ex.is_filter))
    return hits / len(examples)


def train_classifier(examples, config: RunConfig, params=None):
    """Train on ClassifierExample rows; returns (params, history).

    The loss sums three BCE heads; mask/transparency labels contribute
    only on filter-style rows, where they are defined.  Pass params to
    resume from existing weights instead of a fresh init.
    """
    labels = {ex.is_filter for ex in examples}
    if labels != {0, 1}:
        raise DataError(
            "classifier training needs both styles present; "
            f"got only is_filter={sorted(labels)}")
    if params is None:
        params = init_classifier(config)
    rng = np.random.default_rng(config.seed)
    n = len(examples)
    history = []
    for epoch in range(config.epochs_classifier):
        order = rng.permutation(n)
        epoch_loss, correct = 0.0, 0
        for start in range(0, n, config.batch_size):
            batch = [examples[i] for i in order[start:start + config.batch_size]]
            chw = np.stack([_prepare(ex.sticker.rgba, config, rng) for ex in batch])
            scalars = np.array([[ex.sticker.has_alpha, ex.sticker.aspect_feature]
                                for ex in batch])
            y = np.array([[ex.is_filter, ex.use_mask, ex.transparency]
                          for ex in batch], dtype=np.float64)
            w_filter = y[:, 0]

            vars_ = params.as_vars()
            probs = _forward(vars_, chw, scalars)
            p = probs.data
            head_losses = []
            for col, weights in ((0, None), (1, w_filter), (2, w_filter)):
                sl = ag.reshape(_col(probs, col), (len(batch),))
                head_losses.append(nncore.bce_mean(sl, y[:, col], weights=weights))
            loss = ag.add(ag.add(head_losses[0], head_losses[1]), head_losses[2])
            ag.backward(loss)
            params.collect_grads(vars_)
            nncore.sgd_step(params, config.lr_classifier, config.momentum)

            epoch_loss += float(loss.data) * len(batch)
            correct += int(((p[:, 0] >= 0.5) == (y[:, 0] >= 0.5)).sum())
        history.append({"epoch": epoch, "loss": epoch_loss / n,
                        "train_accuracy": correct / n})
    return params, history


def _col(x: Var, col: int) -> Var:
    def bwd(g):
        full = np.zeros_like(x.data)
        full[:, col] = g.reshape(-1)
        x.accumulate(full)

    return Var(x.data[:, col].copy(), (x,), bwd)
