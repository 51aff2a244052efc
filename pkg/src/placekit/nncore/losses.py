"""Loss heads: clamped binary cross-entropy and box-regularity penalties."""
from __future__ import annotations

import math

import numpy as np

from .. import geometry
from .autograd import Var

PROB_EPS = 1e-7


def bce(p: float, y: int) -> float:
    """Scalar binary cross-entropy on a clamped probability."""
    p = min(max(p, PROB_EPS), 1.0 - PROB_EPS)
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


def bce_mean(p: Var, y, weights=None) -> Var:
    """Mean BCE of probabilities p against 0/1 labels y.

    With weights (0/1 per element) the mean runs over the weighted elements
    only; an all-zero weight vector yields a constant 0 loss.
    """
    y = np.asarray(y, dtype=p.data.dtype)
    if weights is None:
        weights = np.ones_like(y)
    else:
        weights = np.asarray(weights, dtype=p.data.dtype)
    n = weights.sum()
    pc = np.clip(p.data, PROB_EPS, 1.0 - PROB_EPS)
    if n == 0:
        return Var(np.zeros((), dtype=p.data.dtype), (p,), lambda g: None)
    terms = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    out = (weights * terms).sum() / n
    inside = (p.data > PROB_EPS) & (p.data < 1.0 - PROB_EPS)

    def bwd(g):
        dp = weights * (pc - y) / (pc * (1.0 - pc)) / n
        p.accumulate(g * dp * inside)

    return Var(np.asarray(out), (p,), bwd)


def box_alignment_penalty(reg_pos: Var, anchors, grid, gt, kind="diou",
                          weights=None) -> Var:
    """Weighted sum of (1 - DIoU) (or 1 - IoU) between decoded boxes and gt.

    reg_pos holds one (dx, dy, sw, sh) row per positive anchor; the backward
    pass chains the analytic box gradient through the decode transform.
    Extents clamped during decode get zero scale gradient.

    gt may be one Box for all rows or a sequence of per-row boxes; weights
    default to 1/n (the plain mean).
    """
    data = reg_pos.data
    n = data.shape[0]
    gts = [gt] * n if isinstance(gt, geometry.Box) else list(gt)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float)
    grad_fn = geometry.diou_grad if kind == "diou" else geometry.iou_grad
    val_fn = geometry.diou if kind == "diou" else geometry.iou

    total = 0.0
    dreg = np.zeros_like(data)
    for i, anchor in enumerate(anchors):
        rows, cols = grid.scales[anchor.scale_index]
        t = geometry.RegressionTarget(*[float(v) for v in data[i]])
        box = geometry.decode_placement(anchor, grid, t)
        total += w[i] * (1.0 - val_fn(box, gts[i]))
        gx, gy, gw, gh = grad_fn(box, gts[i])
        # box.x = cx - w/2 with cx = center + dx/cols, w = exp(sw)
        dreg[i, 0] = w[i] * gx / cols
        dreg[i, 1] = w[i] * gy / rows
        w_clamped = math.exp(t.sw) < geometry.MIN_DECODED_DIM
        h_clamped = math.exp(t.sh) < geometry.MIN_DECODED_DIM
        dreg[i, 2] = 0.0 if w_clamped else w[i] * box.w * (gw - gx / 2.0)
        dreg[i, 3] = 0.0 if h_clamped else w[i] * box.h * (gh - gy / 2.0)

    def bwd(g):
        reg_pos.accumulate(g * (-dreg))

    return Var(np.asarray(total, dtype=data.dtype), (reg_pos,), bwd)
