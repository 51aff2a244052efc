"""Box geometry: IoU/DIoU with analytic gradients, anchor grids, target codecs.

All boxes live in normalized host coordinates: x, y are the top-left corner
with (0, 0) at the image's top-left, w and h are positive extents. Boxes may
extend beyond [0, 1] (oversized overlays are legal data).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import InputError

# Decoded box dimensions never collapse below this.
MIN_DECODED_DIM = 1e-4


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle (top-left corner + extents), normalized units."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for v in (self.x, self.y, self.w, self.h):
            if not math.isfinite(v):
                raise InputError(f"non-finite box field: {self!r}")
        if self.w <= 0 or self.h <= 0:
            raise InputError(f"box needs positive extents: w={self.w}, h={self.h}")

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    def contains_point(self, px: float, py: float) -> bool:
        """Half-open containment: [x, x+w) x [y, y+h)."""
        return self.x <= px < self.x + self.w and self.y <= py < self.y + self.h


@dataclass(frozen=True)
class AnchorCell:
    scale_index: int
    row: int
    col: int
    center_x: float
    center_y: float


@dataclass(frozen=True)
class AnchorGrid:
    """Flat list of candidate placement cells over one or more grid scales."""

    scales: tuple
    anchors: tuple

    def __len__(self) -> int:
        return len(self.anchors)


@dataclass(frozen=True)
class RegressionTarget:
    """Per-anchor regression parameterization.

    dx, dy are the offset of the box center from the anchor center measured
    in cell units of the anchor's scale; sw, sh are log box extents.
    """

    dx: float
    dy: float
    sw: float
    sh: float


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    # roundoff in the edge arithmetic can push the ratio a few ulp past 1
    return min(1.0, inter / (a.area + b.area - inter))


def diou(a: Box, b: Box) -> float:
    """Distance-IoU: IoU minus squared center distance over squared
    enclosing-box diagonal. Range [-1, 1], equal to 1 only for identical
    boxes."""
    rho2 = (a.cx - b.cx) ** 2 + (a.cy - b.cy) ** 2
    ew = max(a.x + a.w, b.x + b.w) - min(a.x, b.x)
    eh = max(a.y + a.h, b.y + b.h) - min(a.y, b.y)
    c2 = ew * ew + eh * eh
    if c2 == 0.0:
        return 1.0
    return iou(a, b) - rho2 / c2


def _iou_terms_grad(a: Box, b: Box):
    """Gradient pieces shared by iou/diou: returns (iou, d_iou[4]).

    Ties between coincident edges take the one-sided derivative from the
    interior (>= / <= selections below); the choice is deterministic.
    """
    ar, ab_ = a.x + a.w, a.y + a.h
    br, bb = b.x + b.w, b.y + b.h
    ix = min(ar, br) - max(a.x, b.x)
    iy = min(ab_, bb) - max(a.y, b.y)
    area_a = a.area
    if ix <= 0 or iy <= 0:
        return 0.0, [0.0, 0.0, 0.0, 0.0]
    inter = ix * iy
    union = area_a + b.area - inter

    # selection indicators for which box owns each intersection edge
    sel_l = 1.0 if a.x >= b.x else 0.0   # d max(ax,bx) / d ax
    sel_r = 1.0 if ar <= br else 0.0     # d min(ar,br) / d ar
    sel_t = 1.0 if a.y >= b.y else 0.0
    sel_b = 1.0 if ab_ <= bb else 0.0

    di_dx = iy * (sel_r - sel_l)         # ar moves with x, left edge too
    di_dy = ix * (sel_b - sel_t)
    di_dw = iy * sel_r
    di_dh = ix * sel_b

    da_dx, da_dy = 0.0, 0.0
    da_dw, da_dh = a.h, a.w

    grad = []
    for di, da in ((di_dx, da_dx), (di_dy, da_dy), (di_dw, da_dw), (di_dh, da_dh)):
        du = da - di
        grad.append((di * union - inter * du) / (union * union))
    return inter / union, grad


def iou_grad(a: Box, b_fixed: Box):
    """d IoU / d (a.x, a.y, a.w, a.h) holding b fixed."""
    _, g = _iou_terms_grad(a, b_fixed)
    return tuple(g)


def diou_grad(a: Box, b_fixed: Box):
    """Analytic gradient of diou(a, b_fixed) with respect to a's parameters.

    At configurations where an edge of a exactly coincides with an edge of
    b the function is not differentiable; the one-sided derivative from the
    interior is returned (same tie rule as _iou_terms_grad).
    """
    b = b_fixed
    _, g_iou = _iou_terms_grad(a, b)

    dcx = a.cx - b.cx
    dcy = a.cy - b.cy
    rho2 = dcx * dcx + dcy * dcy

    ar, ab_ = a.x + a.w, a.y + a.h
    br, bb = b.x + b.w, b.y + b.h
    ew = max(ar, br) - min(a.x, b.x)
    eh = max(ab_, bb) - min(a.y, b.y)
    c2 = ew * ew + eh * eh
    if c2 == 0.0:
        return (0.0, 0.0, 0.0, 0.0)

    sel_el = 1.0 if a.x <= b.x else 0.0  # d min(ax,bx) / d ax
    sel_er = 1.0 if ar >= br else 0.0    # d max(ar,br) / d ar
    sel_et = 1.0 if a.y <= b.y else 0.0
    sel_eb = 1.0 if ab_ >= bb else 0.0

    dew = [sel_er - sel_el, 0.0, sel_er, 0.0]       # d ew / d (x,y,w,h)
    deh = [0.0, sel_eb - sel_et, 0.0, sel_eb]
    drho = [2 * dcx, 2 * dcy, dcx, dcy]

    out = []
    for i in range(4):
        dc2 = 2 * ew * dew[i] + 2 * eh * deh[i]
        d_pen = (drho[i] * c2 - rho2 * dc2) / (c2 * c2)
        out.append(g_iou[i] - d_pen)
    return tuple(out)


def aspect_ratio_feature(w: float, h: float) -> float:
    """Elongation feature: 0 for squares, approaching 1 for thin strips."""
    if w <= 0 or h <= 0:
        raise InputError(f"dimensions must be positive: {w}x{h}")
    return (1.0 - min(w, h) / max(w, h)) ** 2


def build_anchor_grid(scales: Sequence) -> AnchorGrid:
    """Build the flat anchor list for the given (rows, cols) scales.

    Anchor centers sit at cell midpoints; ordering is scale-major,
    row-major within a scale.
    """
    scales = tuple((int(r), int(c)) for r, c in scales)
    if not scales:
        raise InputError("at least one scale required")
    anchors = []
    for si, (rows, cols) in enumerate(scales):
        if rows < 1 or cols < 1:
            raise InputError(f"scale {si} needs rows,cols >= 1, got {rows}x{cols}")
        for row in range(rows):
            for col in range(cols):
                anchors.append(AnchorCell(
                    scale_index=si, row=row, col=col,
                    center_x=(col + 0.5) / cols,
                    center_y=(row + 0.5) / rows,
                ))
    return AnchorGrid(scales=scales, anchors=tuple(anchors))


def assign_positives(grid: AnchorGrid, gt: Box) -> list:
    """Anchor i is positive iff its center falls inside gt (half-open)."""
    return [gt.contains_point(a.center_x, a.center_y) for a in grid.anchors]


def encode_target(anchor: AnchorCell, grid: AnchorGrid, gt: Box) -> RegressionTarget:
    """Encode gt relative to an anchor: cell-unit center offsets, log extents."""
    rows, cols = grid.scales[anchor.scale_index]
    return RegressionTarget(
        dx=(gt.cx - anchor.center_x) * cols,
        dy=(gt.cy - anchor.center_y) * rows,
        sw=math.log(gt.w),
        sh=math.log(gt.h),
    )


def decode_placement(anchor: AnchorCell, grid: AnchorGrid, t: RegressionTarget) -> Box:
    """Exact inverse of encode_target; extents clamped to MIN_DECODED_DIM."""
    rows, cols = grid.scales[anchor.scale_index]
    w = max(math.exp(t.sw), MIN_DECODED_DIM)
    h = max(math.exp(t.sh), MIN_DECODED_DIM)
    cx = anchor.center_x + t.dx / cols
    cy = anchor.center_y + t.dy / rows
    return Box(x=cx - w / 2.0, y=cy - h / 2.0, w=w, h=h)
