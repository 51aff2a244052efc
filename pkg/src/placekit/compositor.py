"""Composite rendering: sticker-style box placement and filter-style overlays.

Images are uint8 arrays shaped (H, W, 4) in RGBA order, straight
(non-premultiplied) alpha, blended on stored byte values (no gamma
linearization). All intermediate math runs in float64; final channel
values are rounded half-away-from-zero.

Pixel conventions, shared with the test oracles:
  * rounding: floor(v + 0.5) (values are never negative here)
  * bilinear sampling of an output pixel (i, j) from a (h, w) source uses
    half-pixel centers: sx = (j + 0.5) * w / ow - 0.5 clamped to
    [0, w - 1], then the standard 4-neighbor lerp grouped as
    (1-fy)*((1-fx)*v00 + fx*v01) + fy*((1-fx)*v10 + fx*v11)
  * the target rect of a normalized box on a (H, W) host is
    x0 = floor(x*W + 0.5), w_px = max(1, floor(w*W + 0.5)) (same for y/h)
  * blend: rgb_out = fg*ae + bg*(1-ae); alpha_out = 255*ae + bg_a*(1-ae)
"""
from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import InputError
from .geometry import Box


def load_rgba(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGBA"), dtype=np.uint8)


def save_rgba(image: np.ndarray, path) -> None:
    Image.fromarray(image, mode="RGBA").save(path, format="PNG")


def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.floor(v + 0.5)


def alpha_over(fg_pixel, bg_pixel, effective_alpha: float):
    """Straight-alpha over operator on one pixel's channel values."""
    fg = np.asarray(fg_pixel, dtype=np.float64)
    bg = np.asarray(bg_pixel, dtype=np.float64)
    out = fg * effective_alpha + bg * (1.0 - effective_alpha)
    return _round_half_away(out).astype(np.uint8)


def bilinear_resample(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample (H, W, C) float64 array to (out_h, out_w, C)."""
    src = np.asarray(image, dtype=np.float64)
    h, w = src.shape[:2]
    sy = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    sx = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None, None]
    fx = (sx - x0)[None, :, None]
    v00 = src[y0[:, None], x0[None, :]]
    v01 = src[y0[:, None], x1[None, :]]
    v10 = src[y1[:, None], x0[None, :]]
    v11 = src[y1[:, None], x1[None, :]]
    return (1 - fy) * ((1 - fx) * v00 + fx * v01) \
        + fy * ((1 - fx) * v10 + fx * v11)


def _blend_into(host: np.ndarray, fg: np.ndarray, alpha_e: np.ndarray,
                y0: int, x0: int) -> np.ndarray:
    """Blend fg (float RGBA) into a copy of host at (y0, x0), clipping."""
    out = host.copy()
    H, W = host.shape[:2]
    fh, fw = fg.shape[:2]
    ys, xs = max(0, y0), max(0, x0)
    ye, xe = min(H, y0 + fh), min(W, x0 + fw)
    if ys >= ye or xs >= xe:
        return out
    sub_fg = fg[ys - y0:ye - y0, xs - x0:xe - x0]
    sub_a = alpha_e[ys - y0:ye - y0, xs - x0:xe - x0][..., None]
    bg = host[ys:ye, xs:xe].astype(np.float64)
    rgb = sub_fg[..., :3] * sub_a + bg[..., :3] * (1.0 - sub_a)
    a = 255.0 * sub_a[..., 0] + bg[..., 3] * (1.0 - sub_a[..., 0])
    blended = np.concatenate([rgb, a[..., None]], axis=-1)
    out[ys:ye, xs:xe] = _round_half_away(blended).astype(np.uint8)
    return out


def composite_sticker(host: np.ndarray, sticker: np.ndarray, box: Box,
                      opacity: float = 1.0):
    """Place a sticker at a normalized box on the host.

    Returns (image, clipped_out): clipped_out is True when the box lies
    fully outside the canvas and the host is returned unchanged.
    """
    H, W = host.shape[:2]
    x0 = int(np.floor(box.x * W + 0.5))
    y0 = int(np.floor(box.y * H + 0.5))
    w_px = max(1, int(np.floor(box.w * W + 0.5)))
    h_px = max(1, int(np.floor(box.h * H + 0.5)))
    if x0 + w_px <= 0 or y0 + h_px <= 0 or x0 >= W or y0 >= H:
        return host.copy(), True
    fg = bilinear_resample(sticker, h_px, w_px)
    alpha_e = fg[..., 3] / 255.0 * opacity
    return _blend_into(host, fg, alpha_e, y0, x0), False


def composite_filter(host: np.ndarray, sticker: np.ndarray, use_mask: bool,
                     transparency: bool, mask=None,
                     filter_opacity: float = 0.6) -> np.ndarray:
    """Full-canvas overlay with optional opacity reduction and masking.

    With use_mask, the mask (1 = host foreground) suppresses the overlay:
    its alpha is multiplied by (1 - mask) so the host shows through.
    """
    if use_mask and mask is None:
        raise InputError("use_mask requires a mask")
    H, W = host.shape[:2]
    fg = bilinear_resample(sticker, H, W)
    opacity = filter_opacity if transparency else 1.0
    alpha_e = fg[..., 3] / 255.0 * opacity
    if use_mask:
        m = np.asarray(mask)
        # uint8 masks are byte-scaled; float masks are already in [0, 1]
        m = m.astype(np.float64) / 255.0 if m.dtype == np.uint8 \
            else m.astype(np.float64)
        if m.shape != (H, W):
            raise InputError(f"mask shape {m.shape} does not match host {(H, W)}")
        alpha_e = alpha_e * (1.0 - m)
    return _blend_into(host, fg, alpha_e, 0, 0)
