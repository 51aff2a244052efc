"""Compact convolutional backbone.

4D activations ("Tensor4") are numpy arrays shaped (batch, channels,
height, width), row-major. The backbone is a stack of stride-2 3x3
conv + relu stages; configured tap points expose intermediate feature
maps for multi-scale dense prediction, and the global vector is the
spatial mean of the deepest map.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError
from . import autograd as ag
from .autograd import Var
from .params import ModelParams, fan_in_uniform


@dataclass(frozen=True)
class BackboneSpec:
    input_channels: int
    widths: tuple = (16, 32, 64, 64)
    taps: tuple = (2, 3)          # stage indices whose maps are exported
    kernel: int = 3

    def tap_resolutions(self, input_hw: int):
        """Spatial side length at each tap for a square input."""
        return tuple(input_hw // (2 ** (t + 1)) for t in self.taps)


def init_backbone(params: ModelParams, rng: np.random.Generator,
                  spec: BackboneSpec, prefix: str) -> None:
    c_in = spec.input_channels
    k = spec.kernel
    for i, c_out in enumerate(spec.widths):
        fan = c_in * k * k
        params.add(f"{prefix}.conv{i}.w", fan_in_uniform(rng, (c_out, c_in, k, k), fan))
        params.add(f"{prefix}.conv{i}.b", np.zeros(c_out))
        c_in = c_out


def forward_backbone(vars_: dict, spec: BackboneSpec, prefix: str, x: Var):
    """Run the backbone; returns (tap feature maps, global vector)."""
    if x.shape[1] != spec.input_channels:
        raise InputError(
            f"backbone '{prefix}' expects {spec.input_channels} channels, "
            f"got {x.shape[1]}")
    taps = []
    h = x
    for i in range(len(spec.widths)):
        h = ag.conv2d(h, vars_[f"{prefix}.conv{i}.w"], vars_[f"{prefix}.conv{i}.b"],
                      stride=2, pad=spec.kernel // 2)
        h = ag.relu(h)
        if i in spec.taps:
            taps.append(h)
    return taps, ag.spatial_mean(h)


def init_mlp(params: ModelParams, rng: np.random.Generator,
             dims, prefix: str) -> None:
    """dims = (in, hidden..., out)."""
    for i in range(len(dims) - 1):
        params.add(f"{prefix}.fc{i}.w", fan_in_uniform(rng, (dims[i], dims[i + 1]), dims[i]))
        params.add(f"{prefix}.fc{i}.b", np.zeros(dims[i + 1]))


def forward_mlp(vars_: dict, n_layers: int, prefix: str, x: Var,
                final_activation=None) -> Var:
    h = x
    for i in range(n_layers):
        h = ag.linear(h, vars_[f"{prefix}.fc{i}.w"], vars_[f"{prefix}.fc{i}.b"])
        if i < n_layers - 1:
            h = ag.relu(h)
    if final_activation is not None:
        h = final_activation(h)
    return h


def init_conv_head(params: ModelParams, rng: np.random.Generator,
                   c_in: int, hidden: int, c_out: int, prefix: str) -> None:
    """Two-layer 1x1 convolution head over fused per-anchor features."""
    params.add(f"{prefix}.conv0.w", fan_in_uniform(rng, (hidden, c_in, 1, 1), c_in))
    params.add(f"{prefix}.conv0.b", np.zeros(hidden))
    params.add(f"{prefix}.conv1.w", fan_in_uniform(rng, (c_out, hidden, 1, 1), hidden))
    params.add(f"{prefix}.conv1.b", np.zeros(c_out))


def forward_conv_head(vars_: dict, prefix: str, x: Var) -> Var:
    h = ag.conv2d(x, vars_[f"{prefix}.conv0.w"], vars_[f"{prefix}.conv0.b"],
                  stride=1, pad=0)
    h = ag.relu(h)
    return ag.conv2d(h, vars_[f"{prefix}.conv1.w"], vars_[f"{prefix}.conv1.b"],
                     stride=1, pad=0)
