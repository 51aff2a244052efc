"""Parameter store, seeded initialization, SGD with momentum, weight files.

Weight file layout (little-endian throughout): magic b"SNW1", version u32,
parameter count u32; then per parameter: name length u32, UTF-8 name bytes,
rank u32, one u32 per dimension, raw float32 payload. Round-trips are
bit-exact because weights are held in float32 in memory.
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import DataError, NumericError
from .autograd import Var

MAGIC = b"SNW1"
VERSION = 1


class ModelParams:
    """Named float32 weight arrays with matching gradient buffers."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.weights = {}    # name -> float32 ndarray
        self.grads = {}      # name -> float64 ndarray (accumulators)
        self.velocity = {}   # name -> float32 ndarray (momentum state)

    def add(self, name: str, array) -> None:
        if name in self.weights:
            raise DataError(f"duplicate parameter name: {name}")
        arr = np.asarray(array, dtype=np.float32)
        self.weights[name] = arr
        self.grads[name] = np.zeros(arr.shape, dtype=np.float64)

    def names(self):
        return list(self.weights)

    def as_vars(self, dtype=np.float32):
        """Leaf Vars for one forward/backward pass."""
        return {n: Var(w.astype(dtype, copy=True), name=n)
                for n, w in self.weights.items()}

    def collect_grads(self, vars_: dict) -> None:
        for n, v in vars_.items():
            if v.grad is not None:
                self.grads[n] += v.grad.astype(np.float64)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int):
    """Uniform init with variance 1/fan_in."""
    limit = np.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def sgd_step(params: ModelParams, lr: float, momentum: float = 0.0) -> None:
    """Classic momentum update: v <- momentum*v + g; w <- w - lr*v.

    Gradients are zeroed afterwards. A non-finite gradient aborts and names
    the offending parameter.
    """
    for name, g in params.grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter '{name}'")
    for name, w in params.weights.items():
        v = params.velocity.get(name)
        if v is None:
            v = np.zeros_like(w)
        v = momentum * v + params.grads[name].astype(np.float32)
        params.velocity[name] = v
        w -= np.float32(lr) * v
    params.zero_grads()


def save_weights(params: ModelParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(params.weights)))
        for name, arr in params.weights.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_weights(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise DataError(f"not a weight file (bad magic): {path}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataError(f"unsupported weight file version {version}")
    params = ModelParams()
    off = 12
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=off)
        off += 4 * size
        params.add(name, arr.reshape(shape).copy())
    return params
