"""Seeded random streams and the small set of dense kernels the denoisers use.

Tensors are plain ``float64`` numpy arrays. Random numbers come from a
counter-based SplitMix64 generator so that any (seed, stream_id) pair can be
evaluated at any counter offset without shared state, which is what lets the
sampler give each chain its own stream and stay batch-size independent.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "ShapeError",
    "RngStream",
    "derive_stream",
    "split",
    "uniform",
    "gaussian",
    "gaussian_many",
    "stream_keys",
    "matmul",
    "softmax_rows",
    "layer_norm",
    "LN_EPS",
]

LN_EPS = 1e-5

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


class ShapeError(ValueError):
    """Raised when tensor shapes do not conform."""

    def __init__(self, op: str, a, b):
        self.op = op
        self.shapes = (tuple(a), tuple(b))
        super().__init__(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


def _mix(z: np.ndarray) -> np.ndarray:
    # SplitMix64 finalizer; uint64 arithmetic wraps modulo 2**64.
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _mix_int(x: int) -> int:
    with np.errstate(over="ignore"):
        return int(_mix(np.array([x & _MASK64], dtype=np.uint64))[0])


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int
    counter: int = 0

    @property
    def key(self) -> int:
        return _stream_key(self.seed, self.stream_id)


def _stream_key(seed: int, stream_id: int) -> int:
    return int(stream_keys(seed, [stream_id])[0])


def stream_keys(seed: int, stream_ids) -> np.ndarray:
    """Per-stream 64-bit keys, vectorised over ``stream_ids``."""
    ids = np.array([int(s) & _MASK64 for s in np.asarray(stream_ids).ravel()], dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(np.uint64(_mix_int(seed)) ^ _mix(ids + np.uint64(0x632BE59BD9B4E019)))


def derive_stream(seed: int, stream_id: int) -> RngStream:
    return RngStream(int(seed) & _MASK64, int(stream_id) & _MASK64, 0)


def split(rng: RngStream, index: int) -> RngStream:
    """Child stream number ``index`` of ``rng``; the parent is not advanced."""
    child = _mix_int((rng.stream_id * 0x2545F4914F6CDD1D + index + 1) & _MASK64) ^ index
    return derive_stream(rng.seed, child)


def _raw_u64(keys: np.ndarray, counter: int, n: int) -> np.ndarray:
    """Raw 64-bit outputs, shape ``(len(keys), n)``."""
    idx = np.arange(counter + 1, counter + 1 + n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = keys[:, None] + idx[None, :] * _GAMMA
        return _mix(z)


def _uniform_keys(keys: np.ndarray, counter: int, n: int) -> np.ndarray:
    bits = _raw_u64(keys, counter, n) >> np.uint64(11)
    return bits.astype(np.float64) * (1.0 / 9007199254740992.0)


def uniform(rng: RngStream, n: int) -> tuple[np.ndarray, RngStream]:
    """``n`` uniform draws in [0, 1) and the advanced stream."""
    keys = np.array([rng.key], dtype=np.uint64)
    u = _uniform_keys(keys, rng.counter, n)[0]
    return u, replace(rng, counter=rng.counter + n)


def _box_muller(u: np.ndarray, n: int) -> np.ndarray:
    u1 = 1.0 - u[:, 0::2]  # (0, 1]
    u2 = u[:, 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.empty((u.shape[0], u1.shape[1] * 2))
    z[:, 0::2] = r * np.cos(theta)
    z[:, 1::2] = r * np.sin(theta)
    return z[:, :n]


def gaussian_many(seed: int, stream_ids, counter: int, shape, keys: np.ndarray | None = None
                  ) -> tuple[np.ndarray, int]:
    """Standard normal draws for many streams sharing one counter.

    Returns an array of shape ``(len(stream_ids), *shape)`` and the new
    counter. Row ``i`` equals ``gaussian(RngStream(seed, stream_ids[i], counter), shape)``.
    ``keys`` may carry precomputed ``stream_keys(seed, stream_ids)``.
    """
    shape = tuple(int(s) for s in shape)
    n = int(np.prod(shape)) if shape else 1
    if keys is None:
        keys = stream_keys(seed, stream_ids)
    if n == 0:
        return np.zeros((len(keys), *shape)), counter
    n_uniform = n + (n & 1)
    u = _uniform_keys(keys, counter, n_uniform)
    z = _box_muller(u, n)
    return z.reshape((len(keys), *shape)), counter + n_uniform


def gaussian(rng: RngStream, shape) -> tuple[np.ndarray, RngStream]:
    """I.i.d. N(0, 1) tensor via Box-Muller on consecutive uniform pairs."""
    z, counter = gaussian_many(rng.seed, [rng.stream_id], rng.counter, shape)
    return z[0], replace(rng, counter=counter)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return a @ b


def softmax_rows(a: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max subtraction."""
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm(a: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm", a.shape, gain.shape)
    mu = a.mean(axis=-1, keepdims=True)
    var = ((a - mu) ** 2).mean(axis=-1, keepdims=True)
    return (a - mu) / np.sqrt(var + eps) * gain + bias
