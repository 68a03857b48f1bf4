"""Binary checkpoint format for the toy denoiser.

Layout, all little-endian::

    b"STGCKPT1"                       magic, 8 bytes
    u32 version                       = 1
    u32 L, d, H, f, h, w, C           layers, dim, heads, frames, height, width, classes
    u32 channels, attention_mode, mlp_hidden   (attention_mode: 0 factorized, 1 joint)
    f64 weights                       every tensor of ``param_specs`` in order, C-contiguous
"""
from __future__ import annotations

import struct

import numpy as np

from .files import atomic_write_bytes
from .net import Arch, TransformerDenoiser, param_specs

__all__ = ["MAGIC", "VERSION", "CheckpointError", "to_bytes", "from_bytes", "save", "load"]

MAGIC = b"STGCKPT1"
VERSION = 1
_HEADER = struct.Struct("<8s11I")
_MODES = ("factorized", "joint")


class CheckpointError(ValueError):
    """Malformed checkpoint; ``reason`` is a short machine-readable tag."""

    def __init__(self, reason: str, detail: str):
        super().__init__(f"STGCKPT1 checkpoint {reason}: {detail}")
        self.reason = reason


def to_bytes(model: TransformerDenoiser) -> bytes:
    a = model.arch
    head = _HEADER.pack(MAGIC, VERSION, a.layers, a.dim, a.heads, a.frames, a.height, a.width,
                        a.n_classes, a.channels, _MODES.index(a.attention_mode), a.mlp_hidden)
    body = b"".join(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes()
                    for name, _ in param_specs(a))
    return head + body


def from_bytes(data: bytes) -> TransformerDenoiser:
    if len(data) < _HEADER.size:
        raise CheckpointError("truncated", f"{len(data)} bytes is shorter than the {_HEADER.size}-byte header")
    magic, version, L, d, H, f, h, w, C, ch, mode, hid = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("bad_magic", f"expected {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise CheckpointError("bad_version", f"unsupported version {version}")
    if mode >= len(_MODES):
        raise CheckpointError("bad_header", f"attention_mode code {mode}")
    try:
        arch = Arch(layers=L, dim=d, heads=H, attention_mode=_MODES[mode], frames=f, height=h,
                    width=w, channels=ch, n_classes=C, mlp_hidden=hid)
    except ValueError as e:
        raise CheckpointError("bad_header", str(e)) from None
    specs = param_specs(arch)
    need = sum(int(np.prod(s)) for _, s in specs) * 8
    body = memoryview(data)[_HEADER.size:]
    if len(body) != need:
        kind = "truncated" if len(body) < need else "trailing_bytes"
        raise CheckpointError(kind, f"weight block is {len(body)} bytes, expected {need}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(flat)):
        raise CheckpointError("corrupt", "non-finite weight values")
    params, off = {}, 0
    for name, shape in specs:
        n = int(np.prod(shape))
        params[name] = flat[off:off + n].reshape(shape).copy()
        off += n
    return TransformerDenoiser(arch, params)


def save(model: TransformerDenoiser, path) -> None:
    atomic_write_bytes(path, to_bytes(model))


def load(path) -> TransformerDenoiser:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
