"""Output files: atomic writes, PGM frames and grids, metrics and loss tables."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = [
    "atomic_write_bytes",
    "atomic_write_text",
    "write_json",
    "to_pixels",
    "pgm_bytes",
    "read_pgm",
    "export_frames",
    "frame_grid",
    "write_metrics",
    "write_loss_curve",
]


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def to_pixels(frame: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to bytes with round-half-up: floor(clamp((v+1)/2, 0, 1) * 255 + 0.5)."""
    v = np.asarray(frame, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot export non-finite pixel values")
    return np.floor(np.clip((v + 1.0) / 2.0, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def pgm_bytes(image: np.ndarray) -> bytes:
    """Binary P5 PGM, maxval 255, of a 2-D array in [-1, 1]."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {img.shape}")
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + to_pixels(img).tobytes()


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or parts[2] != b"255":
        raise ValueError(f"{path}: not a P5 PGM with maxval 255")
    w, h = (int(s) for s in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def export_frames(video: np.ndarray, out_dir) -> list[Path]:
    """One PGM per frame (``frame_0000.pgm`` ...); channels are averaged."""
    v = np.asarray(video, dtype=np.float64)
    if v.ndim != 4:
        raise ValueError(f"video must be [frames, channels, h, w], got shape {v.shape}")
    out_dir = Path(out_dir)
    paths = []
    for i, frame in enumerate(v.mean(axis=1)):
        p = out_dir / f"frame_{i:04d}.pgm"
        atomic_write_bytes(p, pgm_bytes(frame))
        paths.append(p)
    return paths


def frame_grid(videos: np.ndarray, pad: int = 1) -> np.ndarray:
    """Tile clips into one image: a row per clip, frames left to right, gaps at -1."""
    v = np.asarray(videos, dtype=np.float64).mean(axis=2)     # (n, f, h, w)
    n, f, h, w = v.shape
    grid = -np.ones((n * (h + pad) - pad, f * (w + pad) - pad))
    for i in range(n):
        for j in range(f):
            grid[i * (h + pad):i * (h + pad) + h, j * (w + pad):j * (w + pad) + w] = v[i, j]
    return grid


def write_metrics(rows, csv_path, json_path=None) -> None:
    """CSV with a header in row-field order, plus a JSON mirror."""
    from .sweep import METRIC_FIELDS
    dicts = [r.to_dict() for r in rows]
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=METRIC_FIELDS, lineterminator="\n")
    wr.writeheader()
    for d in dicts:
        wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in d.items()})
    atomic_write_text(csv_path, buf.getvalue())
    if json_path is not None:
        write_json(json_path, {"fields": list(METRIC_FIELDS), "rows": dicts})


def write_loss_curve(losses, path) -> None:
    lines = ["step,loss"] + [f"{i},{float(l)!r}" for i, l in enumerate(losses)]
    atomic_write_text(path, "\n".join(lines) + "\n")
