"""Moving-dot clips: a Gaussian bump sliding across a periodic 8x8 frame.

The class id is the motion direction. Coordinates are ``(x, y)`` with ``x`` the
column index; motion wraps around the frame edges and so does the bump.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, split, uniform

__all__ = ["DataError", "ClipConfig", "ToyClip", "DIRECTIONS", "render_clip", "generate_clip",
           "make_dataset", "stack_clips"]

# right, left, down, up as (dx, dy) per frame for unit speed.
DIRECTIONS = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ClipConfig:
    frames: int = 8
    height: int = 8
    width: int = 8
    n_classes: int = 4
    speed_min: float = 0.5
    speed_max: float = 1.5
    radius_min: float = 0.8
    radius_max: float = 1.3

    def __post_init__(self):
        if not 1 <= self.n_classes <= len(DIRECTIONS):
            raise DataError(f"n_classes must lie in [1, {len(DIRECTIONS)}]")
        if not 0 <= self.speed_min <= self.speed_max:
            raise DataError("need 0 <= speed_min <= speed_max")
        if not 0 < self.radius_min <= self.radius_max:
            raise DataError("need 0 < radius_min <= radius_max")


@dataclass(frozen=True, eq=False)
class ToyClip:
    video: np.ndarray       # (frames, 1, height, width) in [-1, 1]
    class_id: int
    start: tuple[float, float]
    velocity: tuple[float, float]
    radius: float

    def centroids(self) -> np.ndarray:
        f = self.video.shape[0]
        h, w = self.video.shape[2:]
        pos = np.asarray(self.start) + np.arange(f)[:, None] * np.asarray(self.velocity)
        return np.mod(pos, [w, h])


def _periodic_delta(a: np.ndarray, n: int) -> np.ndarray:
    return (a + n / 2.0) % n - n / 2.0


def render_clip(start, velocity, radius: float, cfg: ClipConfig = ClipConfig()) -> np.ndarray:
    """Render the bump ``-1 + 2 exp(-d^2 / 2r^2)`` with periodic distance ``d``."""
    ys, xs = np.mgrid[0:cfg.height, 0:cfg.width].astype(np.float64)
    video = np.empty((cfg.frames, 1, cfg.height, cfg.width))
    for i in range(cfg.frames):
        cx = start[0] + i * velocity[0]
        cy = start[1] + i * velocity[1]
        dx = _periodic_delta(xs - cx, cfg.width)
        dy = _periodic_delta(ys - cy, cfg.height)
        video[i, 0] = -1.0 + 2.0 * np.exp(-(dx ** 2 + dy ** 2) / (2.0 * radius ** 2))
    return video


def generate_clip(class_id: int, rng: RngStream, cfg: ClipConfig = ClipConfig()) -> ToyClip:
    if not 0 <= class_id < cfg.n_classes:
        raise DataError(f"class_id {class_id} outside [0, {cfg.n_classes})")
    u, _ = uniform(rng, 4)
    start = (float(u[0] * cfg.width), float(u[1] * cfg.height))
    speed = cfg.speed_min + u[2] * (cfg.speed_max - cfg.speed_min)
    radius = float(cfg.radius_min + u[3] * (cfg.radius_max - cfg.radius_min))
    velocity = tuple(float(v) for v in speed * DIRECTIONS[class_id])
    return ToyClip(render_clip(start, velocity, radius, cfg), int(class_id), start, velocity, radius)


def make_dataset(n: int, n_classes: int, rng: RngStream, cfg: ClipConfig | None = None) -> list[ToyClip]:
    """``n`` clips, class ``i % n_classes`` for clip ``i``; clip ``i`` uses child stream ``i``."""
    if cfg is None:
        cfg = ClipConfig(n_classes=n_classes)
    elif cfg.n_classes != n_classes:
        raise DataError("n_classes disagrees with cfg.n_classes")
    return [generate_clip(i % n_classes, split(rng, i), cfg) for i in range(n)]


def stack_clips(clips: list[ToyClip]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([c.video for c in clips]), np.array([c.class_id for c in clips], dtype=np.int64)
