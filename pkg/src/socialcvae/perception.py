"""Dense optical flow and segmentation-map pooling around agent positions.

Pixel convention: world origin at the image top-left corner, x along columns,
y along rows (downwards in the image), ``meters_per_pixel`` converts between
the two.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

from .scene import TrajectoryPoint


class SegClass(IntEnum):
    ROAD = 0
    SIDEWALK = 1
    OBSTACLE = 2
    OTHER = 3


N_CLASSES = len(SegClass)
ENV_DIM = 8
DEFAULT_POOL_RADIUS = 2.0


class PerceptionError(ValueError):
    pass


@dataclass(frozen=True)
class ImageFrame:
    intensities: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.intensities, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise PerceptionError(f"image must be a non-empty 2-D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise PerceptionError("image intensities must be finite and within [0, 1]")
        object.__setattr__(self, "intensities", arr)

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.shape != v.shape or u.ndim != 2:
            raise PerceptionError(f"flow components must be equal-shaped 2-D grids, got {u.shape} and {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise PerceptionError("flow contains non-finite values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]


@dataclass(frozen=True)
class SegmentationMap:
    labels: np.ndarray
    meters_per_pixel: float

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2 or lab.size == 0:
            raise PerceptionError(f"segmentation map must be a non-empty 2-D grid, got shape {lab.shape}")
        if not np.all(np.isin(lab, list(range(N_CLASSES)))):
            raise PerceptionError(f"segmentation labels must be in 0..{N_CLASSES - 1}")
        if not self.meters_per_pixel > 0:
            raise PerceptionError("meters_per_pixel must be positive")
        object.__setattr__(self, "labels", lab.astype(np.int64))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


def _central_dx(img: np.ndarray) -> np.ndarray:
    p = np.pad(img, ((0, 0), (1, 1)), mode="edge")
    return 0.5 * (p[:, 2:] - p[:, :-2])


def _central_dy(img: np.ndarray) -> np.ndarray:
    p = np.pad(img, ((1, 1), (0, 0)), mode="edge")
    return 0.5 * (p[2:, :] - p[:-2, :])


def _neighbour_mean(f: np.ndarray) -> np.ndarray:
    # Horn-Schunck weighting: 1/6 for edge neighbours, 1/12 for diagonals.
    p = np.pad(f, 1, mode="edge")
    edges = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
    corners = p[:-2, :-2] + p[:-2, 2:] + p[2:, :-2] + p[2:, 2:]
    return edges / 6.0 + corners / 12.0


def horn_schunck(a: ImageFrame, b: ImageFrame, alpha: float = 0.1, iterations: int = 200) -> FlowField:
    """Horn-Schunck flow from ``a`` to ``b`` after ``iterations`` Jacobi sweeps.

    Spatial derivatives are central differences averaged over both frames,
    with replicated borders; the temporal derivative is ``b - a``.
    """
    if a.intensities.shape != b.intensities.shape:
        raise PerceptionError(f"frame dimensions differ: {a.intensities.shape} vs {b.intensities.shape}")
    if not alpha > 0:
        raise PerceptionError("alpha must be positive")
    if iterations < 1:
        raise PerceptionError("iterations must be positive")
    ia, ib = a.intensities, b.intensities
    ix = 0.5 * (_central_dx(ia) + _central_dx(ib))
    iy = 0.5 * (_central_dy(ia) + _central_dy(ib))
    it = ib - ia
    denom = alpha * alpha + ix * ix + iy * iy
    u = np.zeros_like(ia)
    v = np.zeros_like(ia)
    for _ in range(iterations):
        ub = _neighbour_mean(u)
        vb = _neighbour_mean(v)
        r = (ix * ub + iy * vb + it) / denom
        u = ub - ix * r
        v = vb - iy * r
    return FlowField(u, v)


def compute_flow_sequence(frames: Sequence[ImageFrame], alpha: float = 0.1,
                          iterations: int = 200) -> list[FlowField]:
    """One flow field per consecutive frame pair, in frame order."""
    if len(frames) < 2:
        raise PerceptionError(f"need at least 2 frames for optical flow, got {len(frames)}")
    return [horn_schunck(frames[i], frames[i + 1], alpha, iterations) for i in range(len(frames) - 1)]


def world_to_pixel(position: TrajectoryPoint, meters_per_pixel: float) -> tuple[int, int]:
    """(row, col) of the pixel containing ``position``; unclamped."""
    return int(np.floor(position.y / meters_per_pixel)), int(np.floor(position.x / meters_per_pixel))


def pool_env_features(flows: Sequence[FlowField], seg: SegmentationMap, position: TrajectoryPoint,
                      radius_m: float = DEFAULT_POOL_RADIUS) -> np.ndarray:
    """Environment descriptor around ``position``.

    Returns ``[road, sidewalk, obstacle, other, mean_u, mean_v, mag_mean, mag_var]``:
    class occupancy fractions over the square window of half-width
    ``radius_m``, then flow statistics over the same window pooled across
    every flow field.  The window centre is clamped into the image and the
    window clipped to its borders.
    """
    if not flows:
        raise PerceptionError("empty flow sequence")
    if not radius_m > 0:
        raise PerceptionError("radius_m must be positive")
    for f in flows:
        if (f.height, f.width) != (seg.height, seg.width):
            raise PerceptionError(
                f"flow grid {f.height}x{f.width} does not match segmentation map {seg.height}x{seg.width}")
    mpp = seg.meters_per_pixel
    row, col = world_to_pixel(position, mpp)
    row = min(max(row, 0), seg.height - 1)
    col = min(max(col, 0), seg.width - 1)
    half = max(1, int(round(radius_m / mpp)))
    r0, r1 = max(row - half, 0), min(row + half, seg.height)
    c0, c1 = max(col - half, 0), min(col + half, seg.width)
    if r1 <= r0:
        r0, r1 = row, row + 1
    if c1 <= c0:
        c0, c1 = col, col + 1

    window = seg.labels[r0:r1, c0:c1]
    counts = np.bincount(window.ravel(), minlength=N_CLASSES).astype(np.float64)
    occupancy = counts / counts.sum()

    u = np.stack([f.u[r0:r1, c0:c1] for f in flows])
    v = np.stack([f.v[r0:r1, c0:c1] for f in flows])
    mag = np.hypot(u, v)
    return np.concatenate([occupancy, [u.mean(), v.mean(), mag.mean(), mag.var()]])


def blank_env_feature() -> np.ndarray:
    """Descriptor of an all-road, motionless surrounding; used when a scene has no imagery."""
    env = np.zeros(ENV_DIM)
    env[SegClass.ROAD] = 1.0
    return env
