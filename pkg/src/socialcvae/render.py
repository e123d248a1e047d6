"""Synthetic grey frames and segmentation maps for generated scenes."""
from __future__ import annotations

import numpy as np

from .perception import ImageFrame, SegClass, SegmentationMap
from .scene import ARENA, Scene

DEFAULT_MPP = 0.25
BLOB_SIGMA_M = 0.4


def _grid(mpp: float) -> tuple[np.ndarray, np.ndarray]:
    n = int(round((ARENA[1] - ARENA[0]) / mpp))
    rows, cols = np.mgrid[0:n, 0:n]
    return (cols + 0.5) * mpp, (rows + 0.5) * mpp  # world x, y of pixel centres


def segmentation_for(scene: Scene, mpp: float = DEFAULT_MPP) -> SegmentationMap:
    """Road through the middle, sidewalks along the left/right edges, two obstacle blocks."""
    x, y = _grid(mpp)
    labels = np.full(x.shape, SegClass.ROAD, dtype=np.int64)
    labels[(x < 3.0) | (x > 17.0)] = SegClass.SIDEWALK
    labels[(x < 2.0) & (y < 2.0)] = SegClass.OBSTACLE
    labels[(x > 18.0) & (y > 18.0)] = SegClass.OBSTACLE
    labels[(y > 19.0) & (x > 3.0) & (x < 17.0)] = SegClass.OTHER
    return SegmentationMap(labels, mpp)


def frames_for(scene: Scene, mpp: float = DEFAULT_MPP, seed: int = 0) -> list[ImageFrame]:
    """``tau`` frames: a static smooth texture with a bright blob per observed agent."""
    x, y = _grid(mpp)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    base = np.zeros_like(x)
    for _ in range(6):
        kx, ky = rng.uniform(-0.8, 0.8, size=2)
        base += np.sin(kx * x + ky * y + rng.uniform(0, 2 * np.pi))
    base = 0.35 + 0.05 * base / 6.0
    frames = []
    for t in range(scene.tau):
        img = base.copy()
        for tr in scene.tracks:
            p = tr.points[t]
            img += 0.5 * np.exp(-((x - p.x) ** 2 + (y - p.y) ** 2) / (2 * BLOB_SIGMA_M ** 2))
        frames.append(ImageFrame(np.clip(img, 0.0, 1.0)))
    return frames
