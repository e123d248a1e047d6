from __future__ import annotations

import numpy as np
import pytest

from socialcvae.scene import AgentTrack, Scene


def make_scene(tracks_xy, tau=4, delta=3, target_index=0, ids=None, classes=None, scene_id="s"):
    """Scene from a list of (tau+delta, 2) arrays."""
    ids = list(range(len(tracks_xy))) if ids is None else ids
    classes = ["pedestrian"] * len(tracks_xy) if classes is None else classes
    tracks = tuple(AgentTrack.from_array(i, c, xy) for i, c, xy in zip(ids, classes, tracks_xy))
    return Scene(scene_id, tracks, tau, delta, target_index)


def linear_track(start, vel, n):
    return np.asarray(start, float) + np.arange(n)[:, None] * np.asarray(vel, float)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
