"""Agent tracks, past/future splitting and synthetic scene generation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

import numpy as np

DEFAULT_DT = 0.4
ARENA = (0.0, 20.0)
SCENARIOS = ("constant_velocity", "avoidance", "fork")


class AgentClass(str, Enum):
    PEDESTRIAN = "pedestrian"
    VEHICLE = "vehicle"
    OTHER = "other"


AGENT_CLASSES = tuple(AgentClass)


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise SceneError(f"non-finite trajectory point ({self.x}, {self.y})")


@dataclass(frozen=True)
class AgentTrack:
    agent_id: int
    agent_class: AgentClass
    points: tuple[TrajectoryPoint, ...]

    def __post_init__(self):
        if self.agent_id < 0:
            raise SceneError(f"agent_id must be non-negative, got {self.agent_id}")
        if not self.points:
            raise SceneError(f"track {self.agent_id} has no points")
        object.__setattr__(self, "agent_class", AgentClass(self.agent_class))

    def __len__(self) -> int:
        return len(self.points)

    def as_array(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.points], dtype=np.float64)

    @classmethod
    def from_array(cls, agent_id: int, agent_class, xy) -> AgentTrack:
        pts = tuple(TrajectoryPoint(float(x), float(y)) for x, y in np.asarray(xy, dtype=np.float64))
        return cls(agent_id, AgentClass(agent_class), pts)


@dataclass(frozen=True)
class PastWindow:
    points: tuple[TrajectoryPoint, ...]

    def as_array(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.points], dtype=np.float64)

    @property
    def last(self) -> TrajectoryPoint:
        return self.points[-1]


@dataclass(frozen=True)
class FutureWindow:
    points: tuple[TrajectoryPoint, ...]

    def as_array(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.points], dtype=np.float64)


@dataclass(frozen=True)
class Scene:
    """K agent tracks of equal length ``tau + delta`` plus the target index.

    ``frames`` and ``seg_map`` are optional file references (relative to the
    scene file) for the perception inputs.  ``metadata`` carries generator
    facts such as ``dt`` and, for fork scenes, the branch taken and both
    branch endpoints.
    """

    scene_id: str
    tracks: tuple[AgentTrack, ...]
    tau: int
    delta: int
    target_index: int = 0
    frames: tuple[str, ...] | None = None
    seg_map: str | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.tracks:
            raise SceneError(f"scene {self.scene_id}: needs at least one track")
        if self.tau < 2:
            raise SceneError(f"scene {self.scene_id}: tau must be >= 2, got {self.tau}")
        if self.delta < 1:
            raise SceneError(f"scene {self.scene_id}: delta must be >= 1, got {self.delta}")
        if not 0 <= self.target_index < len(self.tracks):
            raise SceneError(
                f"scene {self.scene_id}: target_index {self.target_index} out of range for {len(self.tracks)} tracks")
        need = self.tau + self.delta
        ids = set()
        for tr in self.tracks:
            if len(tr) != need:
                raise SceneError(
                    f"scene {self.scene_id}: track {tr.agent_id} has {len(tr)} points, expected tau+delta={need}")
            if tr.agent_id in ids:
                raise SceneError(f"scene {self.scene_id}: duplicate agent_id {tr.agent_id}")
            ids.add(tr.agent_id)
        if self.frames is not None and len(self.frames) != self.tau:
            raise SceneError(f"scene {self.scene_id}: {len(self.frames)} frames given, expected tau={self.tau}")

    @property
    def target(self) -> AgentTrack:
        return self.tracks[self.target_index]

    @property
    def dt(self) -> float:
        return float(self.metadata.get("dt", DEFAULT_DT))


def split_track(track: AgentTrack, tau: int, delta: int) -> tuple[PastWindow, FutureWindow]:
    """First ``tau`` points as the past, the next ``delta`` as the future."""
    if tau < 2 or delta < 1:
        raise SceneError(f"need tau >= 2 and delta >= 1, got tau={tau}, delta={delta}")
    if len(track) < tau + delta:
        raise SceneError(
            f"track {track.agent_id} too short: {len(track)} points, requires at least {tau + delta}")
    return PastWindow(track.points[:tau]), FutureWindow(track.points[tau:tau + delta])


def split_scene(scene: Scene) -> tuple[list[PastWindow], list[FutureWindow]]:
    pasts, futures = [], []
    for tr in scene.tracks:
        p, f = split_track(tr, scene.tau, scene.delta)
        pasts.append(p)
        futures.append(f)
    return pasts, futures


# -- synthetic scenarios ----------------------------------------------------

def generate_synthetic_scenes(spec: str, count: int, seed: int, *, tau: int = 8, delta: int = 12,
                              dt: float = DEFAULT_DT) -> list[Scene]:
    """Deterministic synthetic scenes with known ground-truth structure.

    ``spec`` is one of ``constant_velocity``, ``avoidance`` or ``fork``.  Scene
    ``i`` depends only on ``(spec, seed, i)``, so a longer request shares its
    prefix with a shorter one.
    """
    if spec not in SCENARIOS:
        raise SceneError(f"unknown scenario {spec!r}; expected one of {', '.join(SCENARIOS)}")
    if count < 1:
        raise SceneError(f"count must be >= 1, got {count}")
    if tau < 2 or delta < 1:
        raise SceneError(f"need tau >= 2 and delta >= 1, got tau={tau}, delta={delta}")
    make = {"constant_velocity": _constant_velocity, "avoidance": _avoidance, "fork": _fork}[spec]
    children = np.random.SeedSequence([seed, SCENARIOS.index(spec)]).spawn(count)
    scenes = []
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        tracks, meta = make(rng, tau + delta, tau)
        meta = {"dt": dt, "scenario": spec, **meta}
        scenes.append(Scene(f"{spec}-{seed}-{i:05d}", tuple(tracks), tau, delta, 0, metadata=meta))
    return scenes


def _random_linear(rng, n: int, speed_range: tuple[float, float], margin: float = 1.0) -> np.ndarray:
    lo, hi = ARENA[0] + margin, ARENA[1] - margin
    steps = np.arange(n, dtype=np.float64)[:, None]
    while True:
        start = rng.uniform(lo, hi, size=2)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        speed = rng.uniform(*speed_range)
        vel = speed * np.array([math.cos(heading), math.sin(heading)])
        end = start + (n - 1) * vel
        if np.all((end >= lo) & (end <= hi)):
            return start + steps * vel


def _constant_velocity(rng, n: int, tau: int):
    k = int(rng.integers(1, 4))
    tracks = []
    for i in range(k):
        cls = AgentClass.PEDESTRIAN if rng.random() < 0.7 else AgentClass.OTHER
        tracks.append(AgentTrack.from_array(i, cls, _random_linear(rng, n, (0.2, 0.7))))
    return tracks, {}


def _avoidance(rng, n: int, tau: int):
    # Head-on approach along x; both agents bump sideways around the meeting step.
    y0 = rng.uniform(7.0, 13.0)
    speed = rng.uniform(0.35, 0.5)
    t_meet = rng.uniform(tau - 1.0, tau + 2.0)
    x_meet = rng.uniform(8.0, 12.0)
    amp = rng.uniform(0.6, 1.0)
    width = rng.uniform(2.0, 3.5)
    t = np.arange(n, dtype=np.float64)
    bump = amp * np.exp(-(((t - t_meet) / width) ** 2))
    a = np.stack([x_meet + speed * (t - t_meet), y0 + 0.15 + bump], axis=1)
    b = np.stack([x_meet - speed * (t - t_meet), y0 - 0.15 - bump], axis=1)
    tracks = [AgentTrack.from_array(0, AgentClass.PEDESTRIAN, a),
              AgentTrack.from_array(1, AgentClass.PEDESTRIAN, b)]
    return tracks, {"meet_step": float(t_meet)}


FORK_SPEED = 0.7
FORK_TURN = math.radians(60.0)


def _fork(rng, n: int, tau: int):
    # Target walks north, then at its last observed position turns left or right.
    start = np.array([rng.uniform(9.0, 11.0), rng.uniform(1.0, 2.0)])
    north = np.array([0.0, 1.0])
    past = start + FORK_SPEED * np.arange(tau, dtype=np.float64)[:, None] * north
    junction = past[-1]
    steps = np.arange(1, n - tau + 1, dtype=np.float64)[:, None]
    branches = {}
    for name, sign in (("left", -1.0), ("right", 1.0)):
        d = FORK_SPEED * np.array([sign * math.sin(FORK_TURN), math.cos(FORK_TURN)])
        branches[name] = junction + steps * d
    taken = "left" if rng.random() < 0.5 else "right"
    target = np.concatenate([past, branches[taken]])
    tracks = [AgentTrack.from_array(0, AgentClass.PEDESTRIAN, target)]
    # A bystander loitering off to one side; sometimes inside the graph radius.
    if rng.random() < 0.5:
        tracks.append(AgentTrack.from_array(1, AgentClass.PEDESTRIAN, _random_linear(rng, n, (0.0, 0.15))))
    meta = {"branch": taken,
            "branch_endpoints": {k: [float(v[-1, 0]), float(v[-1, 1])] for k, v in branches.items()}}
    return tracks, meta


def scenes_consistent(scenes: Sequence[Scene]) -> tuple[int, int]:
    """Common ``(tau, delta)`` of ``scenes``; raises if they disagree."""
    if not scenes:
        raise SceneError("no scenes given")
    tau, delta = scenes[0].tau, scenes[0].delta
    for s in scenes[1:]:
        if (s.tau, s.delta) != (tau, delta):
            raise SceneError(
                f"scene {s.scene_id} has tau={s.tau}, delta={s.delta}; expected tau={tau}, delta={delta}")
    return tau, delta
