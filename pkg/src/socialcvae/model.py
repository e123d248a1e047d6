"""Full forecasting pipeline: graph features -> social feature -> CVAE."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from . import cvae
from .graph import InteractionGraph, build_graph, graph_param_shapes, message_passing
from .perception import ENV_DIM, blank_env_feature
from .scene import Scene, split_scene
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    tau: int = 8
    delta: int = 12
    d_node: int = 32
    d_y: int = 32
    d_z: int = 2
    d_hidden: int = 64
    rounds: int = 2
    radius_m: float = 10.0
    activation: str = "tanh"

    def __post_init__(self):
        for name in ("tau", "delta", "d_node", "d_y", "d_z", "d_hidden", "rounds"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.tau < 2:
            raise ValueError("tau must be >= 2")
        if not self.radius_m > 0:
            raise ValueError("radius_m must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = graph_param_shapes(2 * (cfg.tau - 1), ENV_DIM, cfg.d_node, cfg.d_hidden, cfg.d_y)
    out = 2 * cfg.delta
    shapes.update({
        "enc.0.W": (cfg.d_hidden, out + cfg.d_y), "enc.0.b": (cfg.d_hidden,),
        "enc.1.W": (2 * cfg.d_z, cfg.d_hidden), "enc.1.b": (2 * cfg.d_z,),
        "dec.0.W": (cfg.d_hidden, cfg.d_z + cfg.d_y), "dec.0.b": (cfg.d_hidden,),
        "dec.1.W": (out, cfg.d_hidden), "dec.1.b": (out,),
    })
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """LeCun-normal weights, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".W"):
            data = rng.standard_normal(shape) / np.sqrt(shape[1])
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def zero_params(cfg: ModelConfig) -> dict[str, Tensor]:
    return {n: Tensor(np.zeros(s), requires_grad=True, name=n) for n, s in param_shapes(cfg).items()}


@dataclass(frozen=True)
class PreparedScene:
    """Per-scene inputs that do not depend on learned parameters."""

    scene: Scene
    graph: InteractionGraph
    origin: np.ndarray
    truth: np.ndarray  # (delta, 2) absolute future positions of the target


def prepare_scene(scene: Scene, cfg: ModelConfig, env: np.ndarray | None = None) -> PreparedScene:
    if (scene.tau, scene.delta) != (cfg.tau, cfg.delta):
        raise ValueError(f"scene {scene.scene_id} has tau={scene.tau}, delta={scene.delta}; "
                         f"model expects tau={cfg.tau}, delta={cfg.delta}")
    pasts, futures = split_scene(scene)
    env = blank_env_feature() if env is None else np.asarray(env, dtype=np.float64)
    graph = build_graph(scene, pasts, env, cfg.radius_m)
    k = scene.target_index
    return PreparedScene(scene, graph, pasts[k].as_array()[-1], futures[k].as_array())


def social_feature(prep: PreparedScene, params: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    return message_passing(prep.graph, params, cfg.rounds, cfg.activation)


def scene_loss(prep: PreparedScene, params: Mapping[str, Tensor], cfg: ModelConfig, eps, beta: float) -> Tensor:
    social = social_feature(prep, params, cfg)
    return cvae.elbo_loss(prep.scene, social, params, eps, beta)


def predict_scene(prep: PreparedScene, params: Mapping[str, Tensor], cfg: ModelConfig, n_samples: int, seed,
                  z=None) -> list[cvae.PredictedFuture]:
    social = social_feature(prep, params, cfg)
    return cvae.predict(social, params, n_samples, seed, prep.origin, z=z)
