"""Adam training over scenes and best-of-K evaluation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, asdict
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .model import ModelConfig, PreparedScene, init_params, predict_scene, prepare_scene, scene_loss
from .scene import Scene, scenes_consistent
from .tensor import Tensor

log = logging.getLogger(__name__)

COVERAGE_RADIUS = 0.5


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    beta: float = 0.1
    k_samples: int = 20
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.k_samples < 1:
            raise ValueError("k_samples must be positive")


@dataclass(frozen=True)
class Metrics:
    min_ade: float
    min_fde: float
    mode_coverage: float | None = None
    n_scenes: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params: Mapping[str, Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def _prepare_all(scenes: Sequence[Scene], cfg: ModelConfig, envs: Mapping[str, np.ndarray] | None):
    envs = envs or {}
    return [prepare_scene(s, cfg, envs.get(s.scene_id)) for s in scenes]


def train(scenes: Sequence[Scene], config: TrainConfig, model_cfg: ModelConfig | None = None,
          envs: Mapping[str, np.ndarray] | None = None,
          params: dict[str, Tensor] | None = None) -> tuple[dict[str, Tensor], list[float]]:
    """Sequential per-scene Adam steps on the ELBO loss.

    One eps draw per scene per epoch comes from a stream seeded by
    ``config.seed``; the scene order is fixed, so the loss history is
    reproducible.  Returns the parameters and the mean loss of each epoch.
    """
    tau, delta = scenes_consistent(scenes)
    if model_cfg is None:
        model_cfg = ModelConfig(tau=tau, delta=delta)
    prepared = _prepare_all(scenes, model_cfg, envs)
    if params is None:
        params = init_params(model_cfg, config.seed)
    opt = Adam(params, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    eps_stream = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))

    history = []
    for epoch in range(config.epochs):
        total = 0.0
        for prep in prepared:
            eps = eps_stream.standard_normal(model_cfg.d_z)
            T.zero_grad(params.values())
            with T.Tape() as tape:
                loss = scene_loss(prep, params, model_cfg, eps, config.beta)
            T.backward(loss, tape)
            opt.step()
            total += float(loss.data)
        mean_loss = total / len(prepared)
        if not math.isfinite(mean_loss):
            raise T.NonFiniteError(f"loss became non-finite at epoch {epoch + 1}")
        history.append(mean_loss)
        log.debug("epoch %d loss %.6g", epoch + 1, mean_loss)
    return params, history


def _check_lengths(predictions: Sequence[np.ndarray], truth: np.ndarray) -> list[np.ndarray]:
    if len(predictions) == 0:
        raise ValueError("need at least one prediction")
    truth = np.asarray(truth, dtype=np.float64)
    out = []
    for p in predictions:
        p = np.asarray(p, dtype=np.float64)
        if p.shape != truth.shape:
            raise ValueError(f"prediction shape {p.shape} does not match ground truth {truth.shape}")
        out.append(p)
    return out


def min_ade(predictions: Sequence[np.ndarray], truth) -> float:
    """Smallest mean pointwise Euclidean error over the sampled futures (absolute coordinates)."""
    preds = _check_lengths(predictions, truth)
    return min(float(np.mean(np.linalg.norm(p - truth, axis=1))) for p in preds)


def min_fde(predictions: Sequence[np.ndarray], truth) -> float:
    """Smallest final-point Euclidean error over the sampled futures."""
    preds = _check_lengths(predictions, truth)
    truth = np.asarray(truth, dtype=np.float64)
    return min(float(np.linalg.norm(p[-1] - truth[-1])) for p in preds)


def covers_both_branches(predictions: Sequence[np.ndarray], endpoints: Mapping[str, Sequence[float]],
                         radius: float = COVERAGE_RADIUS) -> bool:
    finals = np.array([np.asarray(p)[-1] for p in predictions])
    return all(np.min(np.linalg.norm(finals - np.asarray(e), axis=1)) < radius for e in endpoints.values())


def evaluate_predictions(scenes: Sequence[Scene], predictions: Mapping[str, Sequence[np.ndarray]]) -> Metrics:
    """Scene-averaged minADE/minFDE, plus branch coverage over fork scenes."""
    if not scenes:
        raise ValueError("no scenes to evaluate")
    ades = np.zeros(len(scenes))
    fdes = np.zeros(len(scenes))
    covered = []
    for i, s in enumerate(scenes):
        if s.scene_id not in predictions:
            raise KeyError(f"no predictions for scene {s.scene_id}")
        preds = predictions[s.scene_id]
        truth = s.target.as_array()[s.tau:s.tau + s.delta]
        ades[i] = min_ade(preds, truth)
        fdes[i] = min_fde(preds, truth)
        ends = s.metadata.get("branch_endpoints")
        if ends:
            covered.append(covers_both_branches(preds, ends))
    coverage = float(np.mean(covered)) if covered else None
    return Metrics(float(ades.mean()), float(fdes.mean()), coverage, len(scenes))


def scene_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, 3, index])


def predict_all(scenes: Sequence[Scene], params: Mapping[str, Tensor], model_cfg: ModelConfig, k: int,
                seed: int, envs: Mapping[str, np.ndarray] | None = None, z=None) -> dict[str, list[np.ndarray]]:
    """Absolute-coordinate futures per scene id, in input order."""
    out = {}
    for i, prep in enumerate(_prepare_all(scenes, model_cfg, envs)):
        futures = predict_scene(prep, params, model_cfg, k, scene_seed(seed, i), z=z)
        out[prep.scene.scene_id] = [f.positions for f in futures]
    return out


def evaluate(scenes: Sequence[Scene], params: Mapping[str, Tensor], config: TrainConfig,
             model_cfg: ModelConfig, envs: Mapping[str, np.ndarray] | None = None, z=None) -> Metrics:
    preds = predict_all(scenes, params, model_cfg, config.k_samples, config.seed, envs, z=z)
    return evaluate_predictions(scenes, preds)
