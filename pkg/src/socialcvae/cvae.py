"""Conditional VAE over the target's future displacements.

Encoder q(z | future, social) and decoder p(future | z, social) are small
perceptrons whose layers live in the parameter dict as ``enc.<i>.W/b`` and
``dec.<i>.W/b``.  Futures are handled as per-step displacements starting at
the target's last observed position.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .scene import PastWindow, FutureWindow, Scene, split_track
from .tensor import Tensor

LOG_VAR_LIMIT = 10.0


@dataclass(frozen=True)
class LatentDistribution:
    mean: Tensor
    log_var: Tensor


@dataclass(frozen=True)
class PredictedFuture:
    """Decoded displacements and the position they start from."""

    displacements: np.ndarray
    origin: np.ndarray

    @property
    def positions(self) -> np.ndarray:
        return self.origin + np.cumsum(self.displacements, axis=0)

    def __len__(self) -> int:
        return len(self.displacements)


def future_displacements(past: PastWindow, future: FutureWindow) -> np.ndarray:
    """(delta, 2) step displacements of ``future``, the first one from the last past point."""
    xy = np.concatenate([past.as_array()[-1:], future.as_array()])
    return np.diff(xy, axis=0)


def layer_count(params: Mapping[str, Tensor], prefix: str) -> int:
    n = 0
    while f"{prefix}.{n}.W" in params:
        n += 1
    if n == 0:
        raise T.ShapeError(f"no layers found for {prefix!r}")
    return n


def mlp(x: Tensor, params: Mapping[str, Tensor], prefix: str, activation=T.tanh) -> Tensor:
    """Affine layers with ``activation`` between them and a linear output."""
    n = layer_count(params, prefix)
    for i in range(n):
        w, b = params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"]
        if w.data.ndim != 2 or w.shape[1] != x.shape[0]:
            raise T.ShapeError(f"parameter {prefix}.{i}.W has shape {w.shape}, input has size {x.shape[0]}")
        if b.shape != (w.shape[0],):
            raise T.ShapeError(f"parameter {prefix}.{i}.b has shape {b.shape}, expected ({w.shape[0]},)")
        x = w @ x + b
        if i < n - 1:
            x = activation(x)
    return x


def encode(future_disp, social: Tensor, params: Mapping[str, Tensor]) -> LatentDistribution:
    """Diagonal Gaussian over z from the ground-truth future displacements and the social feature."""
    flat = T.as_tensor(future_disp)
    if flat.data.ndim != 1:
        flat = T.reshape(flat, (flat.size,))
    out = mlp(T.concat([flat, social]), params, "enc")
    if out.shape[0] % 2:
        raise T.ShapeError(f"encoder output size {out.shape[0]} is not 2 * d_z")
    d_z = out.shape[0] // 2
    return LatentDistribution(out[:d_z], T.clamp(out[d_z:], -LOG_VAR_LIMIT, LOG_VAR_LIMIT))


def reparameterize(dist: LatentDistribution, eps) -> Tensor:
    """``mean + exp(log_var / 2) * eps``."""
    eps = T.as_tensor(eps)
    if eps.shape != dist.mean.shape:
        raise T.ShapeError(f"eps has shape {eps.shape}, latent has shape {dist.mean.shape}")
    return dist.mean + T.exp(0.5 * dist.log_var) * eps


def decode(z, social: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Flattened (delta * 2) displacement prediction."""
    return mlp(T.concat([T.as_tensor(z), social]), params, "dec")


def kl_to_standard_normal(dist: LatentDistribution) -> Tensor:
    """KL(N(mean, diag(exp(log_var))) || N(0, I)) in closed form."""
    lv = dist.log_var
    return 0.5 * T.sum(dist.mean * dist.mean + T.exp(lv) - lv - 1.0)


def elbo_loss(scene: Scene, social: Tensor, params: Mapping[str, Tensor], eps, beta: float = 0.1) -> Tensor:
    """Displacement MSE of the reconstructed target future plus ``beta`` times the KL term."""
    past, future = split_track(scene.target, scene.tau, scene.delta)
    truth = future_displacements(past, future).reshape(-1)
    dist = encode(truth, social, params)
    z = reparameterize(dist, eps)
    recon = decode(z, social, params)
    if recon.shape != truth.shape:
        raise T.ShapeError(f"decoder emits {recon.shape[0]} values, expected 2 * delta = {truth.size}")
    loss = T.mse(recon, Tensor(truth))
    if beta:
        loss = loss + beta * kl_to_standard_normal(dist)
    return loss


def latent_dim(params: Mapping[str, Tensor]) -> int:
    n = layer_count(params, "enc")
    return params[f"enc.{n - 1}.W"].shape[0] // 2


def predict(social: Tensor, params: Mapping[str, Tensor], n_samples: int, seed, origin=(0.0, 0.0),
            z: Sequence | None = None) -> list[PredictedFuture]:
    """Decode ``n_samples`` futures from z ~ N(0, I); ``z`` overrides the draws."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    d_z = latent_dim(params)
    if z is None:
        zs = np.random.default_rng(seed).standard_normal((n_samples, d_z))
    else:
        zs = np.broadcast_to(np.asarray(z, dtype=np.float64), (n_samples, d_z))
    origin = np.asarray(origin, dtype=np.float64)
    out = []
    for row in zs:
        disp = decode(Tensor(row), social, params).data.reshape(-1, 2)
        out.append(PredictedFuture(disp.copy(), origin))
    return out
