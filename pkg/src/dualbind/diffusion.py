"""Variance-preserving noise schedule, forward diffusion, and loss.

Latents and noises are plain ndarrays. A single latent has shape
``(4, 8, 8)``; batched calls put the batch axis first and may pass a
vector of timesteps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

DEFAULT_T = 200
# The usual 1000-step ramp 1e-4..0.02, rescaled to a shorter horizon and
# rounded to f32 so the schedule survives a checkpoint round trip exactly.
DEFAULT_BETA_START = float(np.float32(1e-4 * 1000 / DEFAULT_T))
DEFAULT_BETA_END = float(np.float32(0.02 * 1000 / DEFAULT_T))


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    alphas: np.ndarray
    sigmas: np.ndarray
    beta_start: float
    beta_end: float

    def check_t(self, t):
        t = np.asarray(t)
        if t.dtype.kind not in "iu" or np.any(t < 0) or np.any(t > self.T):
            raise InvalidArgumentError(f"timestep must be an integer in [0, {self.T}], got {t}")
        return t


def make_schedule(T=DEFAULT_T, beta_start=DEFAULT_BETA_START, beta_end=DEFAULT_BETA_END):
    """Linear-beta schedule with ``alpha_t = sqrt(prod_{s<=t} (1 - beta_s))``.

    Index 0 is the clean-data boundary: ``alpha_0 = 1`` and ``sigma_0 = 0``.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise InvalidArgumentError(f"T must be a positive integer, got {T!r}")
    if not (0 < beta_start <= beta_end < 1):
        raise InvalidArgumentError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    alphas = np.empty(T + 1)
    alphas[0] = 1.0
    alphas[1:] = np.sqrt(np.cumprod(1.0 - betas))
    sigmas = np.sqrt(1.0 - alphas**2)
    sigmas[0] = 0.0
    alphas.setflags(write=False)
    sigmas.setflags(write=False)
    return DiffusionSchedule(int(T), alphas, sigmas, float(beta_start), float(beta_end))


def _per_sample(coef, ndim):
    coef = np.asarray(coef, dtype=np.float64)
    return coef.reshape(coef.shape + (1,) * (ndim - coef.ndim))


def forward_diffuse(z0, t, eps, sched: DiffusionSchedule):
    """Return ``alpha_t * z0 + sigma_t * eps``."""
    z0, eps = np.asarray(z0, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise InvalidArgumentError(f"latent shape {z0.shape} != noise shape {eps.shape}")
    t = sched.check_t(t)
    if t.ndim and t.shape[0] != z0.shape[0]:
        raise InvalidArgumentError("one timestep per batch element expected")
    a = _per_sample(sched.alphas[t], z0.ndim)
    s = _per_sample(sched.sigmas[t], z0.ndim)
    return a * z0 + s * eps


def denoising_loss(pred_eps, true_eps) -> float:
    """Element-mean squared error between predicted and true noise."""
    pred_eps, true_eps = np.asarray(pred_eps, dtype=np.float64), np.asarray(true_eps, dtype=np.float64)
    if pred_eps.shape != true_eps.shape:
        raise InvalidArgumentError(f"shape mismatch {pred_eps.shape} vs {true_eps.shape}")
    diff = pred_eps - true_eps
    return float(np.mean(diff * diff))


def sample_timesteps(rng, T, size=None):
    """Uniform draw from {1, ..., T}."""
    return rng.integers(1, T + 1, size=size)


def sampling_timesteps(t_start: int, steps: int) -> np.ndarray:
    """Descending, strictly decreasing grid of at most ``steps`` points in [1, t_start]."""
    if steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    if t_start < 1:
        return np.zeros(0, dtype=int)
    grid = np.round(np.linspace(t_start, 1, min(steps, t_start))).astype(int)
    return np.unique(grid)[::-1]


def guided_eps(eps_uncond, eps_cond, scale):
    """Classifier-free guidance combination, exact at scales 0 and 1."""
    if scale == 1:
        return eps_cond
    if scale == 0:
        return eps_uncond
    return eps_uncond + scale * (eps_cond - eps_uncond)


def ddim_step(z_t, eps_hat, t, t_prev, sched: DiffusionSchedule, clip=None):
    """Deterministic (eta = 0) update from ``t`` to ``t_prev``."""
    a, s = sched.alphas[t], sched.sigmas[t]
    z0_hat = (z_t - s * eps_hat) / a
    if clip is not None:
        z0_hat = np.clip(z0_hat, -clip, clip)
    if t_prev == 0:
        return z0_hat
    return sched.alphas[t_prev] * z0_hat + sched.sigmas[t_prev] * eps_hat
