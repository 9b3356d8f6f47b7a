"""Guided deterministic reverse diffusion and image generation."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor
from .data.text import null_prompt
from .diffusion import ddim_step, guided_eps, sampling_timesteps
from .errors import InvalidArgumentError
from .nets import LATENT_SHAPE, _const, as_prompt, decode_latent, denoiser_forward, prompt_ids, text_forward

DEFAULT_STEPS = 30
DEFAULT_GUIDANCE = 7.5


def _context(weights, prompts):
    """Encode one prompt per latent; returns (context tensor, padding mask)."""
    if len({p.tokens for p in prompts}) == 1:
        ids, _ = prompt_ids(prompts[:1])
        ctx = text_forward(_const(weights.phi), ids).data
        return Tensor(np.broadcast_to(ctx, (len(prompts),) + ctx.shape[1:])), None
    ids, mask = prompt_ids(prompts)
    return Tensor(text_forward(_const(weights.phi), ids, mask).data), mask


def latent_clip(weights):
    bound = weights.frozen_autoencoder.get("ae.latent_clip")
    return None if bound is None else float(np.asarray(bound).reshape(-1)[0])


def reverse_diffuse(weights, prompts, z_start, t_start, steps, guidance_scale):
    """Run guided DDIM from ``z_start`` at ``t_start`` down to a clean latent.

    ``prompts`` is one prompt for the whole batch or a list with one per latent.
    """
    if steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    z = np.asarray(z_start, dtype=np.float64)
    n = len(z)
    if isinstance(prompts, (list, tuple)):
        if len(prompts) != n:
            raise InvalidArgumentError(f"{len(prompts)} prompts for {n} latents")
        prompts = [as_prompt(p) for p in prompts]
    else:
        prompts = [as_prompt(prompts)] * n
    theta = _const(weights.theta)
    need_cond = guidance_scale != 0
    need_uncond = guidance_scale != 1
    cond, cond_mask = _context(weights, prompts) if need_cond else (None, None)
    uncond, _ = _context(weights, [null_prompt()] * n) if need_uncond else (None, None)
    clip = latent_clip(weights)
    grid = sampling_timesteps(int(t_start), steps)
    for i, t in enumerate(grid):
        t_prev = int(grid[i + 1]) if i + 1 < len(grid) else 0
        tt = np.full(n, int(t))
        e_c = denoiser_forward(theta, Tensor(z), tt, cond, cond_mask)[0].data if need_cond else None
        e_u = denoiser_forward(theta, Tensor(z), tt, uncond)[0].data if need_uncond else None
        z = ddim_step(z, guided_eps(e_u, e_c, guidance_scale), int(t), t_prev, weights.schedule, clip)
    return z


def sample_images(weights, prompt, n, steps=DEFAULT_STEPS, guidance_scale=DEFAULT_GUIDANCE, seed=0):
    """Generate ``n`` images for one prompt; deterministic given ``seed``."""
    prompt = as_prompt(prompt)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n,) + LATENT_SHAPE)
    z = reverse_diffuse(weights, prompt, z, weights.schedule.T, steps, guidance_scale)
    return decode_latent(weights, z)


def sample_prompts(weights, prompts, seed=0, steps=DEFAULT_STEPS, guidance_scale=DEFAULT_GUIDANCE):
    """One image per entry of ``prompts``, generated as a single batch."""
    prompts = [as_prompt(p) for p in prompts]
    z = np.random.default_rng(seed).standard_normal((len(prompts),) + LATENT_SHAPE)
    return decode_latent(weights, reverse_diffuse(weights, prompts, z, weights.schedule.T, steps, guidance_scale))


def sample(weights, prompt, steps=DEFAULT_STEPS, guidance_scale=DEFAULT_GUIDANCE, seed=0):
    """Generate a single image of shape (3, 32, 32)."""
    return sample_images(weights, prompt, 1, steps, guidance_scale, seed)[0]
