"""One-off pretraining of the frozen autoencoder and the base text-to-image model.

Both recipes run once to produce the committed fixture checkpoints; the
personalization code only ever starts from those checkpoints.
"""

from __future__ import annotations

import logging

import numpy as np

from . import autograd as ag
from .autograd import Tensor, precision
from .data.corpus import _record_rng, build_base_corpus, render_scene
from .data.styles import STYLE_NAMES, StyleTransformSpec
from .data.text import null_prompt
from .diffusion import forward_diffuse, sample_timesteps
from .checkpoint import quantize_weights
from .nets import (
    TrainableWeights,
    _const,
    decode_latent,
    decoder_forward,
    denoiser_forward,
    encode_image,
    encode_prompts,
    encoder_forward,
    gradients,
    init_autoencoder,
    init_weights,
)
from .optim import Adam, cosine_lr

log = logging.getLogger(__name__)

LATENT_PENALTY = 1e-3


def autoencoder_corpus(n_base, n_per_style, seed):
    """Unstyled base scenes plus a slice of every style, so styled inputs reconstruct too."""
    images = [r.image for r in build_base_corpus(n_base, seed)]
    kinds = ("person", "background", "mixed")
    for s, name in enumerate(STYLE_NAMES):
        style = StyleTransformSpec(name)
        for i in range(n_per_style):
            img, _, _ = render_scene(kinds[i % 3], _record_rng(seed + 1 + s, i), style)
            images.append(img)
    return np.stack(images)


def train_autoencoder(images, steps=4000, batch=16, lr=2e-3, seed=0):
    """Fit the autoencoder with MSE reconstruction, then store latent statistics.

    Returns the autoencoder table including ``ae.latent_shift``,
    ``ae.latent_scale`` (per-channel standardization) and ``ae.latent_clip``
    (a bound on standardized latents used by the sampler).
    """
    rng = np.random.default_rng(seed)
    table = init_autoencoder(seed)
    trainable = {k: v for k, v in table.items() if not k.startswith("ae.latent")}
    opt = Adam(lr)
    for step in range(steps):
        idx = rng.integers(0, len(images), batch)
        with precision(np.float32):
            params = {k: Tensor(v, requires_grad=True) for k, v in trainable.items()}
            x = Tensor(images[idx])
            z = encoder_forward(params, x)
            rec = ag.mse(decoder_forward(params, z), images[idx])
            loss = rec + ag.mul(ag.mse(z, np.zeros(z.shape)), LATENT_PENALTY)
            loss.backward()
        trainable = opt.step(trainable, {k: p.grad for k, p in params.items()}, cosine_lr(step, steps, lr))
        if step % 500 == 0:
            log.info("autoencoder step %d reconstruction %.5f", step, float(rec.data))
    table.update(trainable)
    ae = _const(table)
    z = np.concatenate([encoder_forward(ae, Tensor(images[i : i + 256])).data for i in range(0, len(images), 256)])
    table["ae.latent_shift"] = z.mean(axis=(0, 2, 3))
    table["ae.latent_scale"] = z.std(axis=(0, 2, 3))
    zs = (z - table["ae.latent_shift"][None, :, None, None]) / table["ae.latent_scale"][None, :, None, None]
    table["ae.latent_clip"] = np.array([1.1 * np.abs(zs).max()])
    return table


def reconstruction_mse(weights, images):
    return float(np.mean((decode_latent(weights, encode_image(weights, images)) - images) ** 2))


def diffusion_batch_loss(params, weights, z0, prompts, rng):
    """Element-mean denoising loss for a batch of (latent, prompt) pairs."""
    t = sample_timesteps(rng, weights.schedule.T, len(z0))
    eps = rng.standard_normal(z0.shape)
    zt = forward_diffuse(z0, t, eps, weights.schedule)
    ctx, mask = encode_prompts(params, prompts)
    pred, _ = denoiser_forward(params, Tensor(zt), t, ctx, mask)
    return ag.mse(pred, eps)


def pretrain_base(
    autoencoder, records, steps=12000, batch=32, lr=1e-3, null_prob=0.1, seed=0, callback=None
) -> TrainableWeights:
    """Train theta and phi from scratch on captioned records.

    A fraction ``null_prob`` of captions is replaced by the null prompt so
    the model also learns the unconditional prediction used by guidance.
    """
    weights = init_weights(seed, autoencoder=autoencoder)
    latents = encode_image(weights, np.stack([r.image for r in records]))
    prompts = [r.prompt for r in records]
    null = null_prompt()
    rng = np.random.default_rng(seed)
    opt = Adam(lr)
    params = weights.trainable
    for step in range(steps):
        idx = rng.integers(0, len(records), batch)
        drop = rng.random(batch) < null_prob
        batch_prompts = [null if d else prompts[i] for i, d in zip(idx, drop)]
        with precision(np.float32):
            holder = {}
            grads = gradients(
                weights.with_trainable(params),
                lambda p: holder.setdefault("loss", diffusion_batch_loss(p, weights, latents[idx], batch_prompts, rng)),
            )
        params = opt.step(params, grads, cosine_lr(step, steps, lr, warmup=200))
        if callback is not None:
            callback(step, float(holder["loss"].data))
    return weights.with_trainable(params)


# Fixture recipe. Changing any of these changes the committed checkpoints.
AE_RECIPE = {"n_base": 3000, "n_per_style": 250, "corpus_seed": 5, "steps": 4000, "seed": 0}
BASE_RECIPE = {"n_records": 6000, "corpus_seed": 11, "steps": 20000, "batch": 32, "lr": 1e-3, "seed": 0}
TOWER_RECIPE = {"n_records": 4000, "corpus_seed": 21, "steps": 2000, "seed": 0}


def build_autoencoder_fixture(recipe=AE_RECIPE):
    images = autoencoder_corpus(recipe["n_base"], recipe["n_per_style"], recipe["corpus_seed"])
    return train_autoencoder(images, steps=recipe["steps"], seed=recipe["seed"])


def build_base_fixture(autoencoder, recipe=BASE_RECIPE, callback=None):
    records = build_base_corpus(recipe["n_records"], recipe["corpus_seed"])
    ae = quantize_weights(init_weights(0, autoencoder=autoencoder)).frozen_autoencoder
    weights = pretrain_base(
        ae, records, steps=recipe["steps"], batch=recipe["batch"], lr=recipe["lr"], seed=recipe["seed"], callback=callback
    )
    return quantize_weights(weights)


def build_tower_fixture(recipe=TOWER_RECIPE, callback=None):
    from .metrics import train_tower

    records = build_base_corpus(recipe["n_records"], recipe["corpus_seed"])
    return train_tower(records, steps=recipe["steps"], seed=recipe["seed"], callback=callback)
