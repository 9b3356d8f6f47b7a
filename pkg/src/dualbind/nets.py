"""Autoencoder, text encoder, and cross-attention U-Net denoiser.

All three networks are written functionally over a flat ``name -> array``
parameter table so the same code serves inference (plain arrays wrapped as
constant tensors) and training (tensors that record gradients).

Shapes: images ``(B, 3, 32, 32)``; latents ``(B, 4, 8, 8)``; conditioning
``(B, L, 32)``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data.text import NULL, VOCAB, WORD_TO_ID, PromptSpec, tokenize
from .diffusion import DiffusionSchedule, make_schedule
from .errors import InvalidArgumentError, NumericError

IMAGE_SHAPE = (3, 32, 32)
LATENT_SHAPE = (4, 8, 8)
EMBED_DIM = 32
MAX_TOKENS = 24
TIME_DIM = 64
TEMB_DIM = 128
GROUPS = 8
INIT_STD = 0.02


@dataclass
class TrainableWeights:
    """Denoiser (theta), text encoder (phi), and the frozen autoencoder."""

    theta: dict
    phi: dict
    frozen_autoencoder: dict
    schedule: DiffusionSchedule = field(default_factory=make_schedule)
    version: int = 0

    def __post_init__(self):
        if set(self.theta) & set(self.phi):
            raise InvalidArgumentError("theta and phi share parameter names")

    def copy(self):
        return TrainableWeights(
            {k: v.copy() for k, v in self.theta.items()},
            {k: v.copy() for k, v in self.phi.items()},
            self.frozen_autoencoder,
            self.schedule,
            self.version,
        )

    @property
    def trainable(self):
        return {**self.theta, **self.phi}

    def with_trainable(self, params, version=None):
        theta = {k: params[k] for k in self.theta}
        phi = {k: params[k] for k in self.phi}
        return TrainableWeights(
            theta, phi, self.frozen_autoencoder, self.schedule, self.version if version is None else version
        )


def table_checksum(table: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(table):
        h.update(name.encode())
        h.update(np.ascontiguousarray(table[name], dtype="<f8").tobytes())
    return h.hexdigest()


# -- initialization -------------------------------------------------------------

def _normal(rng, shape):
    return rng.normal(0.0, INIT_STD, shape)


def _conv(rng, out_c, in_c, k, name, table, zero=False):
    table[f"{name}.w"] = np.zeros((out_c, in_c, k, k)) if zero else _normal(rng, (out_c, in_c, k, k))
    table[f"{name}.b"] = np.zeros(out_c)


def _lin(rng, n_in, n_out, name, table, bias=True):
    table[f"{name}.w"] = _normal(rng, (n_in, n_out))
    if bias:
        table[f"{name}.b"] = np.zeros(n_out)


def _norm(c, name, table):
    table[f"{name}.g"] = np.ones(c)
    table[f"{name}.b"] = np.zeros(c)


def _res_params(rng, c, name, table):
    _norm(c, f"{name}.n1", table)
    _conv(rng, c, c, 3, f"{name}.c1", table)
    _lin(rng, TEMB_DIM, c, f"{name}.t", table)
    _norm(c, f"{name}.n2", table)
    _conv(rng, c, c, 3, f"{name}.c2", table)


def init_theta(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    p = {}
    _lin(rng, TIME_DIM, TEMB_DIM, "unet.time1", p)
    _lin(rng, TEMB_DIM, TEMB_DIM, "unet.time2", p)
    _conv(rng, 32, 4, 3, "unet.conv_in", p)
    _res_params(rng, 32, "unet.res0", p)
    _norm(32, "unet.attn.n", p)
    for proj in ("q", "k", "v", "o"):
        _lin(rng, EMBED_DIM if proj in "kv" else 32, 32, f"unet.attn.{proj}", p, bias=False)
    _conv(rng, 64, 32, 3, "unet.down1", p)
    _res_params(rng, 64, "unet.res1", p)
    _conv(rng, 64, 64, 3, "unet.down2", p)
    _res_params(rng, 64, "unet.mid", p)
    _conv(rng, 64, 128, 1, "unet.merge1", p)
    _res_params(rng, 64, "unet.up1", p)
    _conv(rng, 32, 96, 1, "unet.merge0", p)
    _res_params(rng, 32, "unet.up0", p)
    _norm(32, "unet.out_n", p)
    _conv(rng, 4, 32, 3, "unet.conv_out", p, zero=True)
    return p


def init_phi(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    p = {
        "text.tok_emb": rng.normal(0.0, 1.0, (len(VOCAB), EMBED_DIM)) * 0.5,
        "text.pos_emb": _normal(rng, (MAX_TOKENS, EMBED_DIM)),
    }
    _norm(EMBED_DIM, "text.ln1", p)
    for proj in ("q", "k", "v", "o"):
        _lin(rng, EMBED_DIM, EMBED_DIM, f"text.attn.{proj}", p, bias=False)
    _norm(EMBED_DIM, "text.ln2", p)
    _lin(rng, EMBED_DIM, EMBED_DIM, "text.proj", p)
    return p


def init_autoencoder(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    p = {}
    # He-style scale: the autoencoder is trained from scratch with plain MSE.
    def conv(o, i, k, name):
        p[f"{name}.w"] = rng.normal(0.0, np.sqrt(1.0 / (i * k * k)), (o, i, k, k))
        p[f"{name}.b"] = np.zeros(o)

    conv(16, 3, 3, "ae.enc0")
    conv(32, 16, 4, "ae.enc1")
    conv(64, 32, 4, "ae.enc2")
    conv(64, 64, 3, "ae.enc3")
    conv(4, 64, 1, "ae.enc_out")
    conv(64, 4, 3, "ae.dec0")
    conv(64, 64, 3, "ae.dec1")
    conv(32, 64, 3, "ae.dec2")
    conv(16, 32, 3, "ae.dec3")
    conv(3, 16, 3, "ae.dec_out")
    p["ae.latent_shift"] = np.zeros(4)
    p["ae.latent_scale"] = np.ones(4)
    return p


def init_weights(seed: int, autoencoder: dict | None = None, schedule=None) -> TrainableWeights:
    return TrainableWeights(
        init_theta(seed),
        init_phi(seed + 1),
        autoencoder if autoencoder is not None else init_autoencoder(seed + 2),
        schedule or make_schedule(),
    )


# -- functional forward passes -------------------------------------------------

def _const(params):
    return {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}


def encoder_forward(p, x):
    h = ag.silu(ag.conv2d(x, p["ae.enc0.w"], p["ae.enc0.b"], 1, 1))
    h = ag.silu(ag.conv2d(h, p["ae.enc1.w"], p["ae.enc1.b"], 2, 1))
    h = ag.silu(ag.conv2d(h, p["ae.enc2.w"], p["ae.enc2.b"], 2, 1))
    h = ag.silu(ag.conv2d(h, p["ae.enc3.w"], p["ae.enc3.b"], 1, 1))
    return ag.conv2d(h, p["ae.enc_out.w"], p["ae.enc_out.b"])


def decoder_forward(p, z):
    h = ag.silu(ag.conv2d(z, p["ae.dec0.w"], p["ae.dec0.b"], 1, 1))
    h = ag.silu(ag.conv2d(h, p["ae.dec1.w"], p["ae.dec1.b"], 1, 1))
    h = ag.silu(ag.conv2d(ag.upsample2x(h), p["ae.dec2.w"], p["ae.dec2.b"], 1, 1))
    h = ag.silu(ag.conv2d(ag.upsample2x(h), p["ae.dec3.w"], p["ae.dec3.b"], 1, 1))
    return ag.conv2d(h, p["ae.dec_out.w"], p["ae.dec_out.b"], 1, 1)


def _attention(q, k, v, mask_bias):
    """Single-head scaled dot-product attention; returns (output, weights)."""
    scores = ag.mul(q @ ag.transpose(k, (0, 2, 1)), 1.0 / np.sqrt(q.shape[-1]))
    if mask_bias is not None:
        scores = scores + mask_bias
    w = ag.softmax(scores, axis=-1)
    return w @ v, w


def _mask_bias(mask):
    if mask is None or mask.all():
        return None
    return np.where(mask, 0.0, -1e9)[:, None, :]


def text_forward(p, ids, mask=None):
    """Embedding lookup, one pre-norm self-attention block, per-token projection."""
    b, length = ids.shape
    if length > MAX_TOKENS:
        raise InvalidArgumentError(f"prompt longer than {MAX_TOKENS} tokens")
    x = ag.take_rows(p["text.tok_emb"], ids) + ag.take_rows(p["text.pos_emb"], np.arange(length))
    h = ag.layer_norm(x, p["text.ln1.g"], p["text.ln1.b"])
    att, _ = _attention(h @ p["text.attn.q.w"], h @ p["text.attn.k.w"], h @ p["text.attn.v.w"], _mask_bias(mask))
    x = x + att @ p["text.attn.o.w"]
    h = ag.layer_norm(x, p["text.ln2.g"], p["text.ln2.b"])
    return h @ p["text.proj.w"] + p["text.proj.b"]


def timestep_embedding(t, dim=TIME_DIM):
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _res(p, h, temb, name):
    r = ag.silu(ag.group_norm(h, GROUPS, p[f"{name}.n1.g"], p[f"{name}.n1.b"]))
    r = ag.conv2d(r, p[f"{name}.c1.w"], p[f"{name}.c1.b"], 1, 1)
    tproj = temb @ p[f"{name}.t.w"] + p[f"{name}.t.b"]
    r = r + ag.reshape(tproj, tproj.shape + (1, 1))
    r = ag.silu(ag.group_norm(r, GROUPS, p[f"{name}.n2.g"], p[f"{name}.n2.b"]))
    r = ag.conv2d(r, p[f"{name}.c2.w"], p[f"{name}.c2.b"], 1, 1)
    return h + r


def denoiser_forward(p, z, t, ctx, ctx_mask=None):
    """Predict noise for latents ``z`` at timesteps ``t`` given conditioning ``ctx``.

    Returns ``(eps_tensor, attention_weights)`` where the weights have shape
    ``(B, 64, L)``: one softmax over tokens per 8x8 latent position.
    """
    z = ag.as_tensor(z)
    b = z.shape[0]
    t = np.broadcast_to(np.asarray(t), (b,))
    temb = Tensor(timestep_embedding(t)) @ p["unet.time1.w"] + p["unet.time1.b"]
    temb = ag.silu(temb) @ p["unet.time2.w"] + p["unet.time2.b"]
    temb = ag.silu(temb)

    h = ag.conv2d(z, p["unet.conv_in.w"], p["unet.conv_in.b"], 1, 1)
    h = _res(p, h, temb, "unet.res0")

    # the single cross-attention layer: 8x8 positions attend over prompt tokens
    c, hh, ww = h.shape[1:]
    x = ag.group_norm(h, GROUPS, p["unet.attn.n.g"], p["unet.attn.n.b"])
    x = ag.transpose(ag.reshape(x, (b, c, hh * ww)), (0, 2, 1))
    out, attn = _attention(
        x @ p["unet.attn.q.w"], ctx @ p["unet.attn.k.w"], ctx @ p["unet.attn.v.w"], _mask_bias(ctx_mask)
    )
    out = ag.transpose(out @ p["unet.attn.o.w"], (0, 2, 1))
    h = h + ag.reshape(out, (b, c, hh, ww))
    s0 = h

    h = ag.conv2d(h, p["unet.down1.w"], p["unet.down1.b"], 2, 1)
    h = _res(p, h, temb, "unet.res1")
    s1 = h
    h = ag.conv2d(h, p["unet.down2.w"], p["unet.down2.b"], 2, 1)
    h = _res(p, h, temb, "unet.mid")

    h = ag.concat([ag.upsample2x(h), s1], axis=1)
    h = ag.conv2d(h, p["unet.merge1.w"], p["unet.merge1.b"])
    h = _res(p, h, temb, "unet.up1")
    h = ag.concat([ag.upsample2x(h), s0], axis=1)
    h = ag.conv2d(h, p["unet.merge0.w"], p["unet.merge0.b"])
    h = _res(p, h, temb, "unet.up0")
    h = ag.silu(ag.group_norm(h, GROUPS, p["unet.out_n.g"], p["unet.out_n.b"]))
    return ag.conv2d(h, p["unet.conv_out.w"], p["unet.conv_out.b"], 1, 1), attn.data


# -- prompt batching -------------------------------------------------------------

def prompt_ids(prompts):
    """Pad token id lists into ``(B, L)`` ids and a validity mask.

    The empty prompt maps to the reserved one-token null sequence.
    """
    seqs = [list(p.tokens) or [WORD_TO_ID[NULL]] for p in prompts]
    length = max(len(s) for s in seqs)
    ids = np.full((len(seqs), length), WORD_TO_ID[NULL], dtype=np.int64)
    mask = np.zeros((len(seqs), length), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask


def as_prompt(prompt):
    return prompt if isinstance(prompt, PromptSpec) else tokenize(prompt)


# -- public operations ----------------------------------------------------------

@dataclass(frozen=True)
class ConditioningVector:
    tokens_embedded: np.ndarray  # (L, EMBED_DIM)


@dataclass(frozen=True)
class AttentionMap:
    per_token: np.ndarray  # (L, 8, 8); sums to one over tokens at every location
    timestep: int
    tokens: tuple = ()


def _check_images(images):
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 3
    if single:
        images = images[None]
    if images.shape[1:] != IMAGE_SHAPE:
        raise InvalidArgumentError(f"expected image shape {IMAGE_SHAPE}, got {images.shape[1:]}")
    return images, single


def encode_image(weights: TrainableWeights, images, batch=64) -> np.ndarray:
    """Encode images to standardized latents; accepts one image or a batch."""
    images, single = _check_images(images)
    ae = _const(weights.frozen_autoencoder)
    shift = weights.frozen_autoencoder["ae.latent_shift"][None, :, None, None]
    scale = weights.frozen_autoencoder["ae.latent_scale"][None, :, None, None]
    out = np.concatenate(
        [encoder_forward(ae, Tensor(images[i : i + batch])).data for i in range(0, len(images), batch)]
    )
    out = (out - shift) / scale
    return out[0] if single else out


def decode_latent(weights: TrainableWeights, z, batch=64) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 3
    if single:
        z = z[None]
    if z.shape[1:] != LATENT_SHAPE:
        raise InvalidArgumentError(f"expected latent shape {LATENT_SHAPE}, got {z.shape[1:]}")
    ae = _const(weights.frozen_autoencoder)
    shift = weights.frozen_autoencoder["ae.latent_shift"][None, :, None, None]
    scale = weights.frozen_autoencoder["ae.latent_scale"][None, :, None, None]
    z = z * scale + shift
    out = np.concatenate([decoder_forward(ae, Tensor(z[i : i + batch])).data for i in range(0, len(z), batch)])
    out = np.clip(out, 0.0, 1.0)
    return out[0] if single else out


def text_encode(weights: TrainableWeights, prompt) -> ConditioningVector:
    prompt = as_prompt(prompt)
    ids, _ = prompt_ids([prompt])
    out = text_forward(_const(weights.phi), ids)
    return ConditioningVector(out.data[0])


def denoise(weights: TrainableWeights, z_t, t, c: ConditioningVector, capture_attention=False):
    """Predict the noise in ``z_t``.

    ``z_t`` may be one latent or a batch; ``c`` is broadcast across the batch.
    Returns ``(eps, attention)`` with ``attention`` an :class:`AttentionMap`
    (or a list of them for a batch) when ``capture_attention`` is set.
    """
    z = np.asarray(z_t, dtype=np.float64)
    single = z.ndim == 3
    if single:
        z = z[None]
    if z.shape[1:] != LATENT_SHAPE:
        raise InvalidArgumentError(f"expected latent shape {LATENT_SHAPE}, got {z.shape[1:]}")
    weights.schedule.check_t(t)
    ctx = np.asarray(c.tokens_embedded)
    if ctx.ndim != 2 or ctx.shape[1] != EMBED_DIM:
        raise InvalidArgumentError(f"conditioning must be (L, {EMBED_DIM}), got {ctx.shape}")
    ctx = np.broadcast_to(ctx, (len(z),) + ctx.shape)
    eps, attn = denoiser_forward(_const(weights.theta), Tensor(z), t, Tensor(ctx))
    eps = eps.data[0] if single else eps.data
    if not capture_attention:
        return eps, None
    tt = np.broadcast_to(np.asarray(t), (len(z),))
    maps = [
        AttentionMap(a.T.reshape(-1, *LATENT_SHAPE[1:]).copy(), int(ti)) for a, ti in zip(attn, tt)
    ]
    return eps, (maps[0] if single else maps)


def gradients(weights: TrainableWeights, loss_closure) -> dict:
    """Gradients of a scalar loss with respect to every theta and phi tensor.

    ``loss_closure(params)`` receives a dict of tensors (trainable ones
    record gradients, autoencoder ones are constants) and returns a scalar
    tensor. Parameters the loss does not touch get zero gradients.
    """
    params = {k: Tensor(v, requires_grad=True) for k, v in weights.trainable.items()}
    params.update(_const(weights.frozen_autoencoder))
    loss = loss_closure(params)
    loss = ag.as_tensor(loss)
    value = float(np.asarray(loss.data).reshape(-1)[0]) if loss.data.size == 1 else np.nan
    if loss.data.size != 1 or not np.isfinite(value):
        raise NumericError(f"loss must be a finite scalar, got {loss.data!r}")
    if loss.requires_grad:
        loss.backward()
    return {
        k: (params[k].grad if params[k].grad is not None else np.zeros_like(v))
        for k, v in weights.trainable.items()
    }


def encode_prompts(params, prompts):
    """Tensor-level text encoding of a prompt list, for use inside loss closures."""
    ids, mask = prompt_ids(prompts)
    return text_forward(params, ids, mask), mask


def attention_of_zeroed_values(weights: TrainableWeights) -> TrainableWeights:
    """Copy of ``weights`` with the cross-attention value projection zeroed."""
    w = weights.copy()
    w.theta["unet.attn.v.w"] = np.zeros_like(w.theta["unet.attn.v.w"])
    return w
