"""Distribution and alignment metrics: FID, KID, and a CLIP-style score.

Image features come from a fixed-seed random convolutional network rather
than a pretrained backbone, so absolute values are only comparable within
this package; relative comparisons are what the experiments rely on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor, precision
from .data.text import IDENTIFIERS, NULL, VOCAB, WORD_TO_ID
from .errors import InvalidArgumentError
from .nets import prompt_ids
from .optim import Adam, cosine_lr

FEATURE_DIM = 64
TOWER_DIM = 32
# tokens that carry no content: identifiers, the style word, punctuation, padding
_NON_CONTENT = np.zeros(len(VOCAB), dtype=bool)
for _w in (*IDENTIFIERS, NULL, "style", ","):
    _NON_CONTENT[WORD_TO_ID[_w]] = True


# -- features --------------------------------------------------------------------

class FeatureExtractor:
    """Three random conv stages (ReLU, 2x average pooling between), global average pool to 64-d."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.weights = {}
        for name, (o, i) in {"s1": (16, 3), "s2": (32, 16), "s3": (64, 32)}.items():
            w = rng.normal(0.0, np.sqrt(2.0 / (i * 9)), (o, i, 3, 3))
            w.setflags(write=False)
            b = rng.normal(0.0, 0.1, o)
            b.setflags(write=False)
            self.weights[f"{name}.w"], self.weights[f"{name}.b"] = w, b

    def digest(self):
        h = hashlib.sha256()
        for k in sorted(self.weights):
            h.update(self.weights[k].tobytes())
        return h.hexdigest()

    def __call__(self, images, batch=256) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[1] != 3:
            raise InvalidArgumentError(f"expected (N, 3, H, W) images, got {images.shape}")
        return np.concatenate([self._forward(images[i : i + batch]) for i in range(0, len(images), batch)])

    def _forward(self, x):
        p = self.weights
        h = Tensor((x - 0.5) * 2.0)
        for stage in ("s1", "s2", "s3"):
            h = ag.relu(ag.conv2d(h, p[f"{stage}.w"], p[f"{stage}.b"], 1, 1))
            if stage != "s3":
                b, c, hh, ww = h.shape
                h = Tensor(h.data.reshape(b, c, hh // 2, 2, ww // 2, 2).mean(axis=(3, 5)))
        return h.data.mean(axis=(2, 3))


# -- FID -------------------------------------------------------------------------

def _psd_sqrt(m):
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def fid_from_stats(mu_a, cov_a, mu_b, cov_b) -> float:
    """Fréchet distance between two Gaussians given their moments.

    The cross term ``Tr((cov_a cov_b)^{1/2})`` is evaluated as the trace of
    the square root of the symmetric product ``A cov_b A`` with
    ``A = cov_a^{1/2}``; negative eigenvalues from round-off are clamped to 0.
    """
    mu_a, mu_b = np.atleast_1d(mu_a).astype(np.float64), np.atleast_1d(mu_b).astype(np.float64)
    cov_a, cov_b = np.atleast_2d(cov_a).astype(np.float64), np.atleast_2d(cov_b).astype(np.float64)
    a = _psd_sqrt(cov_a)
    prod = a @ cov_b @ a
    vals = np.linalg.eigvalsh((prod + prod.T) / 2)
    cross = np.sqrt(np.clip(vals, 0, None)).sum()
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross)
    return max(value, 0.0)


def _moments(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise InvalidArgumentError(f"{name} needs at least 2 feature rows, got shape {x.shape}")
    return x.mean(axis=0), np.cov(x, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1])


def fid(features_a, features_b) -> float:
    mu_a, cov_a = _moments(features_a, "features_a")
    mu_b, cov_b = _moments(features_b, "features_b")
    if len(mu_a) != len(mu_b):
        raise InvalidArgumentError("feature dimensions differ")
    return fid_from_stats(mu_a, cov_a, mu_b, cov_b)


# -- KID -------------------------------------------------------------------------

def polynomial_kernel(x, y):
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def kid(features_a, features_b) -> float:
    """Unbiased squared MMD under the cubic polynomial kernel (raw, not x1000)."""
    a, b = np.asarray(features_a, dtype=np.float64), np.asarray(features_b, dtype=np.float64)
    n, m = len(a), len(b)
    if a.ndim != 2 or b.ndim != 2 or n < 2 or m < 2:
        raise InvalidArgumentError("KID needs at least 2 rows in each feature set")
    kaa, kbb, kab = polynomial_kernel(a, a), polynomial_kernel(b, b), polynomial_kernel(a, b)
    # MMD^2 is unchanged by a constant kernel offset; removing one limits
    # cancellation and makes identical inputs give exactly zero
    c = kab[0, 0]
    kaa, kbb, kab = kaa - c, kbb - c, kab - c
    within_a = (kaa.sum() - np.trace(kaa)) / (n * (n - 1))
    within_b = (kbb.sum() - np.trace(kbb)) / (m * (m - 1))
    return float(within_a + within_b - 2.0 * kab.mean())


# -- two-tower alignment embedder --------------------------------------------------

def clip_score_from_embeddings(image_emb, text_emb) -> float:
    """Mean of ``100 * max(0, cos)`` over paired rows."""
    i, t = np.atleast_2d(image_emb).astype(np.float64), np.atleast_2d(text_emb).astype(np.float64)
    if i.shape != t.shape:
        raise InvalidArgumentError(f"{len(i)} image embeddings vs {len(t)} text embeddings")
    norms = np.linalg.norm(i, axis=1) * np.linalg.norm(t, axis=1)
    dots = (i * t).sum(axis=1)
    cos = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)
    return float(np.mean(100.0 * np.clip(cos, 0.0, None)))


def init_tower(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    p = {}
    for name, (o, i) in {"img.c1": (16, 3), "img.c2": (32, 16), "img.c3": (64, 32)}.items():
        p[f"{name}.w"] = rng.normal(0.0, np.sqrt(1.0 / (i * 9)), (o, i, 3, 3))
        p[f"{name}.b"] = np.zeros(o)
    p["img.proj.w"] = rng.normal(0.0, np.sqrt(1.0 / 64), (64, TOWER_DIM))
    p["img.proj.b"] = np.zeros(TOWER_DIM)
    p["txt.emb"] = rng.normal(0.0, 1.0, (len(VOCAB), TOWER_DIM))
    p["txt.proj.w"] = rng.normal(0.0, np.sqrt(1.0 / TOWER_DIM), (TOWER_DIM, TOWER_DIM))
    p["txt.proj.b"] = np.zeros(TOWER_DIM)
    return p


def tower_image_forward(p, x):
    h = Tensor((np.asarray(x) - 0.5) * 2.0)
    h = ag.silu(ag.conv2d(h, p["img.c1.w"], p["img.c1.b"], 1, 1))
    h = ag.silu(ag.conv2d(h, p["img.c2.w"], p["img.c2.b"], 2, 1))
    h = ag.silu(ag.conv2d(h, p["img.c3.w"], p["img.c3.b"], 2, 1))
    h = ag.mean(h, axis=(2, 3))
    return h @ p["img.proj.w"] + p["img.proj.b"]


def content_mask(ids, mask):
    """Valid, content-bearing token positions (identifiers and 'style' excluded)."""
    return mask & ~_NON_CONTENT[ids]


def tower_text_forward(p, prompts):
    ids, mask = prompt_ids(prompts)
    keep = content_mask(ids, mask).astype(np.float64)
    weights = keep / np.maximum(keep.sum(axis=1, keepdims=True), 1.0)
    emb = ag.take_rows(p["txt.emb"], ids)  # (B, L, D)
    pooled = ag.sum_(ag.mul(emb, weights[..., None]), axis=1)
    return pooled @ p["txt.proj.w"] + p["txt.proj.b"]


def _normalize_rows(x):
    return ag.mul(x, _rsqrt(ag.sum_(ag.mul(x, x), axis=1, keepdims=True)))


def _rsqrt(a):
    out = 1.0 / np.sqrt(a.data + 1e-12)
    return Tensor(out, _parents=(a,), _backward=lambda g: (-0.5 * g * out**3,))


def _soft_cross_entropy(logits, target):
    """Mean over rows of ``-sum(target * log_softmax(logits))``."""
    lsm = logits.data - logits.data.max(axis=1, keepdims=True)
    lsm = lsm - np.log(np.exp(lsm).sum(axis=1, keepdims=True))
    probs = np.exp(lsm)
    n = len(target)
    value = -(target * lsm).sum() / n
    return Tensor(value, _parents=(logits,), _backward=lambda g: (g * (probs - target) / n,))


@dataclass
class AlignmentTower:
    """Frozen image/text embedder used only for scoring."""

    params: dict

    def embed_images(self, images, batch=256):
        images = np.asarray(images, dtype=np.float64)
        p = {k: Tensor(v) for k, v in self.params.items()}
        return np.concatenate([tower_image_forward(p, images[i : i + batch]).data for i in range(0, len(images), batch)])

    def embed_texts(self, prompts):
        p = {k: Tensor(v) for k, v in self.params.items()}
        return tower_text_forward(p, list(prompts)).data


def clip_score(images, prompts, tower: AlignmentTower) -> float:
    images = np.asarray(images)
    if len(images) != len(prompts):
        raise InvalidArgumentError(f"{len(images)} images vs {len(prompts)} prompts")
    return clip_score_from_embeddings(tower.embed_images(images), tower.embed_texts(prompts))


def train_tower(records, steps=3000, batch=64, lr=2e-3, temperature=0.1, seed=0, callback=None) -> AlignmentTower:
    """Contrastive training on captioned records.

    Captions repeat across the corpus, so the target for each image is
    spread uniformly over every in-batch caption identical to its own.
    Records whose caption has no content tokens are skipped.
    """
    usable = []
    for r in records:
        ids, mask = prompt_ids([r.prompt])
        if content_mask(ids, mask).any():
            usable.append(r)
    images = np.stack([r.image for r in usable])
    prompts = [r.prompt for r in usable]
    rng = np.random.default_rng(seed)
    params = init_tower(seed)
    opt = Adam(lr)
    for step in range(steps):
        idx = rng.integers(0, len(usable), batch)
        texts = [prompts[i].text for i in idx]
        same = np.array([[a == b for b in texts] for a in texts], dtype=np.float64)
        target = same / same.sum(axis=1, keepdims=True)
        with precision(np.float32):
            p = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
            zi = _normalize_rows(tower_image_forward(p, images[idx]))
            zt = _normalize_rows(tower_text_forward(p, [prompts[i] for i in idx]))
            logits = ag.mul(zi @ ag.transpose(zt, (1, 0)), 1.0 / temperature)
            loss = _soft_cross_entropy(logits, target) + _soft_cross_entropy(ag.transpose(logits, (1, 0)), target)
            loss.backward()
        params = opt.step(params, {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in p.items()}, cosine_lr(step, steps, lr))
        if callback is not None:
            callback(step, float(loss.data))
    return AlignmentTower(params)
