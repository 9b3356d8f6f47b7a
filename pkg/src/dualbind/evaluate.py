"""Evaluation protocol: generation over a prompt set, metric reports,
attention inspection, SDEdit-style stylization and checkpoint sweeps."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .data.corpus import write_pgm
from .data.text import EvalPrompt, personalized_prompt
from .diffusion import forward_diffuse
from .errors import InvalidArgumentError
from .metrics import FeatureExtractor, clip_score, fid, kid
from .nets import LATENT_SHAPE, AttentionMap, as_prompt, decode_latent, denoise, encode_image, text_encode
from .sampling import DEFAULT_GUIDANCE, DEFAULT_STEPS, reverse_diffuse, sample_prompts

METRIC_COLUMNS = ("checkpoint_id", "step", "style_id", "fid", "kid_x1000", "clip_score", "n_generated", "n_reference")


@dataclass(frozen=True)
class MetricReport:
    fid: float
    kid: float  # raw estimator; tables show it x1000
    clip_score: float
    n_generated: int
    n_reference: int
    style_id: str = ""
    checkpoint_id: str = ""
    prompt_set_id: str = ""
    step: int = 0

    @property
    def kid_x1000(self):
        return 1000.0 * self.kid

    def row(self):
        return {
            "checkpoint_id": self.checkpoint_id,
            "step": self.step,
            "style_id": self.style_id,
            "fid": repr(self.fid),
            "kid_x1000": repr(self.kid_x1000),
            "clip_score": repr(self.clip_score),
            "n_generated": self.n_generated,
            "n_reference": self.n_reference,
        }


def write_metrics_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.row())


# -- generation + scoring --------------------------------------------------------

def generate_for_prompts(weights, prompts, n_per_prompt=6, seed=0, steps=DEFAULT_STEPS, guidance_scale=DEFAULT_GUIDANCE, chunk=192):
    """``n_per_prompt`` images for every prompt, batched; returns (images, prompt per image)."""
    flat = [as_prompt(p) for p in prompts for _ in range(n_per_prompt)]
    out = []
    for c, start in enumerate(range(0, len(flat), chunk)):
        out.append(sample_prompts(weights, flat[start : start + chunk], (seed, c), steps, guidance_scale))
    return (np.concatenate(out) if out else np.zeros((0, 3, 32, 32))), flat


def score_images(images, prompts, reference_images, extractor: FeatureExtractor, tower, **ids) -> MetricReport:
    feats = extractor(images)
    ref = extractor(reference_images)
    return MetricReport(
        fid=fid(feats, ref),
        kid=kid(feats, ref),
        clip_score=clip_score(images, prompts, tower) if tower is not None else float("nan"),
        n_generated=len(images),
        n_reference=len(reference_images),
        **ids,
    )


def evaluate_weights(
    weights,
    eval_prompts,
    reference_images,
    extractor: FeatureExtractor,
    tower=None,
    mode="single",
    n_per_prompt=6,
    seed=0,
    steps=DEFAULT_STEPS,
    guidance_scale=DEFAULT_GUIDANCE,
    **ids,
):
    """Generate for every evaluation prompt (with the mode's identifier prefix) and score.

    ``eval_prompts`` holds :class:`EvalPrompt` items or ready prompts. CLIP
    scoring reads content tokens only, so identifier prefixes do not affect it.
    Returns ``(report, images)``.
    """
    prompts = [personalized_prompt(p, mode) if isinstance(p, EvalPrompt) else as_prompt(p) for p in eval_prompts]
    images, flat = generate_for_prompts(weights, prompts, n_per_prompt, seed, steps, guidance_scale)
    return score_images(images, flat, reference_images, extractor, tower, **ids), images


# -- attention ---------------------------------------------------------------------

@dataclass
class AttentionReport:
    tokens: tuple  # words of the prompt
    maps: list  # one AttentionMap per requested timestep
    mean_map: np.ndarray  # (L, 8, 8) average over timesteps
    person_fraction: dict  # token word -> share of its attention inside the person mask
    baseline_fraction: float  # share of a uniform map inside the mask

    def fraction(self, word):
        return self.person_fraction[word]


def _mask_to_latent(mask):
    m = np.asarray(mask, dtype=np.float64)
    h, w = LATENT_SHAPE[1:]
    return m.reshape(h, m.shape[0] // h, w, m.shape[1] // w).mean(axis=(1, 3))


def attention_report(weights, prompt, image, timesteps, mask=None, seed=0) -> AttentionReport:
    """Capture the cross-attention over ``prompt`` tokens for a noised ``image``.

    The image is encoded, noised to each timestep with a seeded draw, and
    passed through the denoiser. With a 32x32 person ``mask`` the report
    includes, per token, the fraction of its attention mass falling on the
    person (mask downsampled to the 8x8 grid by area).
    """
    prompt = as_prompt(prompt)
    if not prompt.identifier_tokens:
        raise InvalidArgumentError(f"attention report needs an identifier token in {prompt.text!r}")
    timesteps = [int(t) for t in timesteps]
    if not timesteps:
        raise InvalidArgumentError("need at least one timestep")
    z0 = encode_image(weights, image)
    c = text_encode(weights, prompt)
    rng = np.random.default_rng(seed)
    maps = []
    for t in timesteps:
        zt = forward_diffuse(z0, t, rng.standard_normal(z0.shape), weights.schedule)
        _, amap = denoise(weights, zt, t, c, capture_attention=True)
        maps.append(AttentionMap(amap.per_token, t, tuple(prompt.words)))
    mean_map = np.mean([m.per_token for m in maps], axis=0)
    fractions, baseline = {}, float("nan")
    if mask is not None:
        m8 = _mask_to_latent(mask)
        baseline = float(m8.mean())
        for word, a in zip(prompt.words, mean_map):
            fractions[word] = float((a * m8).sum() / a.sum())
    return AttentionReport(tuple(prompt.words), maps, mean_map, fractions, baseline)


def write_attention_pgms(report: AttentionReport, out_dir, scale=4):
    """One PGM heatmap per (timestep, token), nearest-upsampled for viewing."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for amap in report.maps:
        for i, (word, a) in enumerate(zip(report.tokens, amap.per_token)):
            name = word.strip("[]").replace(",", "comma")
            path = out / f"t{amap.timestep:03d}_{i:02d}_{name}.pgm"
            write_pgm(path, np.kron(a, np.ones((scale, scale))))
            paths.append(path)
    return paths


# -- SDEdit-style stylization ---------------------------------------------------------

def stylize(weights, image, prompt, t0_fraction, seed=0, steps=DEFAULT_STEPS, guidance_scale=DEFAULT_GUIDANCE):
    """Noise the encoded input to ``t0 = round(t0_fraction * T)`` and denoise under ``prompt``.

    ``t0_fraction = 0`` returns the autoencoder reconstruction unchanged.
    """
    if not 0.0 <= t0_fraction <= 1.0:
        raise InvalidArgumentError(f"t0_fraction must lie in [0, 1], got {t0_fraction}")
    prompt = as_prompt(prompt)
    image = np.asarray(image, dtype=np.float64)
    single = image.ndim == 3
    z0 = encode_image(weights, image[None] if single else image)
    t0 = int(round(t0_fraction * weights.schedule.T))
    if t0 > 0:
        eps = np.random.default_rng(seed).standard_normal(z0.shape)
        zt = forward_diffuse(z0, t0, eps, weights.schedule)
        z0 = reverse_diffuse(weights, prompt, zt, t0, steps, guidance_scale)
    out = decode_latent(weights, z0)
    return out[0] if single else out


# -- sweeps --------------------------------------------------------------------------------

def sweep(
    checkpoints,
    eval_prompts,
    reference,
    extractor: FeatureExtractor,
    tower=None,
    mode="single",
    n_per_prompt=6,
    seed=0,
    steps=DEFAULT_STEPS,
    guidance_scale=DEFAULT_GUIDANCE,
    out_csv=None,
):
    """Evaluate every checkpoint of a training run.

    Args:
        checkpoints: ``(checkpoint_id, step, weights_or_path)`` triples.
        eval_prompts: Evaluation prompts (see :func:`evaluate_weights`).
        reference: A ``StyleDataset`` or an image array.
        out_csv: Optional path for ``metrics.csv``.

    Raises:
        FileNotFoundError: listing the first missing checkpoint path.
    """
    checkpoints = list(checkpoints)
    for _, _, w in checkpoints:
        if isinstance(w, (str, Path)) and not Path(w).exists():
            raise FileNotFoundError(f"missing checkpoint: {w}")
    ref_images = reference.images if hasattr(reference, "images") else np.asarray(reference)
    style_id = getattr(reference, "style_id", "")
    reports = []
    for ckpt_id, step, w in checkpoints:
        weights = load_checkpoint(w) if isinstance(w, (str, Path)) else w
        report, _ = evaluate_weights(
            weights, eval_prompts, ref_images, extractor, tower, mode, n_per_prompt, seed, steps, guidance_scale,
            style_id=style_id, checkpoint_id=str(ckpt_id), step=int(step),
        )
        reports.append(report)
    if out_csv is not None:
        write_metrics_csv(out_csv, reports)
    return reports


def report_table(reports):
    return [asdict(r) | {"kid_x1000": r.kid_x1000} for r in reports]
