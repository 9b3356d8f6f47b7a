"""Fixture corpora and ablation arms shared by the acceptance suite and demos.

Every arm fine-tunes the packaged base model on the fixture style with the
same seed, step count and evaluation protocol, so arms differ only in the
data they are given:

* ``mixed``: 10 portraits + 10 landscapes as StyleRef (the reference setup),
* ``persons`` / ``backgrounds``: 20 StyleRef images of one content kind,
* ``dreambooth``: the mixed StyleRef set with Aux images sampled from the
  frozen model instead of the curated person-only Aux set,
* ``multi``: portraits bound to ``[V]`` and landscapes to ``[W]``; it
  trains for ``MULTI_STEP_FACTOR`` times the single-identifier step count.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data.corpus import StyleDataset, build_aux_corpus, build_reference_corpus, build_style_corpus
from .data.styles import StyleTransformSpec, default_aux_style
from .data.text import STYLEREF_TEMPLATE, eval_prompt_set, tokenize
from .evaluate import MetricReport, evaluate_weights, score_images
from .metrics import FeatureExtractor
from .personalize import (
    MULTI_STEP_FACTOR,
    MultiTrainConfig,
    TrainConfig,
    TrainResult,
    split_for_multi,
    train_dreambooth,
    train_multi,
    train_single,
)
from .sampling import DEFAULT_GUIDANCE, DEFAULT_STEPS, sample_images

FIXTURE_STYLE = "pixelation"
ARMS = ("mixed", "persons", "backgrounds", "dreambooth", "multi")


@dataclass
class FixtureSet:
    style: StyleTransformSpec
    mixed: StyleDataset
    persons: StyleDataset
    backgrounds: StyleDataset
    aux: StyleDataset
    reference: StyleDataset
    eval_prompts: list


def fixture_set(style=FIXTURE_STYLE, seed=0, n_reference=500, n_eval_prompts=50) -> FixtureSet:
    """The committed fixture corpora for one style.

    StyleRef arms draw from disjoint seeds of the same renderer; the
    reference set is held out (its own seed range) and follows the
    evaluation prompt mix.
    """
    spec = style if isinstance(style, StyleTransformSpec) else StyleTransformSpec(style)
    return FixtureSet(
        style=spec,
        mixed=build_style_corpus(spec, 10, 10, seed),
        persons=build_style_corpus(spec, 20, 0, seed + 1),
        backgrounds=build_style_corpus(spec, 0, 20, seed + 2),
        aux=build_aux_corpus(default_aux_style(spec.name), 20, seed + 3),
        reference=build_reference_corpus(spec, n_reference, seed + 4),
        eval_prompts=eval_prompt_set(n_eval_prompts, seed),
    )


def run_arm(arm, fixtures: FixtureSet, init, cfg: TrainConfig, out_dir=None, callback=None) -> TrainResult:
    """Fine-tune ``init`` for one ablation arm."""
    if arm == "mixed":
        return train_single(cfg, fixtures.mixed, fixtures.aux, init, out_dir, callback)
    if arm == "persons":
        return train_single(cfg, fixtures.persons, fixtures.aux, init, out_dir, callback)
    if arm == "backgrounds":
        return train_single(cfg, fixtures.backgrounds, fixtures.aux, init, out_dir, callback)
    if arm == "dreambooth":
        return train_dreambooth(cfg, fixtures.mixed, init, n_prior=len(fixtures.aux), out_dir=out_dir, callback=callback)
    if arm == "multi":
        mcfg = MultiTrainConfig(split_for_multi(fixtures.mixed), replace(cfg, steps=MULTI_STEP_FACTOR * cfg.steps, mode="multi"))
        return train_multi(mcfg, fixtures.aux, init, out_dir, callback)
    raise ValueError(f"unknown arm {arm!r}; expected one of {ARMS}")


def arm_mode(arm):
    return "multi" if arm == "multi" else "single"


def evaluate_arm(
    weights, arm, fixtures: FixtureSet, extractor: FeatureExtractor, tower=None, categories=None,
    n_per_prompt=6, seed=0, steps=DEFAULT_STEPS, guidance_scale=DEFAULT_GUIDANCE, **ids,
) -> MetricReport:
    """Score ``weights`` on the fixture evaluation prompts (optionally one category only)."""
    prompts = [p for p in fixtures.eval_prompts if categories is None or p.category in categories]
    report, _ = evaluate_weights(
        weights, prompts, fixtures.reference.images, extractor, tower, arm_mode(arm), n_per_prompt, seed, steps,
        guidance_scale, style_id=fixtures.reference.style_id, **ids,
    )
    return report


def identifier_fid(weights, fixtures: FixtureSet, extractor: FeatureExtractor, n=120, seed=0, steps=DEFAULT_STEPS,
                   guidance_scale=DEFAULT_GUIDANCE, **ids) -> MetricReport:
    """FID of images generated from the bare ``a photo of [V] style`` prompt against the reference."""
    prompt = tokenize(STYLEREF_TEMPLATE)
    images = sample_images(weights, prompt, n, steps, guidance_scale, seed)
    return score_images(images, [prompt] * n, fixtures.reference.images, extractor, None, **ids)


def loss_ratio(losses, window=50):
    """Mean of the last ``window`` losses over the mean of the first ``window``."""
    losses = np.asarray(losses, dtype=np.float64)
    return float(losses[-window:].mean() / losses[:window].mean())
