import csv

import numpy as np
import pytest

from dualbind.checkpoint import quantize_weights, save_checkpoint
from dualbind.data import StyleTransformSpec, build_reference_corpus, build_style_corpus
from dualbind.data.text import eval_prompt_set, tokenize
from dualbind.errors import InvalidArgumentError
from dualbind.evaluate import (
    METRIC_COLUMNS,
    _mask_to_latent,
    attention_report,
    evaluate_weights,
    stylize,
    sweep,
    write_attention_pgms,
)
from dualbind.metrics import FeatureExtractor, AlignmentTower, init_tower
from dualbind.nets import decode_latent, encode_image, init_weights


@pytest.fixture(scope="module")
def weights():
    return quantize_weights(init_weights(4))


@pytest.fixture(scope="module")
def persons():
    return build_style_corpus(StyleTransformSpec("pixelation"), 4, 0, seed=3)


def test_attention_maps_are_normalized(weights, persons):
    r = persons.records[0]
    rep = attention_report(weights, tokenize("a photo of [V] style"), r.image, [20, 150], r.mask)
    assert rep.tokens == ("a", "photo", "of", "[V]", "style")
    assert len(rep.maps) == 2 and rep.mean_map.shape == (5, 8, 8)
    for amap in rep.maps:
        # every latent position distributes one unit of attention over the prompt tokens
        np.testing.assert_allclose(amap.per_token.sum(axis=0), 1.0, atol=1e-12)
    assert rep.baseline_fraction == pytest.approx(r.mask.mean())
    assert all(0.0 <= f <= 1.0 for f in rep.person_fraction.values())


def test_attention_requires_identifier(weights, persons):
    with pytest.raises(InvalidArgumentError):
        attention_report(weights, tokenize("a photo of style"), persons.images[0], [50])


def test_mask_downsampling_preserves_area():
    m = np.zeros((32, 32))
    m[4:20, 8:16] = 1
    assert _mask_to_latent(m).mean() == m.mean()


def test_attention_pgms(tmp_path, weights, persons):
    rep = attention_report(weights, "a photo of [V] style", persons.images[0], [60], persons.records[0].mask)
    paths = write_attention_pgms(rep, tmp_path)
    assert len(paths) == 5 and paths[3].name == "t060_03_V.pgm"


def test_stylize_t0_zero_is_reconstruction(weights, persons):
    img = persons.images[1]
    out = stylize(weights, img, "a photo of [V] style", 0.0)
    np.testing.assert_array_equal(out, decode_latent(weights, encode_image(weights, img[None]))[0])
    with pytest.raises(InvalidArgumentError):
        stylize(weights, img, "a photo of [V] style", 1.5)


def test_stylize_is_deterministic(weights, persons):
    a = stylize(weights, persons.images[:2], "a photo of [V] style", 0.5, seed=3, steps=3)
    b = stylize(weights, persons.images[:2], "a photo of [V] style", 0.5, seed=3, steps=3)
    assert a.shape == (2, 3, 32, 32) and np.array_equal(a, b)


def test_evaluate_and_sweep(tmp_path, weights):
    ref = build_reference_corpus(StyleTransformSpec("pixelation"), 10, seed=0)
    prompts = eval_prompt_set(5, seed=0)
    tower = AlignmentTower(init_tower(0))
    ext = FeatureExtractor(0)
    rep, imgs = evaluate_weights(weights, prompts, ref.images, ext, tower, n_per_prompt=2, steps=2)
    assert imgs.shape == (10, 3, 32, 32) and rep.n_generated == 10 and rep.n_reference == 10
    assert rep.fid >= 0 and 0 <= rep.clip_score <= 100
    save_checkpoint(tmp_path / "c.sfck", weights)
    kw = dict(extractor=ext, tower=tower, n_per_prompt=2, steps=2)
    reports = sweep([("a", 0, weights), ("b", 5, tmp_path / "c.sfck")], prompts, ref, out_csv=tmp_path / "m.csv", **kw)
    assert reports[0].fid == reports[1].fid == rep.fid  # same weights, same seeds
    with open(tmp_path / "m.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == METRIC_COLUMNS and [r["step"] for r in rows] == ["0", "5"]
    with pytest.raises(FileNotFoundError, match="missing.sfck"):
        sweep([("a", 0, weights), ("m", 1, tmp_path / "missing.sfck")], prompts, ref, **kw)
