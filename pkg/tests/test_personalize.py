import csv

import numpy as np
import pytest

from dualbind.data import StyleDataset, StyleTransformSpec, build_aux_corpus, build_style_corpus
from dualbind.data.text import STYLEREF_TEMPLATE_W
from dualbind.diffusion import sample_timesteps
from dualbind.errors import ConfigurationError, InvalidArgumentError
from dualbind.nets import gradients, init_weights, table_checksum
from dualbind.personalize import (
    MultiTrainConfig,
    TrainConfig,
    _term,
    generate_prior_images,
    split_for_multi,
    ssf_loss,
    train_dreambooth,
    train_multi,
    train_single,
)


@pytest.fixture(scope="module")
def init():
    return init_weights(3)


@pytest.fixture(scope="module")
def data():
    style = StyleTransformSpec("pixelation")
    persons = build_style_corpus(style, 3, 0, seed=1)
    backgrounds = build_style_corpus(style, 0, 2, seed=2, template=STYLEREF_TEMPLATE_W)
    both = build_style_corpus(style, 3, 2, seed=1)
    aux = build_aux_corpus(StyleTransformSpec("realism_analog"), 3, seed=4)
    return persons, backgrounds, both, aux


def test_lambda_zero_is_bitwise_the_bare_term(init, data):
    _, _, both, aux = data
    ref_batch, aux_batch = both.records[:2], aux.records[:2]
    total, grads = ssf_loss(init, ref_batch, aux_batch, 0.0, init.schedule, np.random.default_rng(7))

    from dualbind.nets import encode_image

    rng = np.random.default_rng(7)
    z = encode_image(init, both.images[:2])
    t = sample_timesteps(rng, init.schedule.T, 2)
    eps = rng.standard_normal(z.shape)
    holder = {}
    bare = gradients(init, lambda p: holder.setdefault("l", _term(p, z, t, eps, [r.prompt for r in ref_batch], init.schedule)))
    assert total == float(holder["l"].data)
    assert bare.keys() == grads.keys()
    for k in bare:
        assert np.array_equal(bare[k], grads[k]), k


def test_loss_is_linear_in_lambda(init, data):
    _, _, both, aux = data
    r, a = both.records[:1], aux.records[:1]
    l0, _ = ssf_loss(init, r, a, 0.0, init.schedule, np.random.default_rng(1))
    l1, _ = ssf_loss(init, r, a, 1.0, init.schedule, np.random.default_rng(1))
    l3, _ = ssf_loss(init, r, a, 3.0, init.schedule, np.random.default_rng(1))
    assert l3 - l0 == pytest.approx(3.0 * (l1 - l0), rel=1e-12)


def test_ssf_loss_validation(init, data):
    _, _, both, aux = data
    with pytest.raises(InvalidArgumentError):
        ssf_loss(init, both.records[:2], aux.records[:1], 1.0, init.schedule, np.random.default_rng(0))
    with pytest.raises(InvalidArgumentError):
        ssf_loss(init, both.records[:1], aux.records[:1], -1.0, init.schedule, np.random.default_rng(0))


def test_config_validation():
    for bad in ({"lam": -1}, {"steps": -1}, {"learning_rate": 0}, {"batch_size": 0}, {"mode": "x"}, {"precision": "f16"}):
        with pytest.raises(ConfigurationError):
            TrainConfig(**bad)


def test_mixing_ratio(data):
    persons, backgrounds, _, _ = data
    assert MultiTrainConfig((persons, backgrounds)).q == 3 / 5
    assert MultiTrainConfig((persons, StyleDataset([], "e"))).q == 1.0


def test_multi_with_empty_second_set_equals_single(init, data):
    persons, _, _, aux = data
    cfg = TrainConfig(steps=3, learning_rate=1e-3, seed=5)
    single = train_single(cfg, persons, aux, init)
    multi = train_multi(MultiTrainConfig((persons, StyleDataset([], "e")), cfg), aux, init)
    assert table_checksum(single.weights.theta) == table_checksum(multi.weights.theta)
    assert table_checksum(single.weights.phi) == table_checksum(multi.weights.phi)
    assert [r.total_loss for r in single.trace] == [r.total_loss for r in multi.trace]


def test_steps_zero_returns_init(init, data):
    _, _, both, aux = data
    res = train_single(TrainConfig(steps=0), both, aux, init)
    assert res.trace == [] and list(res.snapshots) == [0]
    assert table_checksum(res.weights.theta) == table_checksum(init.theta)


def test_training_is_deterministic_and_freezes_autoencoder(init, data, tmp_path):
    _, _, both, aux = data
    cfg = TrainConfig(steps=4, learning_rate=1e-3, seed=2, checkpoint_every=2)
    a = train_single(cfg, both, aux, init, out_dir=tmp_path / "a")
    b = train_single(cfg, both, aux, init, out_dir=tmp_path / "b")
    for name in ("ckpt_000000.sfck", "ckpt_000002.sfck", "ckpt_000004.sfck", "loss_trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert sorted(a.snapshots) == [0, 2, 4]
    assert table_checksum(a.weights.frozen_autoencoder) == table_checksum(init.frozen_autoencoder)
    assert table_checksum(a.weights.theta) != table_checksum(init.theta)
    assert a.weights.version == init.version + 4
    with open(tmp_path / "a" / "loss_trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["step"]) for r in rows] == [1, 2, 3, 4]
    assert {r["selected_dataset"] for r in rows} == {"D1"}
    for r in rows:
        assert float(r["total_loss"]) == pytest.approx(float(r["styleref_term"]) + float(r["aux_term"]))
    assert b.losses.tolist() == a.losses.tolist()


def test_selection_frequency(init, data):
    persons, backgrounds, _, aux = data
    cfg = MultiTrainConfig((persons, backgrounds), TrainConfig(steps=40, learning_rate=1e-4, mode="multi"))
    res = train_multi(cfg, aux, init)
    sel = np.array(res.selections)
    assert set(sel) <= {0, 1}
    assert [r.selected_dataset for r in res.trace] == [f"D{k + 1}" for k in sel]


def test_empty_sets_rejected(init, data):
    _, _, both, aux = data
    with pytest.raises(ConfigurationError):
        train_single(TrainConfig(steps=1), StyleDataset([], "e"), aux, init)
    with pytest.raises(ConfigurationError):
        train_single(TrainConfig(steps=1), both, StyleDataset([], "e"), init)
    with pytest.raises(ConfigurationError):
        MultiTrainConfig((StyleDataset([], "e"), StyleDataset([], "f")))
    with pytest.raises(ConfigurationError):
        train_single(TrainConfig(steps=1), aux, aux, init)  # aux prompts lack an identifier


def test_prior_images_and_dreambooth(init, data):
    _, _, both, _ = data
    prior = generate_prior_images(init, n=2, seed=0, steps=2)
    assert len(prior) == 2 and prior.provenance == "generated"
    assert all(r.role == "aux" and "style" in r.prompt.words and not r.prompt.identifier_tokens for r in prior.records)
    res = train_dreambooth(TrainConfig(steps=1, mode="dreambooth"), both, init, n_prior=2)
    assert len(res.trace) == 1


def test_lr_schedule():
    cfg = TrainConfig(steps=11, learning_rate=1e-3)
    lrs = [cfg.lr_at(s) for s in range(1, 12)]
    assert lrs[0] == pytest.approx(1e-3)
    assert 1e-4 <= lrs[-1] < 1.2e-4
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    flat = TrainConfig(steps=11, learning_rate=1e-3, lr_schedule="constant")
    assert {flat.lr_at(s) for s in range(1, 12)} == {1e-3}
    with pytest.raises(ConfigurationError):
        TrainConfig(lr_schedule="linear")


def test_split_for_multi(data):
    _, _, both, _ = data
    d1, d2 = split_for_multi(both)
    assert len(d1) + len(d2) == len(both)
    assert all(r.content_kind in ("person", "mixed") and "[V]" in r.prompt.text for r in d1.records)
    assert all(r.content_kind == "background" and "[W]" in r.prompt.text for r in d2.records)
