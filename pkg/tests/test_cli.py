import numpy as np
import pytest

from dualbind.checkpoint import save_checkpoint
from dualbind.cli import main
from dualbind.data import read_ppm, write_pgm
from dualbind.nets import init_weights


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("w") / "init.sfck"
    save_checkpoint(path, init_weights(2))
    return path


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("c") / "corpus"
    assert main(["gen-corpus", "--style", "pixelation", "--persons", "3", "--backgrounds", "2", "--aux", "2", "--out", str(out)]) == 0
    return out


def files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_gen_corpus_is_deterministic(tmp_path, corpus):
    assert (corpus / "DONE").exists()
    out = tmp_path / "again"
    assert main(["gen-corpus", "--style", "pixelation", "--persons", "3", "--backgrounds", "2", "--aux", "2", "--out", str(out)]) == 0
    assert files(out) == files(corpus)


def test_done_sentinel_requires_force(corpus, capsys):
    args = ["gen-corpus", "--style", "pixelation", "--persons", "3", "--backgrounds", "2", "--aux", "2", "--out", str(corpus)]
    assert main(args) == 2
    assert "--force" in capsys.readouterr().err
    before = files(corpus)
    assert main(args + ["--force"]) == 0
    assert files(corpus) == before


def test_train_and_sample_are_deterministic(tmp_path, corpus, ckpt, capsys):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        argv = ["train", "--data", str(corpus), "--init", str(ckpt), "--steps", "2", "--checkpoint-every", "1", "--lr", "1e-3", "--out", str(out)]
        assert main(argv) == 0
        runs.append(files(out))
    assert runs[0] == runs[1]
    assert {"ckpt_000000.sfck", "ckpt_000001.sfck", "ckpt_000002.sfck", "final.sfck", "loss_trace.csv", "DONE"} == set(runs[0])
    assert runs[0]["final.sfck"] == runs[0]["ckpt_000002.sfck"]
    samples = []
    for name in ("sa", "sb"):
        argv = ["sample", "--ckpt", str(tmp_path / "a" / "final.sfck"), "--prompt", "a photo of [V] style", "--n", "2", "--steps", "2", "--out", str(tmp_path / name)]
        assert main(argv) == 0
        samples.append(files(tmp_path / name))
    assert samples[0] == samples[1] and "0001.ppm" in samples[0]


def test_multi_prints_q(tmp_path, corpus, ckpt, capsys):
    argv = ["train", "--data", str(corpus), "--mode", "multi", "--init", str(ckpt), "--steps", "1", "--out", str(tmp_path / "m")]
    assert main(argv) == 0
    assert "q = 0.6" in capsys.readouterr().out


def test_config_defaults_and_unknown_keys(tmp_path, corpus, ckpt):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"[train]\ndata = {corpus}\ninit = {ckpt}\nsteps = 1\nlambda = 0.5\n")
    assert main(["--config", str(cfg), "train", "--out", str(tmp_path / "r")]) == 0
    assert len((tmp_path / "r" / "loss_trace.csv").read_text().splitlines()) == 2
    cfg.write_text("[train]\nbogus = 1\n")
    assert main(["--config", str(cfg), "train", "--data", str(corpus), "--out", str(tmp_path / "s")]) == 2
    cfg.write_text("[nosuchcommand]\nx = 1\n")
    assert main(["--config", str(cfg), "train", "--data", str(corpus), "--out", str(tmp_path / "s")]) == 2


def test_exit_codes(tmp_path, corpus, ckpt):
    assert main([]) == 2
    assert main(["train", "--data", str(corpus), "--out", str(tmp_path / "x"), "--steps", "-1", "--init", str(ckpt)]) == 2
    assert main(["sample", "--ckpt", str(ckpt), "--prompt", "a photo of a unicorn", "--out", str(tmp_path / "v")]) == 2
    bad = tmp_path / "bad.sfck"
    bad.write_bytes(ckpt.read_bytes()[:100])
    assert main(["sample", "--ckpt", str(bad), "--prompt", "a photo of style", "--out", str(tmp_path / "y")]) == 3
    assert main(["sample", "--ckpt", str(tmp_path / "none.sfck"), "--prompt", "a photo of style", "--out", str(tmp_path / "z")]) == 3
    assert main(["train", "--data", str(tmp_path / "nodata"), "--out", str(tmp_path / "w")]) == 3


def test_stylize_evaluate_and_attention(tmp_path, corpus, ckpt, capsys):
    img = sorted(corpus.rglob("styleref/*.ppm"))[0]
    out = tmp_path / "st.ppm"
    assert main(["stylize", "--ckpt", str(ckpt), "--input", str(img), "--prompt", "a photo of [V] style", "--t0", "0.3", "--steps", "2", "--out", str(out)]) == 0
    assert read_ppm(out).shape == (3, 32, 32)
    gen = tmp_path / "gen"
    assert main(["sample", "--ckpt", str(ckpt), "--prompt", "a photo of [V] style, a sea", "--n", "3", "--steps", "2", "--out", str(gen)]) == 0
    assert main(["evaluate", "--generated", str(gen), "--reference", str(corpus), "--out", str(tmp_path / "m.csv")]) == 0
    assert (tmp_path / "m.csv").read_text().startswith("checkpoint_id,step,style_id,fid")
    mask = tmp_path / "mask.pgm"
    m = np.zeros((32, 32))
    m[8:24, 10:22] = 1
    write_pgm(mask, m)
    attn = tmp_path / "attn"
    argv = ["inspect-attn", "--ckpt", str(ckpt), "--image", str(img), "--mask", str(mask), "--timesteps", "50,100", "--out", str(attn)]
    assert main(argv) == 0
    assert len(list(attn.glob("*.pgm"))) == 10
    assert (attn / "person_fraction.tsv").read_text().splitlines()[0] == "token\tperson_fraction\tuniform_baseline"


def test_sweep_missing_run(tmp_path, corpus):
    assert main(["sweep", "--run", str(tmp_path / "nothing"), "--reference", str(corpus)]) == 3


def test_train_defaults_double_steps_for_multi():
    from dualbind.cli import _train_config, build_parser
    from dualbind.personalize import DEFAULT_LEARNING_RATE, DEFAULT_TRAIN_STEPS, MULTI_STEP_FACTOR

    parser = build_parser()
    single = _train_config(parser.parse_args(["train", "--data", "x", "--out", "y"]))
    multi = _train_config(parser.parse_args(["train", "--data", "x", "--out", "y", "--mode", "multi"]))
    pinned = _train_config(parser.parse_args(["train", "--data", "x", "--out", "y", "--mode", "multi", "--steps", "7"]))
    assert single.steps == DEFAULT_TRAIN_STEPS and single.learning_rate == DEFAULT_LEARNING_RATE
    assert multi.steps == MULTI_STEP_FACTOR * DEFAULT_TRAIN_STEPS
    assert pinned.steps == 7


def test_dataset_dir_resolution(tmp_path, corpus):
    from dualbind.cli import _dataset_dir
    from dualbind.errors import ConfigurationError

    inner = corpus / "pixelation"
    assert _dataset_dir(corpus) == inner
    assert _dataset_dir(inner) == inner
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        (tmp_path / name / "manifest.tsv").write_text("")
    with pytest.raises(ConfigurationError):
        _dataset_dir(tmp_path)
    with pytest.raises(FileNotFoundError):
        _dataset_dir(tmp_path / "a" / "missing")
