"""Command-line entry points.

Exit codes: 0 success, 2 usage or configuration error, 3 data or format
error, 4 numeric failure. Every command is deterministic given its flags.
Output directories receive a ``DONE`` sentinel when complete; writing into a
completed directory again requires ``--force``.
"""

from __future__ import annotations

import argparse
import csv
import shutil
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import check_keys, read_config
from .data.corpus import (
    StyleDataset,
    build_aux_corpus,
    build_style_corpus,
    load_dataset,
    read_pgm,
    read_ppm,
    save_dataset,
    write_ppm,
)
from .data.styles import STYLE_NAMES, StyleTransformSpec, default_aux_style
from .data.text import STYLEREF_TEMPLATE, eval_prompt_set, tokenize
from .errors import ConfigurationError, FormatError, InvalidArgumentError, NumericError, VocabularyError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DONE = "DONE"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigurationError(message)


# -- run directories -------------------------------------------------------------

def _prepare_out(path, force):
    out = Path(path)
    if (out / DONE).exists():
        if not force:
            raise ConfigurationError(f"{out} is a completed run directory; pass --force to overwrite")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(out):
    (Path(out) / DONE).write_text("complete\n")


def _parse_params(items):
    params = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigurationError(f"--param expects name=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            params[k.strip()] = float(v)
        except ValueError as exc:
            raise ConfigurationError(f"--param {k}: not a number: {v!r}") from exc
    return params


def _style(name, params=None):
    return StyleTransformSpec(name, _parse_params(params))


def _load_weights(path):
    if path is None:
        from .fixtures import base_weights

        return base_weights()
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    return load_checkpoint(p)


def _images_in(path):
    root = Path(path)
    if not root.exists():
        raise FileNotFoundError(f"directory not found: {root}")
    files = sorted(root.rglob("*.ppm"))
    if not files:
        raise FormatError(f"{root}: no .ppm images found")
    return files, np.stack([read_ppm(f) for f in files])


# -- commands --------------------------------------------------------------------

def cmd_gen_corpus(args):
    style = _style(args.style, args.param)
    out = _prepare_out(args.out, args.force)
    ds = build_style_corpus(style, args.persons, args.backgrounds, args.seed, style_id=args.style_id or style.name)
    records = list(ds.records)
    if args.aux > 0:
        aux_style = _style(args.aux_style) if args.aux_style else default_aux_style(style.name)
        records += build_aux_corpus(aux_style, args.aux, args.seed).records
    path = save_dataset(StyleDataset(records, ds.style_id, "procedural"), out)
    _finish(out)
    print(f"wrote {len(records)} images to {path}")


def _dataset_dir(path):
    """A directory holding manifest.tsv, or a gen-corpus root with exactly one style inside."""
    root = Path(path)
    if (root / "manifest.tsv").exists():
        return root
    found = sorted(root.glob("*/manifest.tsv"))
    if len(found) == 1:
        return found[0].parent
    if len(found) > 1:
        raise ConfigurationError(f"{root} holds several datasets; pass one of: {', '.join(str(f.parent) for f in found)}")
    raise FileNotFoundError(f"dataset manifest not found under {root}")


def _train_config(args):
    """TrainConfig from parsed ``train`` flags; unset flags take the package defaults."""
    from .personalize import DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE, DEFAULT_TRAIN_STEPS, MULTI_STEP_FACTOR, TrainConfig

    steps = args.steps if args.steps is not None else DEFAULT_TRAIN_STEPS * (MULTI_STEP_FACTOR if args.mode == "multi" else 1)
    return TrainConfig(
        lam=args.lam, steps=steps,
        learning_rate=args.lr if args.lr is not None else DEFAULT_LEARNING_RATE,
        seed=args.seed,
        batch_size=args.batch_size if args.batch_size is not None else DEFAULT_BATCH_SIZE,
        mode=args.mode, checkpoint_every=args.checkpoint_every, precision=args.precision, lr_schedule=args.lr_schedule,
    )


def cmd_train(args):
    from .personalize import MultiTrainConfig, split_for_multi, train_dreambooth, train_multi, train_single

    cfg = _train_config(args)
    data = _dataset_dir(args.data)
    styleref = load_dataset(data, role="styleref")
    if len(styleref) == 0:
        raise ConfigurationError(f"{data}: no styleref records")
    aux = None
    if args.mode != "dreambooth":
        aux = load_dataset(data, role="aux")
        if len(aux) == 0:
            raise ConfigurationError(f"{data}: mode {args.mode} needs aux records (gen-corpus --aux N)")
    init = _load_weights(args.init)
    out = _prepare_out(args.out, args.force)
    if args.mode == "single":
        result = train_single(cfg, styleref, aux, init, out)
    elif args.mode == "multi":
        mcfg = MultiTrainConfig(split_for_multi(styleref), cfg)
        print(f"q = {mcfg.q!r}")
        result = train_multi(mcfg, aux, init, out)
    else:
        result = train_dreambooth(cfg, styleref, init, out_dir=out)
    save_checkpoint(out / "final.sfck", result.weights)
    _finish(out)
    if result.trace:
        print(f"trained {cfg.steps} steps; final loss {result.trace[-1].total_loss:.6f}")
    else:
        print("0 steps: wrote the initial checkpoint")


def cmd_sample(args):
    from .sampling import sample_images

    weights = _load_weights(args.ckpt)
    prompt = tokenize(args.prompt)
    out = _prepare_out(args.out, args.force)
    images = sample_images(weights, prompt, args.n, args.steps, args.cfg, args.seed)
    with open(out / "prompts.tsv", "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(("file", "prompt"))
        for i, img in enumerate(images):
            write_ppm(out / f"{i:04d}.ppm", img)
            w.writerow((f"{i:04d}.ppm", prompt.text))
    _finish(out)
    print(f"wrote {len(images)} images to {out}")


def cmd_stylize(args):
    from .evaluate import stylize

    weights = _load_weights(args.ckpt)
    image = read_ppm(args.input)
    out = stylize(weights, image, tokenize(args.prompt), args.t0, args.seed, args.steps, args.cfg)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_ppm(args.out, out)
    print(f"wrote {args.out}")


def _prompts_for(files, root):
    table = Path(root) / "prompts.tsv"
    if not table.exists():
        return None
    with open(table, newline="") as fh:
        mapping = {row["file"]: row["prompt"] for row in csv.DictReader(fh, delimiter="\t")}
    try:
        return [tokenize(mapping[str(f.relative_to(root))]) for f in files]
    except KeyError as exc:
        raise FormatError(f"{table}: no prompt for {exc.args[0]}") from exc


def cmd_evaluate(args):
    from .evaluate import score_images, write_metrics_csv
    from .metrics import FeatureExtractor

    gen_files, gen = _images_in(args.generated)
    _, ref = _images_in(args.reference)
    prompts = _prompts_for(gen_files, Path(args.generated))
    tower = None
    if prompts is not None:
        from .fixtures import alignment_tower

        tower = alignment_tower()
    report = score_images(
        gen, prompts, ref, FeatureExtractor(args.feature_seed), tower,
        style_id=args.style_id, checkpoint_id=args.checkpoint_id,
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(args.out, [report])
    print(f"fid={report.fid:.6f} kid_x1000={report.kid_x1000:.6f} clip={report.clip_score:.4f}")


def cmd_sweep(args):
    from .evaluate import sweep, write_metrics_csv
    from .fixtures import alignment_tower
    from .metrics import FeatureExtractor

    run = Path(args.run)
    ckpts = sorted(run.glob("ckpt_*.sfck"))
    if not ckpts:
        raise FileNotFoundError(f"no ckpt_*.sfck checkpoints in {run}")
    _, ref = _images_in(args.reference)
    triples = [(c.stem, int(c.stem.split("_")[1]), c) for c in ckpts]
    prompts = eval_prompt_set(args.prompts, args.prompt_seed)
    reports = sweep(
        triples, prompts, ref, FeatureExtractor(args.feature_seed), alignment_tower(), args.mode,
        args.per_prompt, args.seed, args.steps, args.cfg,
    )
    out = Path(args.out) if args.out else run / "metrics.csv"
    write_metrics_csv(out, reports)
    for r in reports:
        print(f"{r.checkpoint_id} step={r.step} fid={r.fid:.4f} kid_x1000={r.kid_x1000:.4f} clip={r.clip_score:.3f}")


def cmd_inspect_attn(args):
    from .evaluate import attention_report, write_attention_pgms

    weights = _load_weights(args.ckpt)
    image = read_ppm(args.image)
    mask = read_pgm(args.mask) > 0.5 if args.mask else None
    timesteps = [int(t) for t in args.timesteps.split(",")]
    report = attention_report(weights, tokenize(args.prompt), image, timesteps, mask, args.seed)
    out = _prepare_out(args.out, args.force)
    write_attention_pgms(report, out)
    with open(out / "person_fraction.tsv", "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(("token", "person_fraction", "uniform_baseline"))
        for word in report.tokens:
            frac = report.person_fraction.get(word, float("nan"))
            w.writerow((word, repr(frac), repr(report.baseline_fraction)))
            print(f"{word}\t{frac:.4f}")
    _finish(out)


# -- parser -----------------------------------------------------------------------

def _common_sampling(p):
    p.add_argument("--steps", type=int, default=30, help="reverse-diffusion steps")
    p.add_argument("--cfg", type=float, default=7.5, help="classifier-free guidance scale")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = _Parser(prog="dualbind", description="Latent-diffusion style personalization lab.")
    parser.add_argument("--config", help="key = value config file with [command] sections")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", help="render a StyleRef (+Aux) dataset")
    p.add_argument("--style", required=True, choices=STYLE_NAMES)
    p.add_argument("--param", action="append", help="style parameter name=value (repeatable)")
    p.add_argument("--persons", type=int, default=10)
    p.add_argument("--backgrounds", type=int, default=10)
    p.add_argument("--aux", type=int, default=0, help="also render N Aux images")
    p.add_argument("--aux-style", choices=STYLE_NAMES)
    p.add_argument("--style-id")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="fine-tune a checkpoint on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory holding manifest.tsv")
    p.add_argument("--mode", choices=("single", "multi", "dreambooth"), default="single")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=None, help="default 500; multi mode trains twice as long")
    p.add_argument("--lr", type=float, default=None, help="Adam peak step size (default: the tuned value)")
    p.add_argument("--lr-schedule", choices=("cosine", "constant"), default="cosine")
    p.add_argument("--batch-size", type=int, default=None, help="(StyleRef, Aux) pairs per step (default: the tuned value)")
    p.add_argument("--checkpoint-every", type=int, default=100)
    p.add_argument("--precision", choices=("float64", "float32"), default="float64")
    p.add_argument("--init", help="initial checkpoint (default: packaged base model)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate images for one prompt")
    p.add_argument("--ckpt")
    p.add_argument("--prompt", required=True)
    p.add_argument("--n", type=int, default=6)
    _common_sampling(p)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("stylize", help="SDEdit-style restyling of one PPM image")
    p.add_argument("--ckpt")
    p.add_argument("--input", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--t0", type=float, default=0.6, help="fraction of the horizon to noise to")
    _common_sampling(p)
    p.add_argument("--out", required=True, help="output .ppm path")
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("evaluate", help="FID/KID/CLIP of a generated directory against a reference")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--feature-seed", type=int, default=0)
    p.add_argument("--style-id", default="")
    p.add_argument("--checkpoint-id", default="")
    p.add_argument("--out", required=True, help="metrics.csv path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="evaluate every checkpoint of a training run")
    p.add_argument("--run", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--mode", choices=("single", "multi", "dreambooth"), default="single")
    p.add_argument("--prompts", type=int, default=20, help="size of the evaluation prompt set")
    p.add_argument("--prompt-seed", type=int, default=0)
    p.add_argument("--per-prompt", type=int, default=6)
    p.add_argument("--feature-seed", type=int, default=0)
    _common_sampling(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("inspect-attn", help="dump cross-attention heatmaps for one image")
    p.add_argument("--ckpt")
    p.add_argument("--image", required=True)
    p.add_argument("--prompt", default=STYLEREF_TEMPLATE)
    p.add_argument("--timesteps", default="100")
    p.add_argument("--mask", help="P5 PGM person mask (nonzero = person)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_inspect_attn)
    return parser


def _apply_config(parser, argv):
    """Feed ``[command]`` sections of ``--config`` in as defaults; flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = read_config(known.config)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for section, values in cfg.sections.items():
        if section not in subparsers.choices:
            raise ConfigurationError(f"{known.config}: unknown section [{section}]")
        sp = subparsers.choices[section]
        dests = {a.dest for a in sp._actions if a.dest not in ("help", "func")}
        aliases = {"lambda": "lam"}
        values = {aliases.get(k, k): v for k, v in values.items()}
        check_keys(values, dests, f"{known.config} [{section}]")
        for action in sp._actions:
            if action.dest in values:
                action.required = False
                if isinstance(action, argparse._StoreTrueAction):
                    values[action.dest] = values[action.dest].lower() in ("1", "true", "yes")
        sp.set_defaults(**values)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        args.func(args)
    except (ConfigurationError, InvalidArgumentError, VocabularyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
