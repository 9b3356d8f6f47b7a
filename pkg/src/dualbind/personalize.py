"""Dual-binding fine-tuning: single-token, multi-token and DreamBooth modes.

Every iteration draws one (StyleRef, Aux) pair per batch element, a single
shared timestep for both members of the pair, and independent noises for
each; the loss is the StyleRef denoising term plus ``lam`` times the Aux
term. DreamBooth is the same loop with the Aux set sampled from the frozen
model instead of curated.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor, precision
from .checkpoint import save_checkpoint
from .data.corpus import Record, StyleDataset, retemplate, subset
from .data.text import AUX_TEMPLATE, STYLEREF_TEMPLATE, STYLEREF_TEMPLATE_W, tokenize
from .diffusion import forward_diffuse, sample_timesteps
from .errors import ConfigurationError, InvalidArgumentError
from .nets import TrainableWeights, denoiser_forward, encode_image, encode_prompts, gradients
from .optim import Adam, cosine_lr
from .sampling import DEFAULT_GUIDANCE, DEFAULT_STEPS, sample_images

MODES = ("dreambooth", "single", "multi")
LR_SCHEDULES = ("cosine", "constant")
# two identifiers split the same images, so multi-token runs default to twice the steps
MULTI_STEP_FACTOR = 2
DEFAULT_TRAIN_STEPS = 500
DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_BATCH_SIZE = 32
TRACE_COLUMNS = ("step", "total_loss", "styleref_term", "aux_term", "selected_dataset")


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters shared by all three modes.

    Attributes:
        lam: Weight of the Aux term.
        steps: Number of optimizer steps.
        learning_rate: Adam step size.
        seed: Seeds every draw of the run.
        batch_size: (StyleRef, Aux) pairs averaged per step.
        mode: One of ``MODES``.
        checkpoint_every: Snapshot interval in steps; 0 keeps only the
            initial and final weights.
        precision: ``"float64"`` or ``"float32"`` arithmetic for the
            forward/backward pass.
        lr_schedule: ``"cosine"`` (decay to a tenth of the peak, no warmup)
            or ``"constant"``.
    """

    lam: float = 1.0
    steps: int = DEFAULT_TRAIN_STEPS
    learning_rate: float = DEFAULT_LEARNING_RATE
    seed: int = 0
    batch_size: int = DEFAULT_BATCH_SIZE
    mode: str = "single"
    checkpoint_every: int = 0
    precision: str = "float64"
    lr_schedule: str = "cosine"

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if self.steps < 0:
            raise ConfigurationError(f"steps must be >= 0, got {self.steps}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {self.batch_size}")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.precision not in ("float64", "float32"):
            raise ConfigurationError(f"precision must be float64 or float32, got {self.precision!r}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigurationError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")

    def lr_at(self, step):
        """Step size for 1-based optimizer ``step``."""
        if self.lr_schedule == "constant":
            return self.learning_rate
        return cosine_lr(step - 1, self.steps, self.learning_rate, warmup=0)


@dataclass(frozen=True)
class MultiTrainConfig:
    """Two StyleRef components: persons bound to ``[V]``, backgrounds to ``[W]``."""

    datasets: tuple
    base: TrainConfig = field(default_factory=lambda: TrainConfig(mode="multi"))

    def __post_init__(self):
        if len(self.datasets) != 2:
            raise ConfigurationError("multi-token training takes exactly two StyleRef datasets")
        if sum(len(d) for d in self.datasets) == 0:
            raise ConfigurationError("both StyleRef datasets are empty")

    @property
    def q(self) -> float:
        n1, n2 = len(self.datasets[0]), len(self.datasets[1])
        return n1 / (n1 + n2)


@dataclass(frozen=True)
class TraceRow:
    step: int
    total_loss: float
    styleref_term: float
    aux_term: float
    selected_dataset: str


@dataclass
class TrainResult:
    weights: TrainableWeights
    trace: list
    selections: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)  # step -> TrainableWeights

    @property
    def losses(self):
        return np.array([r.total_loss for r in self.trace])


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in trace:
            w.writerow((r.step, repr(r.total_loss), repr(r.styleref_term), repr(r.aux_term), r.selected_dataset))


# -- the dual-binding objective -------------------------------------------------

def _term(params, z0, t, eps, prompts, sched):
    zt = forward_diffuse(z0, t, eps, sched)
    ctx, mask = encode_prompts(params, prompts)
    pred, _ = denoiser_forward(params, Tensor(zt), t, ctx, mask)
    return ag.mse(pred, eps)


def _draw(rng, sched, z_ref, z_aux):
    """Shared timestep per pair, then independent StyleRef and Aux noises."""
    t = sample_timesteps(rng, sched.T, len(z_ref))
    eps = rng.standard_normal(z_ref.shape)
    eps_aux = rng.standard_normal(z_aux.shape)
    return t, eps, eps_aux


def _pair_objective(weights, z_ref, p_ref, z_aux, p_aux, lam, draws, dtype=np.float64):
    t, eps, eps_aux = draws
    terms = {}

    def closure(params):
        ref = _term(params, z_ref, t, eps, p_ref, weights.schedule)
        aux = _term(params, z_aux, t, eps_aux, p_aux, weights.schedule)
        terms["ref"], terms["aux"] = float(ref.data), float(aux.data)
        return ref + ag.mul(aux, lam)

    with precision(dtype):
        grads = gradients(weights, closure)
    total = terms["ref"] + lam * terms["aux"]
    return total, terms["ref"], terms["aux"], grads


def _batch_arrays(weights, batch):
    if not batch:
        raise InvalidArgumentError("empty batch")
    pairs = [(r.image, r.prompt) if isinstance(r, Record) else r for r in batch]
    images = np.stack([np.asarray(img) for img, _ in pairs])
    prompts = [tokenize(p) if isinstance(p, str) else p for _, p in pairs]
    return encode_image(weights, images), prompts


def ssf_loss(weights, styleref_batch, aux_batch, lam, sched, rng):
    """Dual-binding loss and gradients for one batch of pairs.

    Args:
        weights: Current weights.
        styleref_batch: ``Record`` objects or ``(image, prompt)`` tuples.
        aux_batch: Same, for the Aux role; must match ``styleref_batch`` in length.
        lam: Aux weight; 0 reduces to the plain denoising term.
        sched: Schedule used for the forward process.
        rng: ``numpy.random.Generator`` supplying t, eps and eps'.

    Returns:
        ``(loss, grads)``.
    """
    if lam < 0:
        raise InvalidArgumentError("lambda must be >= 0")
    if len(styleref_batch) != len(aux_batch):
        raise InvalidArgumentError("StyleRef and Aux batches must pair up one to one")
    z_ref, p_ref = _batch_arrays(weights, styleref_batch)
    z_aux, p_aux = _batch_arrays(weights, aux_batch)
    if sched is not weights.schedule:
        weights = TrainableWeights(weights.theta, weights.phi, weights.frozen_autoencoder, sched, weights.version)
    total, _, _, grads = _pair_objective(weights, z_ref, p_ref, z_aux, p_aux, lam, _draw(rng, sched, z_ref, z_aux))
    return total, grads


# -- training loops ---------------------------------------------------------------

class _Encoded:
    """Dataset with latents computed once; the encoder is frozen and deterministic."""

    def __init__(self, weights, ds: StyleDataset):
        self.latents = encode_image(weights, ds.images) if len(ds) else np.zeros((0, 4, 8, 8))
        self.prompts = [r.prompt for r in ds.records]

    def __len__(self):
        return len(self.prompts)

    def take(self, idx):
        return self.latents[idx], [self.prompts[i] for i in idx]


def _check_sets(styleref_sets, aux):
    for ds in styleref_sets:
        ds.validate("styleref")
    if len(aux) == 0:
        raise ConfigurationError("Aux dataset is empty")
    aux.validate("aux")


def _snapshot_due(cfg, step):
    return cfg.checkpoint_every > 0 and step % cfg.checkpoint_every == 0


def _loop(cfg: TrainConfig, sets, q, aux, init: TrainableWeights, out_dir=None, callback=None) -> TrainResult:
    """Shared loop; ``q`` is the probability of the first StyleRef set.

    The main generator drives pair indices, timesteps and noises; dataset
    selection has its own stream so a run with one empty component consumes
    exactly the same main-stream draws as a single-set run.
    """
    dtype = np.float32 if cfg.precision == "float32" else np.float64
    enc = [_Encoded(init, ds) for ds in sets]
    enc_aux = _Encoded(init, aux)
    rng = np.random.default_rng(cfg.seed)
    select_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    opt = Adam(cfg.learning_rate)
    params = init.trainable
    weights = init
    trace, selections, snapshots = [], [], {}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def snapshot(step, w):
        snapshots[step] = w
        if out is not None:
            save_checkpoint(out / f"ckpt_{step:06d}.sfck", w)

    snapshot(0, init)
    for step in range(1, cfg.steps + 1):
        k = 0 if select_rng.random() < q else 1
        selections.append(k)
        src = enc[k]
        i_ref = rng.integers(0, len(src), cfg.batch_size)
        i_aux = rng.integers(0, len(enc_aux), cfg.batch_size)
        z_ref, p_ref = src.take(i_ref)
        z_aux, p_aux = enc_aux.take(i_aux)
        draws = _draw(rng, init.schedule, z_ref, z_aux)
        total, ref, aux_term, grads = _pair_objective(weights, z_ref, p_ref, z_aux, p_aux, cfg.lam, draws, dtype)
        params = opt.step(params, grads, cfg.lr_at(step))
        weights = init.with_trainable(params, version=init.version + step)
        trace.append(TraceRow(step, total, ref, aux_term, f"D{k + 1}"))
        if callback is not None:
            callback(step, trace[-1])
        if _snapshot_due(cfg, step):
            snapshot(step, weights)
    if cfg.steps not in snapshots:
        snapshot(cfg.steps, weights)
    if out is not None:
        write_trace(out / "loss_trace.csv", trace)
    return TrainResult(weights, trace, selections, snapshots)


def train_single(cfg: TrainConfig, styleref: StyleDataset, aux: StyleDataset, init: TrainableWeights, out_dir=None, callback=None) -> TrainResult:
    """Single-identifier dual binding: ``[V]`` on StyleRef, bare ``style`` on Aux."""
    if len(styleref) == 0:
        raise ConfigurationError("StyleRef dataset is empty")
    _check_sets([styleref], aux)
    return _loop(cfg, [styleref, StyleDataset([], "empty")], 1.0, aux, init, out_dir, callback)


def split_for_multi(styleref: StyleDataset):
    """Persons (and figures in landscapes) bound to ``[V]``, landscapes to ``[W]``."""
    d1 = subset(styleref, ("person", "mixed"))
    d2 = subset(styleref, ("background",))
    d1 = retemplate(d1, STYLEREF_TEMPLATE) if len(d1) else d1
    d2 = retemplate(d2, STYLEREF_TEMPLATE_W) if len(d2) else d2
    return d1, d2


def train_multi(cfg: MultiTrainConfig, aux: StyleDataset, init: TrainableWeights, out_dir=None, callback=None) -> TrainResult:
    """Multi-identifier dual binding: each step picks D1 with probability q, else D2."""
    _check_sets(cfg.datasets, aux)
    return _loop(cfg.base, list(cfg.datasets), cfg.q, aux, init, out_dir, callback)


def generate_prior_images(frozen: TrainableWeights, prompt=AUX_TEMPLATE, n=20, seed=0, steps=DEFAULT_STEPS, guidance_scale=DEFAULT_GUIDANCE) -> StyleDataset:
    """Sample an Aux set from the frozen model (DreamBooth's prior images)."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    prompt = tokenize(prompt) if isinstance(prompt, str) else prompt
    images = sample_images(frozen, prompt, n, steps, guidance_scale, seed)
    records = [Record(np.round(img * 255) / 255, prompt, "aux", "unknown") for img in images]
    return StyleDataset(records, "prior", "generated", {"seed": seed}).validate("aux")


def train_dreambooth(cfg: TrainConfig, styleref: StyleDataset, init: TrainableWeights, n_prior=20, prior_seed=None, out_dir=None, callback=None) -> TrainResult:
    """Prior-preservation baseline: Aux images come from the frozen model itself."""
    prior = generate_prior_images(init, AUX_TEMPLATE, n_prior, cfg.seed if prior_seed is None else prior_seed)
    return train_single(cfg, styleref, prior, init, out_dir, callback)
