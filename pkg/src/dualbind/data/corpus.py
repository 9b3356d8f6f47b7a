"""Style datasets, corpus builders, and the on-disk directory layout.

Layout: ``<root>/<style_id>/<role>/<index>.ppm`` plus
``<root>/<style_id>/manifest.tsv`` with columns
``index, role, content_kind, prompt``.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, FormatError, InvalidArgumentError
from . import render
from .styles import StyleTransformSpec
from .text import (
    AUX_TEMPLATE,
    STYLEREF_TEMPLATE,
    PromptSpec,
    background_phrase,
    caption,
    combined_phrase,
    person_phrase,
    tokenize,
)

ROLES = ("styleref", "aux")
CONTENT_KINDS = ("person", "background", "mixed", "pattern", "unknown")
PROVENANCES = ("procedural", "generated", "ingested")


@dataclass
class Record:
    image: np.ndarray
    prompt: PromptSpec
    role: str
    content_kind: str
    caption: str = ""
    mask: np.ndarray | None = None


@dataclass
class StyleDataset:
    records: list
    style_id: str
    provenance: str = "procedural"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def images(self):
        return np.stack([r.image for r in self.records]) if self.records else np.zeros((0, 3, 32, 32))

    def validate(self, role=None):
        """Check prompt/role consistency; raise ConfigurationError on violation."""
        for i, r in enumerate(self.records):
            if role is not None and r.role != role:
                raise ConfigurationError(f"{self.style_id}[{i}]: expected role {role!r}, got {r.role!r}")
            check_prompt_role(r.prompt, r.role, where=f"{self.style_id}[{i}]")
        return self

    def digest(self):
        h = hashlib.sha256()
        for r in self.records:
            h.update(np.ascontiguousarray(r.image, dtype="<f8").tobytes())
            h.update(f"{r.role}|{r.content_kind}|{r.prompt.text}".encode())
        return h.hexdigest()


def check_prompt_role(prompt: PromptSpec, role: str, where=""):
    if role == "styleref" and not prompt.identifier_tokens:
        raise ConfigurationError(f"{where}: styleref prompt {prompt.text!r} lacks an identifier token")
    if role == "aux" and (prompt.identifier_tokens or "style" not in prompt.words):
        raise ConfigurationError(f"{where}: aux prompt {prompt.text!r} must use the bare 'style' token")
    if role not in ROLES:
        raise ConfigurationError(f"{where}: unknown role {role!r}")


def _record_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def render_scene(content_kind, rng, style=None):
    """Render one scene of the given kind; return (image, caption, mask)."""
    if content_kind == "person":
        kind, color = render.random_person_spec(rng)
        img, mask = render.render_person(kind, color, rng)
        text = caption(person_phrase(kind, color))
    elif content_kind == "background":
        bg = render.random_background(rng)
        img, mask = render.render_background(bg, rng), np.zeros((32, 32), dtype=bool)
        text = caption(background_phrase(bg))
    elif content_kind == "mixed":
        kind, color = render.random_person_spec(rng)
        bg = render.random_background(rng)
        img, mask = render.render_person(kind, color, rng, background=bg)
        text = caption(combined_phrase(kind, color, bg))
    elif content_kind == "pattern":
        img, mask, text = render.render_pattern(rng), np.zeros((32, 32), dtype=bool), AUX_TEMPLATE
    else:
        raise InvalidArgumentError(f"unknown content kind {content_kind!r}")
    if style is not None:
        img = style(img)
    return img, text, mask


def build_style_corpus(
    style: StyleTransformSpec,
    n_persons: int,
    n_backgrounds: int,
    seed: int,
    template: str = STYLEREF_TEMPLATE,
    person_kind: str = "person",
    style_id: str | None = None,
) -> StyleDataset:
    """Render StyleRef records: persons first, then backgrounds.

    ``person_kind`` selects studio portraits (``"person"``) or figures in a
    landscape (``"mixed"``).
    """
    if n_persons < 0 or n_backgrounds < 0 or n_persons + n_backgrounds < 1:
        raise InvalidArgumentError("need n_persons + n_backgrounds >= 1 and both >= 0")
    prompt = tokenize(template)
    kinds = [person_kind] * n_persons + ["background"] * n_backgrounds
    records = []
    for i, kind in enumerate(kinds):
        img, text, mask = render_scene(kind, _record_rng(seed, i), style)
        records.append(Record(img, prompt, "styleref", kind, text, mask))
    ds = StyleDataset(records, style_id or style.name, "procedural", {"seed": seed})
    return ds.validate("styleref")


def build_aux_corpus(aux_style: StyleTransformSpec, n: int, seed: int, style_id=None) -> StyleDataset:
    """Person-only scenes in the auxiliary style, prompted with the bare 'style' token."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    prompt = tokenize(AUX_TEMPLATE)
    records = []
    for i in range(n):
        img, text, mask = render_scene("person", _record_rng(seed, 10_000 + i), aux_style)
        records.append(Record(img, prompt, "aux", "person", text, mask))
    return StyleDataset(records, style_id or f"aux-{aux_style.name}", "procedural", {"seed": seed}).validate("aux")


def build_reference_corpus(style: StyleTransformSpec, n: int, seed: int, style_id=None) -> StyleDataset:
    """Held-out styled scenes used as the FID/KID reference distribution.

    Kinds follow the evaluation prompt mix: 40% portraits, 40% landscapes,
    20% figures in landscapes.
    """
    if n < 2:
        raise InvalidArgumentError("a reference set needs at least 2 images")
    n_p, n_b = int(0.4 * n), int(0.4 * n)
    kinds = ["person"] * n_p + ["background"] * n_b + ["mixed"] * (n - n_p - n_b)
    prompt = tokenize(STYLEREF_TEMPLATE)
    records = []
    for i, kind in enumerate(kinds):
        img, text, mask = render_scene(kind, _record_rng(seed, 20_000 + i), style)
        records.append(Record(img, prompt, "styleref", kind, text, mask))
    return StyleDataset(records, style_id or f"ref-{style.name}", "procedural", {"seed": seed})


def build_base_corpus(n: int, seed: int, pattern_fraction=0.1, style=None) -> list[Record]:
    """Captioned, unstyled corpus used to pretrain the base model and towers.

    Mix: persons, backgrounds, figures-in-landscapes, and textile patterns
    captioned with the bare 'style' token (the token's prior meaning).
    """
    rng = np.random.default_rng(seed)
    kinds = rng.choice(
        ["person", "background", "mixed", "pattern"],
        size=n,
        p=[0.3, 0.3, 0.4 - pattern_fraction, pattern_fraction],
    )
    out = []
    for i, kind in enumerate(kinds):
        img, text, mask = render_scene(str(kind), _record_rng(seed, i), style)
        out.append(Record(img, tokenize(text), "base", str(kind), text, mask))
    return out


# -- PPM / manifest I/O ---------------------------------------------------------

def write_ppm(path, image):
    arr = np.round(np.clip(np.asarray(image), 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    h, w, _ = arr.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes())


def _ppm_tokens(buf, count):
    out, pos = [], 0
    while len(out) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        out.append(buf[start:pos])
    return out, pos + 1


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), pos = _ppm_tokens(buf, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed PPM header") from exc
    if magic != b"P6" or maxval != 255:
        raise FormatError(f"{path}: expected binary P6 with maxval 255")
    if len(buf) < pos + w * h * 3:
        raise FormatError(f"{path}: truncated pixel data")
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def write_pgm(path, array):
    arr = np.asarray(array, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    scaled = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
    img = np.round(scaled * 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 greymap as floats in [0, 1]."""
    buf = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), pos = _ppm_tokens(buf, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if magic != b"P5" or maxval != 255:
        raise FormatError(f"{path}: expected binary P5 with maxval 255")
    if len(buf) < pos + w * h:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w) / 255.0


def save_dataset(ds: StyleDataset, root) -> Path:
    base = Path(root) / ds.style_id
    rows = []
    counters = {}
    for r in ds.records:
        idx = counters.get(r.role, 0)
        counters[r.role] = idx + 1
        (base / r.role).mkdir(parents=True, exist_ok=True)
        write_ppm(base / r.role / f"{idx:04d}.ppm", r.image)
        rows.append((f"{idx:04d}", r.role, r.content_kind, r.prompt.text))
    with open(base / "manifest.tsv", "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(("index", "role", "content_kind", "prompt"))
        w.writerows(rows)
    return base


def load_dataset(path, role=None, provenance="ingested") -> StyleDataset:
    """Read a dataset directory (the directory holding ``manifest.tsv``)."""
    base = Path(path)
    manifest = base / "manifest.tsv"
    if not manifest.exists():
        raise FormatError(f"{base}: missing manifest.tsv")
    records = []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if reader.fieldnames != ["index", "role", "content_kind", "prompt"]:
            raise FormatError(f"{manifest}: unexpected columns {reader.fieldnames}")
        for row in reader:
            if role is not None and row["role"] != role:
                continue
            img = read_ppm(base / row["role"] / f"{row['index']}.ppm")
            if img.shape != (3, 32, 32):
                raise FormatError(f"{base}/{row['role']}/{row['index']}.ppm: expected 32x32, got {img.shape[1:]}")
            records.append(Record(img, tokenize(row["prompt"]), row["role"], row["content_kind"]))
    return StyleDataset(records, base.name, provenance).validate(role)


def subset(ds: StyleDataset, content_kinds, style_id=None) -> StyleDataset:
    recs = [r for r in ds.records if r.content_kind in content_kinds]
    return StyleDataset(recs, style_id or ds.style_id, ds.provenance, dict(ds.meta))


def retemplate(ds: StyleDataset, template: str, style_id=None) -> StyleDataset:
    """Copy of ``ds`` with every prompt replaced by ``template``."""
    prompt = tokenize(template)
    recs = [Record(r.image, prompt, r.role, r.content_kind, r.caption, r.mask) for r in ds.records]
    return StyleDataset(recs, style_id or ds.style_id, ds.provenance, dict(ds.meta)).validate()
