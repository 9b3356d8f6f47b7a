"""Closed vocabulary, tokenization, and prompt grammar."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError, VocabularyError

NULL = "<null>"
IDENTIFIERS = ("[V]", "[W]")

PERSON_KINDS = ("man", "woman", "child")
SHIRT_COLORS = ("red", "blue", "green", "yellow")
BACKGROUND_KINDS = ("mountain", "sea", "forest", "desert", "city", "night")

# Index order is part of the checkpoint format; append only.
VOCAB = (
    NULL, "[V]", "[W]", ",",
    "a", "an", "the", "photo", "of", "style", "in", "on", "at", "with", "and",
    "picture", "painting", "illustration", "portrait", "scene", "art",
    "man", "woman", "child", "person", "people", "girl", "boy",
    "red", "blue", "green", "yellow", "white", "black", "orange", "purple",
    "shirt", "dress", "hat",
    "mountain", "sea", "forest", "desert", "city", "night", "field", "snow",
    "lake", "sky", "sunset", "landscape", "street", "beach",
    "pattern", "fabric", "stripes", "dots", "checks", "fashion", "textile",
    "standing", "smiling", "walking", "tall",
)
WORD_TO_ID = {w: i for i, w in enumerate(VOCAB)}

STYLEREF_TEMPLATE = "a photo of [V] style"
STYLEREF_TEMPLATE_W = "a photo of [W] style"
AUX_TEMPLATE = "a photo of style"


@dataclass(frozen=True)
class PromptSpec:
    text: str
    tokens: tuple
    identifier_tokens: frozenset

    def __len__(self):
        return len(self.tokens)

    @property
    def words(self):
        return [VOCAB[i] for i in self.tokens]


def _normalize_word(word):
    w = word.lower()
    return w.upper() if w in ("[v]", "[w]") else w


def normalize(text: str) -> list[str]:
    return [_normalize_word(w) for w in text.replace(",", " , ").split()]


def detokenize(tokens) -> str:
    return " ".join(VOCAB[i] for i in tokens).replace(" ,", ",")


def tokenize(text: str) -> PromptSpec:
    """Map text onto the closed vocabulary.

    Raises:
        VocabularyError: naming the first out-of-vocabulary word.
        InvalidArgumentError: if an identifier token appears twice.
    """
    words = normalize(text)
    ids = []
    for w in words:
        if w not in WORD_TO_ID or w == NULL:
            raise VocabularyError(w)
        ids.append(WORD_TO_ID[w])
    idents = [w for w in words if w in IDENTIFIERS]
    if len(idents) != len(set(idents)):
        raise InvalidArgumentError(f"identifier token repeated in {text!r}")
    tokens = tuple(ids)
    return PromptSpec(detokenize(tokens), tokens, frozenset(idents))


def null_prompt() -> PromptSpec:
    return tokenize("")


# -- prompt grammar -----------------------------------------------------------

def person_phrase(kind, color):
    return f"a {kind} in a {color} shirt"


def background_phrase(bg):
    return f"a {bg}"


def combined_phrase(kind, color, bg):
    return f"a {kind} in a {color} shirt in a {bg}"


def caption(phrase):
    return f"a photo of {phrase}"


EVAL_CATEGORIES = ("person", "background", "combined")


@dataclass(frozen=True)
class EvalPrompt:
    """A content prompt plus the category that decides its identifier prefix."""

    category: str
    content: PromptSpec


def eval_prompt_set(n: int, seed: int) -> list[EvalPrompt]:
    """Grammar-generated evaluation prompts, stratified 40/40/20.

    The category counts are ``floor(0.4 n)`` person, ``floor(0.4 n)``
    background and the remainder combined.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng = np.random.default_rng(seed)
    n_p = int(0.4 * n)
    n_b = int(0.4 * n)
    n_c = n - n_p - n_b
    out = []
    for _ in range(n_p):
        text = person_phrase(rng.choice(PERSON_KINDS), rng.choice(SHIRT_COLORS))
        out.append(EvalPrompt("person", tokenize(text)))
    for _ in range(n_b):
        out.append(EvalPrompt("background", tokenize(background_phrase(rng.choice(BACKGROUND_KINDS)))))
    for _ in range(n_c):
        text = combined_phrase(
            rng.choice(PERSON_KINDS), rng.choice(SHIRT_COLORS), rng.choice(BACKGROUND_KINDS)
        )
        out.append(EvalPrompt("combined", tokenize(text)))
    return out


def personalized_prompt(ep: EvalPrompt, mode: str) -> PromptSpec:
    """Prefix a content prompt with the identifier phrase a trained model expects.

    Single-token models always use ``[V] style``; multi-token models use
    ``[V]`` for persons, ``[W]`` for backgrounds and both for combined scenes.
    """
    if mode == "multi":
        prefix = {
            "person": "a photo of [V] style",
            "background": "a photo of [W] style",
            "combined": "a photo of [V] style, [W] style",
        }[ep.category]
    else:
        prefix = STYLEREF_TEMPLATE
    return tokenize(f"{prefix}, {ep.content.text}")
