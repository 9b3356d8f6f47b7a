"""Synthetic style corpora, prompts, and dataset I/O."""

from .corpus import (
    Record,
    StyleDataset,
    build_aux_corpus,
    build_base_corpus,
    build_style_corpus,
    build_reference_corpus,
    load_dataset,
    read_pgm,
    read_ppm,
    save_dataset,
    write_pgm,
    write_ppm,
)
from .styles import STYLE_NAMES, StyleTransformSpec, apply_style, default_aux_style
from .text import (
    AUX_TEMPLATE,
    STYLEREF_TEMPLATE,
    STYLEREF_TEMPLATE_W,
    VOCAB,
    EvalPrompt,
    PromptSpec,
    detokenize,
    eval_prompt_set,
    null_prompt,
    personalized_prompt,
    tokenize,
)

__all__ = [
    "Record",
    "StyleDataset",
    "build_aux_corpus",
    "build_base_corpus",
    "build_style_corpus",
    "build_reference_corpus",
    "load_dataset",
    "read_pgm",
    "read_ppm",
    "save_dataset",
    "write_pgm",
    "write_ppm",
    "AUX_TEMPLATE",
    "STYLEREF_TEMPLATE",
    "STYLEREF_TEMPLATE_W",
    "VOCAB",
    "EvalPrompt",
    "PromptSpec",
    "detokenize",
    "eval_prompt_set",
    "null_prompt",
    "personalized_prompt",
    "tokenize",
    "STYLE_NAMES",
    "StyleTransformSpec",
    "apply_style",
    "default_aux_style",
]
