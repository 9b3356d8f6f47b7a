"""Committed pretrained fixtures: the base text-to-image model and the alignment tower.

Both are rebuilt by ``demos/00_build_fixtures.py``; loading is cached.
"""

from __future__ import annotations

import functools
from pathlib import Path

from ..checkpoint import load_checkpoint, read_tensors
from ..metrics import AlignmentTower

FIXTURE_DIR = Path(__file__).resolve().parent
BASE_CHECKPOINT = FIXTURE_DIR / "base.sfck"
TOWER_CHECKPOINT = FIXTURE_DIR / "tower.sfck"


def base_weights():
    """A fresh copy of the pretrained base model (safe to mutate)."""
    return _base().copy()


@functools.lru_cache(maxsize=1)
def _base():
    return load_checkpoint(BASE_CHECKPOINT)


@functools.lru_cache(maxsize=1)
def alignment_tower() -> AlignmentTower:
    return AlignmentTower(read_tensors(TOWER_CHECKPOINT))
