"""Rebuild the committed fixtures: autoencoder + base model, and the alignment tower.

This is the one expensive step in the repository (roughly half an hour on
one CPU core). Everything else starts from the checkpoints it writes into
``src/dualbind/fixtures/``.

    python demos/00_build_fixtures.py [--only base|tower]
"""

import argparse
import logging
import time

import numpy as np

from dualbind.checkpoint import save_checkpoint, write_tensors
from dualbind.fixtures import BASE_CHECKPOINT, TOWER_CHECKPOINT
from dualbind.nets import init_weights
from dualbind.pretrain import (
    AE_RECIPE,
    autoencoder_corpus,
    build_autoencoder_fixture,
    build_base_fixture,
    build_tower_fixture,
    reconstruction_mse,
)


def progress(label, every):
    start = time.time()
    window = []

    def report(step, loss):
        window.append(loss)
        if (step + 1) % every == 0:
            print(f"{label} step {step + 1}: mean loss {np.mean(window):.4f} ({time.time() - start:.0f}s)", flush=True)
            window.clear()

    return report


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--only", choices=("base", "tower"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    if args.only in (None, "base"):
        ae = build_autoencoder_fixture()
        held_out = autoencoder_corpus(300, 30, AE_RECIPE["corpus_seed"] + 1000)
        print("autoencoder held-out reconstruction MSE:", reconstruction_mse(init_weights(0, autoencoder=ae), held_out))
        weights = build_base_fixture(ae, callback=progress("base", 500))
        save_checkpoint(BASE_CHECKPOINT, weights)
        print("wrote", BASE_CHECKPOINT)

    if args.only in (None, "tower"):
        tower = build_tower_fixture(callback=progress("tower", 250))
        write_tensors(TOWER_CHECKPOINT, tower.params)
        print("wrote", TOWER_CHECKPOINT)


if __name__ == "__main__":
    main()
