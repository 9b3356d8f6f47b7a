"""Run every ablation arm on the fixture style and print the comparison tables.

Arms: StyleRef composition (mixed / persons only / backgrounds only), Aux
composition (curated persons vs DreamBooth-style generated priors) and
single vs multi identifiers. Each arm fine-tunes the packaged base model for
500 steps with seed 1 (the multi arm twice that); metrics use the held-out
reference corpus.

    python demos/02_ablations.py [--steps 500] [--out ablations.csv]
"""

import argparse
import csv
import time

from dualbind.experiments import ARMS, evaluate_arm, fixture_set, run_arm
from dualbind.fixtures import alignment_tower, base_weights
from dualbind.metrics import FeatureExtractor
from dualbind.personalize import TrainConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", default="ablations.csv")
    args = ap.parse_args()

    fixtures, ext, tower = fixture_set(), FeatureExtractor(0), alignment_tower()
    cfg = TrainConfig(steps=args.steps, seed=args.seed)
    rows = []
    for arm in ARMS:
        start = time.time()
        result = run_arm(arm, fixtures, base_weights(), cfg)
        full = evaluate_arm(result.weights, arm, fixtures, ext, tower)
        combined = evaluate_arm(result.weights, arm, fixtures, ext, tower, categories=("combined",))
        rows.append({
            "arm": arm, "fid": full.fid, "kid_x1000": full.kid_x1000, "clip_score": full.clip_score,
            "combined_clip_score": combined.clip_score, "final_loss": result.trace[-1].total_loss,
        })
        print(f"{arm:12s} FID {full.fid:8.3f}  KIDx1000 {full.kid_x1000:8.3f}  CLIP {full.clip_score:6.2f}  "
              f"combined CLIP {combined.clip_score:6.2f}  ({time.time() - start:.0f}s)", flush=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print("wrote", args.out)


if __name__ == "__main__":
    main()
