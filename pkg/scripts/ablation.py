"""Train the model variants on one synthetic cohort with shared outer folds and print a comparison table.

    python scripts/ablation.py --n 200 --epochs 100 --out ablation.csv
"""
import argparse
import csv
import time

import numpy as np

from pancrisk.model import ModelConfig, TrainConfig, nested_cv, subject_features, summarize
from pancrisk.model.training import outer_folds
from pancrisk.survival import c_index, cox_fit, make_records
from pancrisk.synthdata import gen_cohort

VARIANTS = {
    "early-fusion": dict(fusion_mode="early", use_structure=False, distance_mode="none"),
    "cross-fusion": dict(use_structure=False, distance_mode="none"),
    "+structure": dict(distance_mode="none"),
    "+structure+chamfer": dict(distance_mode="chamfer"),
    "+structure+neural": dict(),
}


def chamfer_regression(feats, folds, seed):
    """Four-covariate Cox model on the tumor-vessel set distances, scored on each outer test fold."""
    x = np.array([f.chamfer for f in feats])
    names = ["d_pvsv", "d_smv", "d_sma", "d_tc"]
    recs = make_records([f.time for f in feats], [f.event for f in feats], {n: x[:, i] for i, n in enumerate(names)})
    cs = []
    for test in outer_folds(len(feats), folds, seed):
        train = np.setdiff1d(np.arange(len(feats)), test)
        fit = cox_fit([recs[i] for i in train], names)
        beta = np.array([fit[n].beta for n in names])
        cs.append(c_index(x[test] @ beta, [recs[i] for i in test]))
    return {"folds": len(cs), "c_mean": float(np.mean(cs)), "c_sd": float(np.std(cs, ddof=1))}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--variants", nargs="+", choices=[*VARIANTS, "chamfer-cox"], default=[*VARIANTS, "chamfer-cox"])
    p.add_argument("--out", help="optional CSV for the table")
    args = p.parse_args()

    cohort = gen_cohort(args.n, seed=args.seed)
    feats = [subject_features(s, ModelConfig()) for s in cohort.samples]
    train_cfg = TrainConfig(epochs=args.epochs, folds=args.folds, seed=args.seed, workers=args.workers)
    rows = []
    for name in args.variants:
        t0 = time.perf_counter()
        if name == "chamfer-cox":
            s = chamfer_regression(feats, args.folds, args.seed)
        else:
            s = summarize(nested_cv(feats, ModelConfig(**VARIANTS[name]), train_cfg))
        rows.append([name, s["c_mean"], s["c_sd"], time.perf_counter() - t0])
        print(f"{name:20s} C {s['c_mean']:.3f} ± {s['c_sd']:.3f}  ({rows[-1][3]:.0f}s)", flush=True)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "c_mean", "c_sd", "seconds"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
