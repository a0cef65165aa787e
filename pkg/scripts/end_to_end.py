"""Full model versus the distance_mode=none variant on the default 200-subject cohort, same outer folds."""
import argparse
import json
import time

from pancrisk.model import ModelConfig, TrainConfig, nested_cv, subject_features, summarize
from pancrisk.synthdata import gen_cohort


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--workers", type=int, default=1, help="outer folds trained in parallel")
    args = p.parse_args()

    t0 = time.perf_counter()
    cohort = gen_cohort(200, seed=args.seed)
    feats = [subject_features(s, ModelConfig()) for s in cohort.samples]
    train_cfg = TrainConfig(epochs=args.epochs, seed=args.seed, workers=args.workers)
    report = {}
    for mode in ("neural", "none"):
        t = time.perf_counter()
        results = nested_cv(feats, ModelConfig(distance_mode=mode), train_cfg)
        report[mode] = {**summarize(results), "fold_c": [r.test_c for r in results],
                        "best_epoch": [r.best_epoch for r in results], "seconds": time.perf_counter() - t}
        print(mode, json.dumps(report[mode]), flush=True)
    report["gap"] = report["neural"]["c_mean"] - report["none"]["c_mean"]
    report["seconds"] = time.perf_counter() - t0
    print(json.dumps({"gap": report["gap"], "seconds": report["seconds"]}))


if __name__ == "__main__":
    main()
