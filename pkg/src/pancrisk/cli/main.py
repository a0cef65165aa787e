"""Command-line entry point: ``pancrisk <subcommand> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from ..geometry import EmptyRegionError
from ..model import DISTANCE_MODES, FUSION_MODES, ParamFileError
from ..survival import CollinearityError, ConvergenceError, DegenerateBatchError, UndefinedMetricError
from ..synthdata import PhantomSpecError, VolumeFormatError
from ..tensorcore import ConfigurationError
from . import commands
from .runconfig import DataError, UsageError, load_config, merge

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

DEFAULTS = {
    "gen-data": {"seed": 0, "n": 200, "hazard": {}, "sampler": {}},
    "distances": {"seed": 0, "n_points": 1024, "squared": True, "closest": 0},
    "train": {"seed": 0, "model": {}, "train": {}, "k_values": None},
    "eval": {"seed": 0, "horizon": 36.0, "oracle": False},
    "cox": {"seed": 0, "mode": "workflow", "alpha": 0.05, "covariates": None},
    "km": {"seed": 0, "threshold": None, "subgroups": None},
}


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser():
    p = Parser(prog="pancrisk", description="Synthetic PDAC prognosis pipeline.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    def common(sp, cohort=True):
        sp.add_argument("--config", help="JSON config file (a resolved_config.json snapshot works)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        if cohort:
            sp.add_argument("--cohort", help="cohort directory")
        sp.add_argument("--force", action="store_true", default=None, help="allow a non-empty --out")
        sp.add_argument("-v", "--verbose", action="store_true")

    g = sub.add_parser("gen-data", help="generate a synthetic cohort")
    common(g, cohort=False)
    g.add_argument("--n", type=positive_int, help="number of subjects")

    d = sub.add_parser("distances", help="per-subject tumor-vessel set distances")
    common(d)
    d.add_argument("--points", type=int, dest="n_points", help="surface samples per structure (0 = all)")
    d.add_argument("--closest", type=int, help="restrict to the K mutually closest points (0 = whole sets)")

    t = sub.add_parser("train", help="nested cross-validation training")
    common(t)
    t.add_argument("--folds", type=positive_int)
    t.add_argument("--epochs", type=positive_int)
    t.add_argument("--batch", type=positive_int, help="batch size (default 16)")
    t.add_argument("--lr", type=float)
    t.add_argument("--distance-mode", choices=DISTANCE_MODES)
    t.add_argument("--fusion", choices=FUSION_MODES)
    t.add_argument("--no-structure", action="store_true", default=None, help="drop the structure branch")
    t.add_argument("--k", type=positive_int, nargs="+", help="closest-point count; several values run a sweep")
    t.add_argument("--augment", action="store_true", default=None)
    t.add_argument("--max-rotation", type=float, help="degrees, axial rotation augmentation")
    t.add_argument("--max-shift", type=int, help="voxels, shift augmentation")
    t.add_argument("--workers", type=positive_int, help="folds trained in parallel")
    t.add_argument("--dtype", choices=("float32", "float64"))

    e = sub.add_parser("eval", help="aggregate outer-fold test metrics")
    common(e)
    e.add_argument("--run", help="train output directory")
    e.add_argument("--scores", help="CSV with subject_id,risk[,fold]")
    e.add_argument("--oracle", action="store_true", default=None, help="score with the generative linear predictor")
    e.add_argument("--horizon", type=float)

    c = sub.add_parser("cox", help="univariate / multivariate Cox regression")
    common(c)
    c.add_argument("--scores", help="CSV with subject_id,risk; added as covariate risk_score")
    c.add_argument("--distances", help="distances CSV; columns added as covariates")
    c.add_argument("--covariates", nargs="+")
    c.add_argument("--mode", choices=("workflow", "univariate", "multivariate"))
    c.add_argument("--alpha", type=float)

    k = sub.add_parser("km", help="Kaplan-Meier curves for risk strata")
    common(k)
    k.add_argument("--scores", help="CSV with subject_id,risk")
    k.add_argument("--threshold", type=float, help="risk threshold (default: median of the scores)")
    k.add_argument("--subgroups", nargs="+", help="covariates defining subgroup panels")
    return p


def resolve(args):
    """Defaults < config file < explicit command-line flags."""
    cfg = merge(DEFAULTS[args.command], load_config(args.config))
    cfg["command"] = args.command
    flat = {k: v for k, v in vars(args).items() if k not in ("config", "command", "verbose")}
    if args.command == "train":
        train_keys = ("folds", "epochs", "batch", "lr", "augment", "max_rotation", "max_shift", "workers", "dtype")
        train = {k: flat.pop(k) for k in train_keys}
        model = {"distance_mode": flat.pop("distance_mode"), "fusion_mode": flat.pop("fusion")}
        if flat.pop("no_structure"):
            model["use_structure"] = False
        flat["k_values"] = flat.pop("k")
        flat["train"], flat["model"] = train, model
    return merge(cfg, flat)


HANDLERS = {
    "gen-data": commands.cmd_gen_data,
    "distances": commands.cmd_distances,
    "train": commands.cmd_train,
    "eval": commands.cmd_eval,
    "cox": commands.cmd_cox,
    "km": commands.cmd_km,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(args)
        HANDLERS[args.command](cfg)
    except (UsageError, ConfigurationError) as err:
        print(f"pancrisk {args.command}: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, VolumeFormatError, ParamFileError, EmptyRegionError,
            PhantomSpecError, DegenerateBatchError, UndefinedMetricError) as err:
        print(f"pancrisk {args.command}: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (CollinearityError, ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as err:
        print(f"pancrisk {args.command}: numerical failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
