"""Subcommand implementations. Each takes a resolved config dict and writes under ``cfg['out']``."""
from __future__ import annotations

import csv
import json
import os
import sys
import warnings

import numpy as np

from ..geometry import VESSELS, EmptyRegionError, Structure, extract_surface, k_closest_subset, set_distance
from ..model import (ModelConfig, PrognosticNet, TrainConfig, load_params, nested_cv, save_params,
                     subject_features, summarize)
from ..model.training import fold_seed
from ..model.features import sample_structures
from ..survival import (RiskStratifier, UndefinedMetricError, c_index, cox_fit, cox_workflow,
                        cumulative_auc, kaplan_meier, log_rank_test, read_cohort_csv, univariate_cox)
from ..synthdata import CohortSampler, HazardModel, gen_cohort, load_cohort, read_manifest, write_cohort
from ..synthdata.cohort import load_subject
from .runconfig import SNAPSHOT, DataError, UsageError, prepare_out, write_snapshot
from .svg import render_km


def _fmt(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _require_cohort(cfg):
    cohort = cfg.get("cohort")
    if not cohort:
        raise UsageError("--cohort is required")
    if not os.path.exists(os.path.join(cohort, "survival.csv")):
        raise DataError(f"{cohort}: survival.csv not found")
    return cohort


def _snapshot(cfg):
    """Everything except output location and overwrite flag, so reruns compare byte for byte."""
    return {k: v for k, v in cfg.items() if k not in ("out", "force")}


# -- gen-data ------------------------------------------------------------------

def cmd_gen_data(cfg):
    n = cfg.get("n", 200)
    if not isinstance(n, int) or n < 2:
        raise UsageError(f"--n must be an integer >= 2, got {n!r}")
    try:
        hazard = HazardModel(**cfg.get("hazard", {}))
        sampler = CohortSampler(**{k: tuple(v) if isinstance(v, list) else v
                                   for k, v in cfg.get("sampler", {}).items()})
    except TypeError as err:
        raise UsageError(f"bad hazard/sampler settings: {err}") from err
    prepare_out(cfg["out"], cfg.get("force", False))
    cohort = gen_cohort(n, sampler, hazard, cfg["seed"])
    write_cohort(cohort, cfg["out"])
    write_snapshot(cfg["out"], _snapshot(cfg))
    events = sum(r.event for r in cohort.records)
    print(f"wrote {n} subjects ({events} events) to {cfg['out']}")


# -- distances -------------------------------------------------------------------

def subject_distances(sample, n_points, seed, squared=True, closest=0):
    """Set distance between each vessel surface and the PDAC surface (VESSELS order).

    With ``n_points`` > 0 both surfaces are first sampled uniformly with the same
    seeding as the network features; otherwise the full boundaries are used.
    ``closest`` > 0 restricts both sets to their K mutually closest points first.
    """
    if n_points > 0:
        sets = sample_structures(sample, n_points, seed)
    else:
        sets = {"PDAC": extract_surface(sample.pdac_mask, Structure.PDAC)}
        sets.update({v: extract_surface(sample.vessel_masks[v], Structure(v)) for v in VESSELS})
    out = []
    for v in VESSELS:
        a, b = sets[v], sets["PDAC"]
        if closest > 0:
            a, b = k_closest_subset(a, b, min(closest, len(a), len(b)))
        out.append(set_distance(a, b, squared))
    return out


def cmd_distances(cfg):
    cohort = _require_cohort(cfg)
    prepare_out(cfg["out"], cfg.get("force", False))
    seeds = {r["subject_id"]: r["seed"] for r in read_manifest(cohort)} \
        if os.path.exists(os.path.join(cohort, "manifest.csv")) else {}
    records = read_cohort_csv(os.path.join(cohort, "survival.csv"))
    rows, errors = [], []
    for rec in records:
        try:
            sample = load_subject(cohort, rec.subject_id)
            d = subject_distances(sample, cfg["n_points"], seeds.get(rec.subject_id, 0), cfg["squared"],
                                  cfg["closest"])
            rows.append([rec.subject_id, *map(_fmt, d)])
        except (FileNotFoundError, EmptyRegionError, ValueError) as err:
            rows.append([rec.subject_id, "", "", "", ""])
            errors.append([rec.subject_id, str(err)])
    _write_csv(os.path.join(cfg["out"], "distances.csv"), ["subject_id", "d_pvsv", "d_smv", "d_sma", "d_tc"], rows)
    write_snapshot(cfg["out"], _snapshot(cfg))
    if errors:
        _write_csv(os.path.join(cfg["out"], "distance_errors.csv"), ["subject_id", "error"], errors)
        raise DataError(f"{len(errors)} subject(s) failed; see distance_errors.csv (first: {errors[0][1]})")
    print(f"wrote distances for {len(rows)} subjects")


# -- train -------------------------------------------------------------------------

def _model_config(cfg, k=None):
    m = dict(cfg.get("model", {}))
    if k is not None:
        m["k"] = k
    return ModelConfig.from_dict(m)


def run_training(cohort, feats, model_cfg, train_cfg, out_dir):
    results = nested_cv(feats, model_cfg, train_cfg, samples=cohort.samples if train_cfg.augment else None)
    log_rows, fold_rows, risk_rows, folds = [], [], [], {}
    for r in results:
        folds[str(r.fold)] = r.test_ids
        if r.skipped:
            warnings.warn(r.skipped)
            fold_rows.append([r.fold, len(r.test_ids), "nan", "nan", -1, "nan", r.skipped])
            continue
        fold_dir = os.path.join(out_dir, f"fold{r.fold}")
        os.makedirs(fold_dir, exist_ok=True)
        net = PrognosticNet(model_cfg, seed=fold_seed(train_cfg.seed, r.fold))
        net.store.load_state(r.state)
        save_params(net, os.path.join(fold_dir, "params.bin"))
        for row in r.log:
            log_rows.append([row["fold"], row["epoch"], _fmt(row["loss"]), _fmt(row["val_c"])])
        fold_rows.append([r.fold, len(r.test_ids), _fmt(r.test_c), _fmt(r.test_auc), r.best_epoch,
                          _fmt(r.best_val_c), ""])
        risk_rows += [[sid, r.fold, _fmt(x)] for sid, x in zip(r.test_ids, r.test_risks)]
    _write_csv(os.path.join(out_dir, "train_log.csv"), ["fold", "epoch", "loss", "val_c"], log_rows)
    _write_csv(os.path.join(out_dir, "folds.csv"),
               ["fold", "n_test", "test_c", "test_auc36", "best_epoch", "best_val_c", "note"], fold_rows)
    _write_csv(os.path.join(out_dir, "risk_scores.csv"), ["subject_id", "fold", "risk"], risk_rows)
    with open(os.path.join(out_dir, "folds.json"), "w") as fh:
        json.dump(folds, fh, indent=1, sort_keys=True)
    return results, summarize(results)


def cmd_train(cfg):
    cohort_dir = _require_cohort(cfg)
    try:
        train_cfg = TrainConfig.from_dict({**cfg.get("train", {}), "seed": cfg["seed"]})
        k_values = cfg.get("k_values") or [_model_config(cfg).k]
        model_cfgs = [_model_config(cfg, k) for k in k_values]
    except (TypeError, ValueError) as err:
        raise UsageError(str(err)) from err
    prepare_out(cfg["out"], cfg.get("force", False))
    write_snapshot(cfg["out"], _snapshot(cfg))
    cohort = load_cohort(cohort_dir)
    table = []
    for model_cfg in model_cfgs:
        feats = [subject_features(s, model_cfg) for s in cohort.samples]
        out_dir = cfg["out"] if len(model_cfgs) == 1 else os.path.join(cfg["out"], f"k{model_cfg.k}")
        os.makedirs(out_dir, exist_ok=True)
        _, summary = run_training(cohort, feats, model_cfg, train_cfg, out_dir)
        table.append([model_cfg.k, summary["folds"], _fmt(summary["c_mean"]), _fmt(summary["c_sd"]),
                      _fmt(summary["auc_mean"]), _fmt(summary["auc_sd"])])
        print(f"K={model_cfg.k}: C-index {summary['c_mean']:.3f} ± {summary['c_sd']:.3f}, "
              f"AUC36 {summary['auc_mean']:.3f} ± {summary['auc_sd']:.3f} over {summary['folds']} folds")
    if len(model_cfgs) > 1:
        _write_csv(os.path.join(cfg["out"], "k_sweep.csv"),
                   ["k", "folds", "c_mean", "c_sd", "auc_mean", "auc_sd"], table)
        print("\n  K   C-index          AUC36")
        for k, _, cm, cs, am, as_ in table:
            print(f"{k:>4}   {float(cm):.3f} ± {float(cs):.3f}   {float(am):.3f} ± {float(as_):.3f}")


# -- eval ----------------------------------------------------------------------------

def _read_scores(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except FileNotFoundError as err:
        raise DataError(f"scores file not found: {path}") from err
    if not rows or not {"subject_id", "risk"} <= set(rows[0]):
        raise DataError(f"{path}: expected columns subject_id,risk")
    return rows


def fold_metrics(groups, records, horizon):
    """``groups``: list of (fold, {subject_id: risk}). Returns rows (fold, n, c, auc)."""
    by_id = {r.subject_id: r for r in records}
    out = []
    for fold, scores in groups:
        ids = list(scores)
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise DataError(f"fold {fold}: subjects without survival records: {missing[:5]}")
        risks = np.array([scores[i] for i in ids])
        t = np.array([by_id[i].time for i in ids])
        e = np.array([by_id[i].event for i in ids])
        try:
            c = c_index(risks, (t, e))
        except UndefinedMetricError:
            c = float("nan")
        try:
            auc = cumulative_auc(risks, (t, e), horizon)
        except UndefinedMetricError:
            auc = float("nan")
        out.append((fold, len(ids), c, auc))
    return out


def _scores_from_run(run_dir, cohort_dir):
    """Recompute test-fold risk scores from the saved fold parameters."""
    try:
        with open(os.path.join(run_dir, "folds.json")) as fh:
            folds = json.load(fh)
    except FileNotFoundError as err:
        raise DataError(f"{run_dir}: folds.json not found (not a train output directory?)") from err
    missing = [f for f in sorted(folds, key=int) if not os.path.exists(os.path.join(run_dir, f"fold{f}", "params.bin"))]
    if missing:
        raise DataError(f"missing parameters for fold(s) {', '.join(missing)} in {run_dir}")
    snap = os.path.join(run_dir, SNAPSHOT)
    dtype = "float64"
    if os.path.exists(snap):
        with open(snap) as fh:
            dtype = json.load(fh).get("train", {}).get("dtype", "float32")
    seeds = {r["subject_id"]: r["seed"] for r in read_manifest(cohort_dir)}
    groups = []
    for f in sorted(folds, key=int):
        net = load_params(os.path.join(run_dir, f"fold{f}", "params.bin"), dtype=np.dtype(dtype).type)
        feats = [subject_features(load_subject(cohort_dir, sid), net.config, seed=seeds.get(sid, 0))
                 for sid in folds[f]]
        groups.append((int(f), dict(zip(folds[f], net.risk_scores(feats)))))
    return groups


def cmd_eval(cfg):
    cohort_dir = _require_cohort(cfg)
    records = read_cohort_csv(os.path.join(cohort_dir, "survival.csv"))
    horizon = cfg["horizon"]
    if cfg.get("oracle"):
        lp = {r["subject_id"]: r["linear_predictor"] for r in read_manifest(cohort_dir)}
        if cfg.get("run"):
            with open(os.path.join(cfg["run"], "folds.json")) as fh:
                folds = json.load(fh)
            groups = [(int(f), {s: lp[s] for s in ids}) for f, ids in sorted(folds.items(), key=lambda x: int(x[0]))]
        else:
            groups = [(0, lp)]
    elif cfg.get("scores"):
        rows = _read_scores(cfg["scores"])
        by_fold = {}
        for r in rows:
            by_fold.setdefault(int(r.get("fold", 0) or 0), {})[r["subject_id"]] = float(r["risk"])
        groups = sorted(by_fold.items())
    elif cfg.get("run"):
        groups = _scores_from_run(cfg["run"], cohort_dir)
    else:
        raise UsageError("eval needs --run, --scores or --oracle")
    prepare_out(cfg["out"], cfg.get("force", False))
    metrics = fold_metrics(groups, records, horizon)
    _write_csv(os.path.join(cfg["out"], "metrics.csv"), ["fold", "n", "c_index", "auc36"],
               [[f, n, _fmt(c), _fmt(a)] for f, n, c, a in metrics])
    c = np.array([m[2] for m in metrics])
    a = np.array([m[3] for m in metrics])

    def ms(x):
        x = x[np.isfinite(x)]
        if len(x) == 0:
            return float("nan"), float("nan")
        return float(x.mean()), float(x.std(ddof=1)) if len(x) > 1 else 0.0

    (cm, cs), (am, as_) = ms(c), ms(a)
    summary = (f"folds: {len(metrics)}\nC-index: {cm:.3f} ± {cs:.3f}\n"
               f"AUC (cumulative/dynamic, {horizon:g} months): {am:.3f} ± {as_:.3f}\n")
    with open(os.path.join(cfg["out"], "summary.txt"), "w") as fh:
        fh.write(summary)
    write_snapshot(cfg["out"], _snapshot(cfg))
    sys.stdout.write(summary)


# -- cox / km ------------------------------------------------------------------------------

def _merge_covariates(records, path, names=None, prefix=""):
    """Attach numeric columns of a subject-keyed CSV to each record's covariates."""
    try:
        with open(path, newline="") as fh:
            rows = {r["subject_id"]: r for r in csv.DictReader(fh)}
    except FileNotFoundError as err:
        raise DataError(f"file not found: {path}") from err
    out = []
    for rec in records:
        if rec.subject_id not in rows:
            continue
        row = rows[rec.subject_id]
        cols = names or [k for k in row if k not in ("subject_id", "fold")]
        try:
            extra = {prefix + k: float(row[k]) for k in cols}
        except (KeyError, ValueError) as err:
            raise DataError(f"{path}: bad value for {rec.subject_id}: {err}") from err
        rec.covariates = {**rec.covariates, **extra}
        out.append(rec)
    if not out:
        raise DataError(f"{path}: no subject ids in common with the cohort")
    return out


def _records_with_extras(cfg):
    cohort_dir = _require_cohort(cfg)
    records = read_cohort_csv(os.path.join(cohort_dir, "survival.csv"))
    if cfg.get("scores"):
        records = _merge_covariates(records, cfg["scores"], ["risk"], prefix="")
        for r in records:
            r.covariates["risk_score"] = r.covariates.pop("risk")
    if cfg.get("distances"):
        records = _merge_covariates(records, cfg["distances"])
    return records


def _cox_rows(terms):
    return [[t.covariate, _fmt(t.beta), _fmt(t.hr), _fmt(t.ci_low), _fmt(t.ci_high), _fmt(t.p)] for t in terms]


COX_HEADER = ["covariate", "beta", "hr", "ci_low", "ci_high", "p"]


def cmd_cox(cfg):
    records = _records_with_extras(cfg)
    names = cfg.get("covariates") or list(records[0].covariates)
    unknown = [c for c in names if c not in records[0].covariates]
    if unknown:
        raise UsageError(f"unknown covariates {unknown}; available: {list(records[0].covariates)}")
    mode = cfg["mode"]
    prepare_out(cfg["out"], cfg.get("force", False))
    if mode == "multivariate":
        uni, multi = None, cox_fit(records, names)
    elif mode == "univariate":
        uni, multi = univariate_cox(records, names), None
    else:
        uni, multi = cox_workflow(records, names, alpha=cfg["alpha"])
    if uni is not None:
        _write_csv(os.path.join(cfg["out"], "cox_univariate.csv"), COX_HEADER, _cox_rows(uni.values()))
    if multi is not None:
        _write_csv(os.path.join(cfg["out"], "cox_multivariate.csv"), COX_HEADER, _cox_rows(multi.terms))
    write_snapshot(cfg["out"], _snapshot(cfg))
    for label, terms in (("univariate", uni.values() if uni else []), ("multivariate", multi.terms if multi else [])):
        for t in terms:
            print(f"{label:12s} {t.covariate:16s} HR {t.hr:.3f} [{t.ci_low:.3f}, {t.ci_high:.3f}] p={t.p:.3g}")


def _subgroups(records, name):
    """Binary covariates split by value; others at their median."""
    vals = np.array([r.covariates[name] for r in records])
    uniq = np.unique(vals)
    if len(uniq) <= 2:
        return [(f"{name}={u:g}", [r for r, v in zip(records, vals) if v == u]) for u in uniq]
    med = float(np.median(vals))
    return [(f"{name}<={med:g}", [r for r, v in zip(records, vals) if v <= med]),
            (f"{name}>{med:g}", [r for r, v in zip(records, vals) if v > med])]


def cmd_km(cfg):
    records = _records_with_extras(cfg)
    if "risk_score" not in records[0].covariates:
        raise UsageError("km needs --scores to define risk strata")
    for name in cfg.get("subgroups") or []:
        if name not in records[0].covariates:
            raise UsageError(f"unknown subgroup covariate {name!r}")
    prepare_out(cfg["out"], cfg.get("force", False))
    risks = np.array([r.covariates["risk_score"] for r in records])
    strat = RiskStratifier("fixed", cfg["threshold"]) if cfg.get("threshold") is not None else \
        RiskStratifier("median").fit(risks)
    cfg = {**cfg, "threshold": strat.threshold}
    panels = [("all", records)]
    for name in cfg.get("subgroups") or []:
        panels += _subgroups(records, name)
    km_rows, lr_rows, svg_panels = [], [], []
    for title, recs in panels:
        labels = strat.labels([r.covariates["risk_score"] for r in recs])
        curves, groups = {}, {}
        for g in ("high", "low"):
            members = [r for r, lab in zip(recs, labels) if lab == g]
            if not members:
                continue
            groups[g] = members
            curve = kaplan_meier(members)
            curves[f"{g} (n={len(members)})"] = curve
            tag = f"{title}:{g}"
            km_rows.append(["0.0", "1.0", len(members), tag])
            km_rows += [[_fmt(t), _fmt(s), int(n), tag] for t, s, n in zip(curve.times, curve.survival, curve.at_risk)]
        try:
            stat, p = log_rank_test(groups["high"], groups["low"])
        except (KeyError, UndefinedMetricError):
            stat, p = float("nan"), float("nan")
        lr_rows.append([title, len(recs), _fmt(stat), _fmt(p)])
        svg_panels.append((f"{title}  log-rank p={p:.3g}", curves))
    _write_csv(os.path.join(cfg["out"], "km.csv"), ["time", "survival", "at_risk", "group"], km_rows)
    _write_csv(os.path.join(cfg["out"], "logrank.csv"), ["panel", "n", "stat", "p"], lr_rows)
    with open(os.path.join(cfg["out"], "km.svg"), "w") as fh:
        fh.write(render_km(svg_panels))
    write_snapshot(cfg["out"], _snapshot(cfg))
    for title, n, stat, p in lr_rows:
        print(f"{title:20s} n={n:<4d} log-rank chi2={float(stat):.3f} p={float(p):.3g}")
