import csv
import json
import os
import shutil

import numpy as np
import pytest
from scipy.stats import spearmanr

from pancrisk.cli import main
from pancrisk.cli.runconfig import SNAPSHOT
from pancrisk.geometry import VESSELS
from pancrisk.model import ModelConfig
from pancrisk.model.features import sample_structures
from pancrisk.survival import c_index, make_records, read_cohort_csv, write_cohort_csv
from pancrisk.synthdata import load_subject, read_manifest

TINY_MODEL = dict(block_channels=[2, 2, 2], lift_channels=[4, 4, 4], heads=2, ff_hidden=4, c_t=4, c_s=4,
                  structure_channels=[2, 2, 2], k=4, n_points=32, embed_dim=4, distance_heads=2, c_d=4)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def tree_bytes(root):
    out = {}
    for d, _, files in os.walk(root):
        for f in files:
            p = os.path.join(d, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh)
    return str(path)


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "cohort"
    assert main(["gen-data", "--n", "20", "--seed", "3", "--out", str(out)]) == 0
    return str(out)


@pytest.fixture(scope="module")
def trained(cohort, tmp_path_factory):
    root = tmp_path_factory.mktemp("train")
    cfg = write_json(root / "cfg.json", {"model": TINY_MODEL})
    out = str(root / "run")
    args = ["train", "--cohort", cohort, "--config", cfg, "--folds", "2", "--epochs", "6", "--batch", "4",
            "--lr", "0.01", "--seed", "1", "--out", out]
    assert main(args) == 0
    return out


# -- gen-data ----------------------------------------------------------------------

def test_gen_data_rejects_zero_subjects(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--n", "0", "--out", str(tmp_path / "x")])
    assert exc.value.code == 1


def test_gen_data_twice_gives_identical_trees(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-data", "--n", "5", "--seed", "7", "--out", str(a)]) == 0
    assert main(["gen-data", "--n", "5", "--seed", "7", "--out", str(b)]) == 0
    assert tree_bytes(a) == tree_bytes(b)


def test_gen_data_refuses_non_empty_out(cohort):
    assert main(["gen-data", "--n", "3", "--out", cohort]) == 1


def test_gen_data_rerun_from_snapshot(tmp_path, cohort):
    out = tmp_path / "again"
    assert main(["gen-data", "--config", os.path.join(cohort, SNAPSHOT), "--out", str(out)]) == 0
    assert tree_bytes(out) == tree_bytes(cohort)


def test_gen_data_manifest_risk_shortens_survival(tmp_path):
    out = tmp_path / "big"
    assert main(["gen-data", "--n", "200", "--seed", "0", "--out", str(out)]) == 0
    lp = {r["subject_id"]: r["linear_predictor"] for r in read_manifest(str(out))}
    recs = read_cohort_csv(str(out / "survival.csv"))
    rho = spearmanr([lp[r.subject_id] for r in recs], [r.time for r in recs])[0]
    assert rho < 0


def test_bad_config_is_a_usage_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1


# -- distances --------------------------------------------------------------------------

def brute_set_distance(a, b):
    d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return d.min(1).mean() + d.min(0).mean()


def test_distances_match_brute_force(cohort, tmp_path):
    out = tmp_path / "dist"
    assert main(["distances", "--cohort", cohort, "--points", "200", "--out", str(out)]) == 0
    with open(out / "distances.csv") as fh:
        assert fh.readline().strip() == "subject_id,d_pvsv,d_smv,d_sma,d_tc"
    seeds = {r["subject_id"]: r["seed"] for r in read_manifest(cohort)}
    for row in read_rows(out / "distances.csv")[:5]:
        sets = sample_structures(load_subject(cohort, row["subject_id"]), 200, seeds[row["subject_id"]])
        for v, col in zip(VESSELS, ("d_pvsv", "d_smv", "d_sma", "d_tc")):
            ref = brute_set_distance(sets[v].points, sets["PDAC"].points)
            assert abs(float(row[col]) - ref) < 1e-9


@pytest.mark.parametrize("gap, lo, hi", [(-1.5, 0.0, 0.5), (4.0, 40.0, 60.0)])
def test_distances_closest_subsets_reflect_contact(tmp_path, gap, lo, hi):
    cfg = write_json(tmp_path / "g.json", {"sampler": {"gap_range": [gap, gap]}})
    assert main(["gen-data", "--n", "2", "--config", cfg, "--out", str(tmp_path / "c")]) == 0
    assert main(["distances", "--cohort", str(tmp_path / "c"), "--closest", "32", "--out", str(tmp_path / "d")]) == 0
    for row in read_rows(tmp_path / "d" / "distances.csv"):
        vals = [float(row[c]) for c in ("d_pvsv", "d_smv", "d_sma", "d_tc")]
        assert all(lo <= x <= hi for x in vals)


def test_distances_missing_mask_is_data_error(tmp_path):
    c = tmp_path / "c"
    assert main(["gen-data", "--n", "2", "--out", str(c)]) == 0
    victim = next(p for p in (c / "S0001").iterdir() if "sma" in p.name.lower())
    victim.unlink()
    out = tmp_path / "d"
    assert main(["distances", "--cohort", str(c), "--out", str(out)]) == 2
    errors = read_rows(out / "distance_errors.csv")
    assert [e["subject_id"] for e in errors] == ["S0001"]


def test_distances_without_cohort(tmp_path):
    assert main(["distances", "--cohort", str(tmp_path / "nope"), "--out", str(tmp_path / "d")]) == 2


# -- train / eval -------------------------------------------------------------------------

def test_train_outputs(trained):
    for name in ("train_log.csv", "folds.csv", "risk_scores.csv", "folds.json", SNAPSHOT,
                 "fold0/params.bin", "fold1/params.bin"):
        assert os.path.exists(os.path.join(trained, name)), name
    log = read_rows(os.path.join(trained, "train_log.csv"))
    assert list(log[0]) == ["fold", "epoch", "loss", "val_c"]
    assert len(log) == 12


def test_train_loss_decreases(trained):
    log = read_rows(os.path.join(trained, "train_log.csv"))
    for fold in ("0", "1"):
        losses = [float(r["loss"]) for r in log if r["fold"] == fold]
        assert losses[-1] < losses[0]


def test_train_default_is_neural_k32(trained):
    with open(os.path.join(trained, SNAPSHOT)) as fh:
        snap = json.load(fh)
    assert "distance_mode" not in snap["model"]
    assert ModelConfig().distance_mode == "neural" and ModelConfig().k == 32
    assert snap["train"]["batch"] == 4


def test_train_rerun_from_snapshot_identical_log(trained, cohort, tmp_path):
    out = tmp_path / "rerun"
    assert main(["train", "--config", os.path.join(trained, SNAPSHOT), "--out", str(out)]) == 0
    for name in ("train_log.csv", "folds.csv", "risk_scores.csv", "fold0/params.bin"):
        with open(os.path.join(trained, name), "rb") as a, open(out / name, "rb") as b:
            assert a.read() == b.read(), name


def test_train_k_sweep_table(cohort, tmp_path, capsys):
    cfg = write_json(tmp_path / "cfg.json", {"model": TINY_MODEL})
    out = tmp_path / "sweep"
    assert main(["train", "--cohort", cohort, "--config", cfg, "--folds", "2", "--epochs", "1", "--batch", "8",
                 "--k", "2", "4", "--out", str(out)]) == 0
    table = read_rows(out / "k_sweep.csv")
    assert [r["k"] for r in table] == ["2", "4"]
    assert (out / "k2" / "train_log.csv").exists() and (out / "k4" / "train_log.csv").exists()
    assert "K   C-index" in capsys.readouterr().out


def test_train_bad_folds_is_usage_error(cohort, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--cohort", cohort, "--folds", "0", "--out", str(tmp_path / "t")])
    assert exc.value.code == 1


def test_eval_oracle_equals_c_index(cohort, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", "--cohort", cohort, "--oracle", "--out", str(out)]) == 0
    lp = {r["subject_id"]: r["linear_predictor"] for r in read_manifest(cohort)}
    recs = read_cohort_csv(os.path.join(cohort, "survival.csv"))
    ref = c_index(np.array([lp[r.subject_id] for r in recs]),
                  (np.array([r.time for r in recs]), np.array([r.event for r in recs])))
    got = read_rows(out / "metrics.csv")
    assert len(got) == 1 and float(got[0]["c_index"]) == ref


def test_eval_run_matches_training_scores(trained, cohort, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", "--cohort", cohort, "--run", trained, "--out", str(out)]) == 0
    metrics = read_rows(out / "metrics.csv")
    folds = read_rows(os.path.join(trained, "folds.csv"))
    assert [m["fold"] for m in metrics] == [f["fold"] for f in folds]
    for m, f in zip(metrics, folds):
        assert float(m["c_index"]) == pytest.approx(float(f["test_c"]), abs=1e-12)
    c = np.array([float(m["c_index"]) for m in metrics])
    summary = (out / "summary.txt").read_text()
    assert f"{c.mean():.3f} ± {c.std(ddof=1):.3f}" in summary


def test_eval_missing_fold_params(trained, cohort, tmp_path, capsys):
    run = tmp_path / "run"
    shutil.copytree(trained, run)
    os.remove(run / "fold1" / "params.bin")
    assert main(["eval", "--cohort", cohort, "--run", str(run), "--out", str(tmp_path / "e")]) == 2
    assert "fold(s) 1" in capsys.readouterr().err


def test_eval_needs_a_source(cohort, tmp_path):
    assert main(["eval", "--cohort", cohort, "--out", str(tmp_path / "e")]) == 1


# -- cox / km ----------------------------------------------------------------------------------

def two_arm_cohort(root, n, hr, seed):
    rng = np.random.default_rng(seed)
    arm = (np.arange(n) % 2).astype(float)
    t = rng.exponential(1.0 / (0.05 * hr ** arm))
    c = rng.exponential(100.0, n)
    recs = make_records(np.minimum(t, c), t <= c, {"arm": arm, "noise": rng.standard_normal(n)})
    os.makedirs(root, exist_ok=True)
    write_cohort_csv(os.path.join(root, "survival.csv"), recs)
    return str(root)


def test_cox_recovers_hazard_ratio_two(tmp_path):
    cohort = two_arm_cohort(tmp_path / "arms", 400, 2.0, seed=11)
    out = tmp_path / "cox"
    assert main(["cox", "--cohort", cohort, "--mode", "univariate", "--out", str(out)]) == 0
    rows = {r["covariate"]: r for r in read_rows(out / "cox_univariate.csv")}
    assert list(read_rows(out / "cox_univariate.csv")[0]) == ["covariate", "beta", "hr", "ci_low", "ci_high", "p"]
    assert 1.6 <= float(rows["arm"]["hr"]) <= 2.5 and float(rows["arm"]["p"]) < 0.01


def test_cox_workflow_keeps_significant_terms(tmp_path):
    cohort = two_arm_cohort(tmp_path / "arms", 400, 2.0, seed=11)
    out = tmp_path / "cox"
    assert main(["cox", "--cohort", cohort, "--out", str(out)]) == 0
    uni = {r["covariate"]: float(r["p"]) for r in read_rows(out / "cox_univariate.csv")}
    multi = [r["covariate"] for r in read_rows(out / "cox_multivariate.csv")]
    assert multi == [c for c, p in uni.items() if p < 0.05]


def test_cox_duplicated_risk_score_is_collinear(tmp_path):
    cohort = two_arm_cohort(tmp_path / "arms", 60, 2.0, seed=12)
    recs = read_cohort_csv(os.path.join(cohort, "survival.csv"))
    scores = tmp_path / "scores.csv"
    with open(scores, "w") as fh:
        fh.write("subject_id,risk\n")
        for r in recs:
            fh.write(f"{r.subject_id},{r.covariates['noise']!r}\n")
    args = ["cox", "--cohort", cohort, "--scores", str(scores), "--mode", "multivariate",
            "--covariates", "noise", "risk_score", "--out", str(tmp_path / "c")]
    assert main(args) == 3


def test_cox_unknown_covariate(tmp_path):
    cohort = two_arm_cohort(tmp_path / "arms", 20, 2.0, seed=1)
    assert main(["cox", "--cohort", cohort, "--covariates", "age", "--out", str(tmp_path / "c")]) == 1


def test_km_outputs(trained, cohort, tmp_path):
    out = tmp_path / "km"
    args = ["km", "--cohort", cohort, "--scores", os.path.join(trained, "risk_scores.csv"),
            "--subgroups", "sex", "age", "--out", str(out)]
    assert main(args) == 0
    by_group = {}
    for r in read_rows(out / "km.csv"):
        by_group.setdefault(r["group"], []).append(float(r["survival"]))
    assert by_group
    for s in by_group.values():
        assert s[0] == 1.0 and all(b <= a for a, b in zip(s, s[1:]))
    svg = (out / "km.svg").read_text()
    assert svg.startswith("<svg") and "<polyline" in svg
    panels = [r["panel"] for r in read_rows(out / "logrank.csv")]
    assert panels[0] == "all" and len(panels) == 5
    with open(out / SNAPSHOT) as fh:
        assert json.load(fh)["threshold"] is not None


def test_km_without_scores_is_usage_error(cohort, tmp_path):
    assert main(["km", "--cohort", cohort, "--out", str(tmp_path / "k")]) == 1
