"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Criterion 5 trains two full nested cross-validation runs and dominates the runtime
(roughly a quarter of an hour on a single core).
"""
import csv
import json
import math
import os
import time

import numpy as np
import pytest

from pancrisk.cli import main
from pancrisk.cli.runconfig import SNAPSHOT
from pancrisk.geometry import (SurfacePointSet, Structure, chamfer_distance, k_closest_subset,
                               point_to_surface, set_distance)
from pancrisk.model import (CrossPhaseFusion, ModelConfig, NeuralDistance, StructureBranch, TextureBlock,
                            TrainConfig, nested_cv, subject_features, summarize)
from pancrisk.survival import (c_index, cox_fit, cox_nll, cumulative_auc, kaplan_meier, make_records)
from pancrisk.synthdata import gen_cohort
from pancrisk.tensorcore import (Conv3d, DiffArray, FeedForward, LayerNorm, Linear, MultiHeadAttention,
                                 ParamStore, TransformerLayer, avg_pool3d, batch_norm, concat, conv3d, gelu,
                                 gradcheck, layer_norm, leaky_relu, linear, matmul, sigmoid, softmax_rows,
                                 stack, tensor)

TOY = dict(input_dims=(16, 16, 16), input_pool=2, block_channels=(2, 2, 2), lift_channels=(4, 4, 4),
           heads=2, ff_hidden=4, c_t=4, c_s=4, structure_channels=(2, 2, 2), k=4, n_points=32,
           embed_dim=4, distance_heads=2, c_d=4)


def rand(rng, *shape, positive=False):
    a = rng.standard_normal(shape)
    return DiffArray(np.abs(a) + 0.5 if positive else a, requires_grad=True)


def params(store):
    return list(store.params.values())


# -- 1 ---------------------------------------------------------------------------------

def primitive_checks(rng):
    mask = np.where(rng.random((4, 5)) < 0.3, -np.inf, 0.0)
    mask[:, 0] = 0.0
    s = ParamStore(rng_seed=1)
    lin, ln = Linear(s, "lin", 4, 3), LayerNorm(s, "ln", 4)
    conv = Conv3d(s, "conv", 2, 2, 3, padding=1)
    mha, ff = MultiHeadAttention(s, "mha", 4, 2), FeedForward(s, "ff", 4, 6)
    tl = TransformerLayer(s, "tl", 4, 2, 6)
    x34, x45 = rand(rng, 3, 4), rand(rng, 4, 5)
    vol = rand(rng, 1, 2, 4, 4, 4)
    seq = rand(rng, 2, 3, 4)
    return {
        "add/sub/neg": (lambda a, b: -(a + b) - a, [rand(rng, 3, 4), rand(rng, 4)]),
        "mul/div": (lambda a, b: a * b / (b + 3.0), [rand(rng, 3, 4), rand(rng, 3, 4, positive=True)]),
        "pow": (lambda a: a ** 3, [rand(rng, 5)]),
        "exp/log": (lambda a: a.exp() + a.log(), [rand(rng, 6, positive=True)]),
        "sum/mean": (lambda a: a.sum(axis=1) * a.mean(axis=0).sum(), [rand(rng, 3, 4)]),
        "reshape/transpose/getitem": (lambda a: a.reshape(4, 6).transpose(1, 0)[1:4, ::2], [rand(rng, 2, 3, 4)]),
        "matmul": (matmul, [x34, rand(rng, 4, 2)]),
        "softmax_rows(mask)": (lambda a: softmax_rows(a, mask), [x45]),
        "concat/stack": (lambda a, b: stack([concat([a, b], 0), concat([b, a], 0)], 1),
                         [rand(rng, 2, 3), rand(rng, 2, 3)]),
        "leaky_relu": (leaky_relu, [rand(rng, 10)]),
        "gelu": (gelu, [rand(rng, 10)]),
        "sigmoid": (sigmoid, [rand(rng, 10)]),
        "linear": (linear, [rand(rng, 2, 4), rand(rng, 4, 3), rand(rng, 3)]),
        "layer_norm": (layer_norm, [rand(rng, 3, 5), rand(rng, 5), rand(rng, 5)]),
        "batch_norm": (batch_norm, [rand(rng, 3, 2, 2, 2, 2), rand(rng, 2), rand(rng, 2)]),
        "conv3d": (lambda a, k, b: conv3d(a, k, b, stride=2, padding=1),
                   [rand(rng, 1, 2, 5, 5, 5), rand(rng, 3, 2, 3, 3, 3), rand(rng, 3)]),
        "avg_pool3d": (lambda a: avg_pool3d(a, 2), [rand(rng, 1, 2, 4, 4, 4)]),
        "Linear": (lambda *_: lin(x34), params(s)),
        "LayerNorm": (lambda a: ln(a), [x34]),
        "Conv3d": (lambda a: conv(a), [vol]),
        "MultiHeadAttention": (lambda a, b: mha(a, b), [seq, rand(rng, 2, 5, 4)]),
        "FeedForward": (lambda a: ff(a), [seq]),
        "TransformerLayer": (lambda a: tl(a), [seq]),
    }


def composite_checks(rng):
    cfg = ModelConfig(**TOY)
    s1, s2, s3, s4 = (ParamStore(rng_seed=i) for i in range(4))
    block = TextureBlock(s1, "b", 1, 2, 4, (2, 2, 2), 2, 4)
    fusion = CrossPhaseFusion(s2, "f", 2, 2, 4, "cross")
    struct = StructureBranch(s3, "s", cfg)
    dist = NeuralDistance(s4, "d", cfg)
    vol = tensor(rng.standard_normal((1, 1, 8, 8, 8)))
    pairs = tensor((rng.random((2, 4, 2, 8, 8, 8)) < 0.4).astype(float))
    pts = rand(rng, 2, 4, 2, 4, 3)
    phases = [tensor(rng.standard_normal((2, 2, 2))) for _ in range(3)]
    times = rng.exponential(10, 8)
    events = rng.random(8) < 0.7
    events[0] = True
    recs = make_records(times, events)
    return {
        "texture_block": (lambda *_: block(vol), params(s1), None),
        "cross_phase_fusion": (fusion, [rand(rng, 2, 2, 2) for _ in range(3)], None),
        "cross_phase_fusion(params)": (lambda *_: fusion(*phases), params(s2), None),
        "neural_distance": (dist, [pts], None),
        "neural_distance(params)": (lambda *_: dist(tensor(pts.data)), params(s4), None),
        "structure_branch": (lambda *_: struct(pairs), params(s3), 8),
        "cox_nll": (lambda r: cox_nll(r, recs), [rand(rng, 8)], None),
    }


def test_criterion_1_gradients(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_p, worst_c, failures = 0.0, 0.0, []
    for name, (fn, inputs) in primitive_checks(rng).items():
        err = gradcheck(fn, inputs)
        worst_p = max(worst_p, err)
        if not err < 1e-6:
            failures.append(f"{name}={err:.1e}")
    for name, (fn, inputs, cap) in composite_checks(rng).items():
        err = gradcheck(fn, inputs, max_entries=cap)
        worst_c = max(worst_c, err)
        if not err < 1e-5:
            failures.append(f"{name}={err:.1e}")
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 120
    acceptance(1, "gradient suite", ok,
               f"max rel. error primitives {worst_p:.1e} (<1e-6), composites {worst_c:.1e} (<1e-5), "
               f"{elapsed:.1f}s (<120s){'; failing: ' + ', '.join(failures) if failures else ''}")


# -- 2 ---------------------------------------------------------------------------------

def brute_sq(a, b):
    d = np.empty((len(a), len(b)))
    for i, p in enumerate(a):
        d[i] = ((b - p) ** 2).sum(1)
    return d


def test_criterion_2_geometry_oracles(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst, mismatches = 0.0, 0
    for i in range(200):
        na, nb = rng.integers(1, 501, 2)
        if i % 4 == 0:
            a = rng.integers(0, 12, (na, 3)).astype(float)  # lattice points produce ties
            b = rng.integers(0, 12, (nb, 3)).astype(float)
        else:
            a, b = rng.normal(0, 5, (na, 3)), rng.normal(2, 5, (nb, 3))
        d = brute_sq(a, b)
        da, db = d.min(1), d.min(0)
        ref = da.mean() + db.mean()
        sa, sb = SurfacePointSet(a, Structure.PDAC), SurfacePointSet(b, Structure.SMA)
        errs = [abs(set_distance(sa, sb) - ref), abs(chamfer_distance(sa, sb) - ref),
                abs(set_distance(sa, sb, squared=False) - (np.sqrt(da).mean() + np.sqrt(db).mean()))]
        v = a[rng.integers(na)]
        errs.append(abs(point_to_surface(v, sb) - ((b - v) ** 2).sum(1).min()))
        worst = max(worst, *errs)
        k = int(rng.integers(1, min(na, nb) + 1))
        ka, kb = k_closest_subset(sa, sb, k)
        ia = sorted(range(na), key=lambda j: (da[j], j))[:k]
        ib = sorted(range(nb), key=lambda j: (db[j], j))[:k]
        if not (np.array_equal(ka.points, a[ia]) and np.array_equal(kb.points, b[ib])):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and mismatches == 0 and elapsed < 60
    acceptance(2, "geometry oracles", ok,
               f"200 instances, max distance error {worst:.1e} (<1e-9), {mismatches} selection mismatches, "
               f"{elapsed:.1f}s (<60s)")


# -- 3 ---------------------------------------------------------------------------------

def test_criterion_3_fusion_mask(acceptance):
    rng = np.random.default_rng(2)
    nonzero, worst = 0, 0.0
    for i in range(100):
        c, d_tok, b = (int(x) for x in rng.integers(1, 5, 3))
        f = CrossPhaseFusion(ParamStore(rng_seed=i), "f", c, d_tok, 4, "cross", heads=1)
        f(*[tensor(rng.standard_normal((b, d_tok, c)) * rng.uniform(0.1, 10)) for _ in range(3)])
        w = f.last_weights
        for p in range(3):
            blk = w[..., p * c:(p + 1) * c, p * c:(p + 1) * c]
            nonzero += int(np.count_nonzero(blk))
        worst = max(worst, float(np.abs(w.sum(-1) - 1.0).max()))
    ok = nonzero == 0 and worst <= 1e-10
    acceptance(3, "cross-phase mask", ok,
               f"100 inputs, {nonzero} non-zero within-phase weights, max |row sum - 1| = {worst:.1e} (<=1e-10)")


# -- 4 ---------------------------------------------------------------------------------

def loop_loglik(beta, x, times, events):
    ll = 0.0
    for i in range(len(times)):
        if events[i]:
            ll += beta * x[i] - math.log(sum(math.exp(beta * x[j]) for j in range(len(times))
                                             if times[j] >= times[i]))
    return ll


def loop_auc(risks, times):
    n, grid = len(times), sorted({t for t in times if any(u > t for u in times)})
    total = weight = 0.0
    prev = 1.0
    for t in grid:
        num = den = 0.0
        for i in range(n):
            if times[i] <= t:
                for j in range(n):
                    if times[j] > t:
                        den += 1
                        num += 1.0 if risks[i] > risks[j] else 0.5 if risks[i] == risks[j] else 0.0
        s = sum(u > t for u in times) / n
        total += (num / den) * (prev - s)
        weight += prev - s
        prev = s
    return total / weight


def test_criterion_4_survival_fixtures(acceptance):
    checks = {}
    r = make_records
    checks["c_index triples"] = (c_index([3, 2, 1], r([1, 2, 3], [1, 1, 1])) == 1.0
                                 and c_index([1, 2, 3], r([1, 2, 3], [1, 1, 1])) == 0.0
                                 and c_index([3, 1, 2], r([1, 2, 3], [1, 0, 1])) == 1.0)
    km = kaplan_meier(r([1, 2, 3], [1, 1, 1]))
    km_c = kaplan_meier(r([1, 2, 3], [1, 0, 1]))
    checks["KM product-limit"] = (np.allclose(km.survival, [2 / 3, 1 / 3, 0], rtol=0, atol=1e-10)
                                  and list(km_c.times) == [1, 3]
                                  and np.allclose(km_c.survival, [2 / 3, 0], rtol=0, atol=1e-10)
                                  and np.all(kaplan_meier(r([1, 2, 3], [0, 0, 0]))([0, 1, 5]) == 1.0))
    checks["cox_nll = log(2)/2"] = abs(cox_nll(tensor([0.0, 0.0]), r([1, 2], [1, 1])).item()
                                       - 0.5 * math.log(2)) <= 1e-10

    rng = np.random.default_rng(5)
    x = (np.arange(40) % 2).astype(float)
    t = rng.exponential(1.0 / (0.05 * 2.0 ** x))
    grid = np.arange(-3.0, 3.0, 1e-3)
    best = grid[int(np.argmax([loop_loglik(b, x, t, np.ones(40)) for b in grid]))]
    beta = cox_fit(r(t, np.ones(40, bool), {"arm": x}), ["arm"])["arm"].beta
    checks["cox_fit vs grid"] = abs(beta - best) < 2e-3

    risks, times = rng.standard_normal(60), rng.exponential(10, 60)
    auc = cumulative_auc(risks, r(times, np.ones(60, bool)), horizon=np.inf)
    auc_err = abs(auc - loop_auc(risks, times))
    checks["cumulative_auc vs pairs"] = auc_err < 1e-9

    failed = [k for k, v in checks.items() if not v]
    acceptance(4, "survival fixtures", not failed,
               f"{len(checks) - len(failed)}/{len(checks)} fixture groups; cox beta error {abs(beta - best):.1e} "
               f"(<2e-3), AUC error {auc_err:.1e} (<1e-9){'; failing: ' + ', '.join(failed) if failed else ''}")


# -- 5 ---------------------------------------------------------------------------------

def test_criterion_5_end_to_end_learning(acceptance):
    cohort = gen_cohort(200, seed=0)
    train_cfg = TrainConfig(epochs=100)
    t0 = time.perf_counter()
    full_cfg = ModelConfig()
    feats = [subject_features(s, full_cfg) for s in cohort.samples]
    full = summarize(nested_cv(feats, full_cfg, train_cfg))
    full_time = time.perf_counter() - t0
    none = summarize(nested_cv(feats, ModelConfig(distance_mode="none"), train_cfg))
    total = time.perf_counter() - t0
    gap = full["c_mean"] - none["c_mean"]
    ok = full["c_mean"] >= 0.70 and gap >= 0.02 and full_time <= 900
    acceptance(5, "end-to-end learning", ok,
               f"full C {full['c_mean']:.3f} ± {full['c_sd']:.3f} (>=0.70), distance_mode=none "
               f"C {none['c_mean']:.3f} ± {none['c_sd']:.3f}, gap {gap:+.3f} (>=0.02); full run {full_time:.0f}s "
               f"(<=900s), both variants {total:.0f}s on {os.cpu_count()} core(s)")


# -- 6 ---------------------------------------------------------------------------------

def test_criterion_6_cox_recovery(acceptance):
    rng = np.random.default_rng(9)
    n = 400
    arm = (np.arange(n) % 2).astype(float)
    t = rng.exponential(1.0 / (0.05 * 2.0 ** arm))
    c = rng.exponential(100.0, n)
    term = cox_fit(make_records(np.minimum(t, c), t <= c, {"arm": arm}), ["arm"])["arm"]
    ok = 1.6 <= term.hr <= 2.5 and term.p < 0.01
    acceptance(6, "Cox recovery", ok,
               f"true HR 2, n={n}: fitted HR {term.hr:.3f} [{term.ci_low:.3f}, {term.ci_high:.3f}], p={term.p:.1e}")


# -- 7 / 8 -----------------------------------------------------------------------------

def tree_bytes(root):
    out = {}
    for d, _, files in os.walk(root):
        for f in files:
            p = os.path.join(d, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


def test_criterion_7_determinism(acceptance, tmp_path):
    model = {**TOY, "input_dims": [32, 32, 32], "input_pool": 4}
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": model}))
    codes = [main(["gen-data", "--n", "24", "--seed", "5", "--out", str(tmp_path / "c1")]),
             main(["gen-data", "--config", str(tmp_path / "c1" / SNAPSHOT), "--out", str(tmp_path / "c2")]),
             main(["train", "--cohort", str(tmp_path / "c1"), "--config", str(cfg), "--folds", "2", "--epochs", "3",
                   "--batch", "8", "--seed", "5", "--out", str(tmp_path / "t1")]),
             main(["train", "--config", str(tmp_path / "t1" / SNAPSHOT), "--out", str(tmp_path / "t2")])]
    same_cohort = codes[:2] == [0, 0] and tree_bytes(tmp_path / "c1") == tree_bytes(tmp_path / "c2")
    t1, t2 = tree_bytes(tmp_path / "t1"), tree_bytes(tmp_path / "t2")
    same_train = codes[2:] == [0, 0] and t1 == t2 and "train_log.csv" in t1
    acceptance(7, "determinism", same_cohort and same_train,
               f"exit codes {codes}; cohort tree identical: {same_cohort} ({len(tree_bytes(tmp_path / 'c1'))} files); "
               f"train outputs identical: {same_train} ({len(t1)} files)")


def test_criterion_8_k_sweep(acceptance, tmp_path, capsys):
    cohort = tmp_path / "c"
    assert main(["gen-data", "--n", "24", "--seed", "8", "--out", str(cohort)]) == 0
    code = main(["train", "--cohort", str(cohort), "--folds", "2", "--epochs", "1", "--k", "16", "32", "64", "128",
                 "--out", str(tmp_path / "sweep")])
    printed = capsys.readouterr().out
    table_path = tmp_path / "sweep" / "k_sweep.csv"
    rows = list(csv.DictReader(open(table_path))) if table_path.exists() else []
    ks = [int(r["k"]) for r in rows]
    ok = code == 0 and ks == [16, 32, 64, 128] and all(f"{k:>4}   " in printed for k in ks)
    acceptance(8, "K sweep", ok,
               f"exit {code}; table rows K={ks}; "
               + ", ".join(f"K={r['k']}: C {float(r['c_mean']):.3f}" for r in rows))
