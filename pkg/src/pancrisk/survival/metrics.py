"""Discrimination metrics, Kaplan-Meier estimation, log-rank test and risk stratification."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .records import UndefinedMetricError, as_arrays


def c_index(risks, records):
    """Harrell's concordance; higher risk should mean earlier failure. Risk ties count 1/2."""
    t, e = as_arrays(records)
    r = np.asarray(risks, dtype=np.float64).reshape(-1)
    if len(r) < 2:
        raise UndefinedMetricError("c-index needs at least two subjects")
    comparable = (t[:, None] < t[None, :]) & e[:, None]
    n_pairs = comparable.sum()
    if n_pairs == 0:
        raise UndefinedMetricError("no comparable pairs")
    conc = (r[:, None] > r[None, :]) & comparable
    ties = (r[:, None] == r[None, :]) & comparable
    return float((conc.sum() + 0.5 * ties.sum()) / n_pairs)


@dataclass
class KMCurve:
    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def __call__(self, t):
        """Right-continuous step function S(t)."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right") - 1
        s = np.concatenate([[1.0], self.survival])
        return s[idx + 1]

    def left_limit(self, t):
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="left") - 1
        s = np.concatenate([[1.0], self.survival])
        return s[idx + 1]


def kaplan_meier(records):
    t, e = as_arrays(records)
    if len(t) == 0:
        raise UndefinedMetricError("Kaplan-Meier needs at least one subject")
    ev_times = np.unique(t[e])
    at_risk = np.array([(t >= u).sum() for u in ev_times], dtype=np.int64)
    deaths = np.array([((t == u) & e).sum() for u in ev_times], dtype=np.int64)
    surv = np.cumprod(1.0 - deaths / at_risk) if len(ev_times) else np.zeros(0)
    return KMCurve(ev_times, surv, at_risk, deaths)


def cumulative_auc(risks, records, horizon=36.0):
    """Mean cumulative/dynamic AUC over event times up to ``horizon``.

    Cases at time t are subjects with an event by t, weighted by the inverse
    Kaplan-Meier estimate of the censoring survival just before their own time;
    controls are subjects still under observation after t. AUC(t) is averaged
    with weights given by the drops of the Kaplan-Meier survival curve.
    """
    t, e = as_arrays(records)
    r = np.asarray(risks, dtype=np.float64).reshape(-1)
    grid = np.unique(t[e & (t <= horizon)])
    grid = grid[[(t > u).any() for u in grid]]
    if len(grid) == 0:
        raise UndefinedMetricError(f"no event times up to {horizon} with subjects remaining at risk")
    cens = kaplan_meier((t, ~e))
    g = cens.left_limit(t)
    omega = np.where(e, 1.0 / np.where(g > 0, g, np.inf), 0.0)
    gt = (r[:, None] > r[None, :]).astype(np.float64) + 0.5 * (r[:, None] == r[None, :])
    aucs = np.empty(len(grid))
    for k, u in enumerate(grid):
        case_w = np.where(t <= u, omega, 0.0)
        ctrl = (t > u).astype(np.float64)
        aucs[k] = case_w @ gt @ ctrl / (case_w.sum() * ctrl.sum())
    surv = kaplan_meier((t, e))(grid)
    drops = -np.diff(np.concatenate([[1.0], surv]))
    if drops.sum() <= 0:
        raise UndefinedMetricError("survival curve has no drop before the horizon")
    return float(aucs @ drops / drops.sum())


def log_rank_test(group_a, group_b):
    """Two-group log-rank statistic and its chi-square(1) p-value."""
    ta, ea = as_arrays(group_a)
    tb, eb = as_arrays(group_b)
    if len(ta) == 0 or len(tb) == 0:
        raise UndefinedMetricError("log-rank test needs two non-empty groups")
    t = np.concatenate([ta, tb])
    e = np.concatenate([ea, eb])
    in_a = np.concatenate([np.ones(len(ta), bool), np.zeros(len(tb), bool)])
    ev_times = np.unique(t[e])
    if len(ev_times) == 0:
        raise UndefinedMetricError("log-rank test needs at least one event")
    o_minus_e = 0.0
    var = 0.0
    for u in ev_times:
        risk = t >= u
        n = risk.sum()
        n_a = (risk & in_a).sum()
        d = ((t == u) & e).sum()
        d_a = ((t == u) & e & in_a).sum()
        o_minus_e += d_a - d * n_a / n
        if n > 1:
            var += d * (n_a / n) * (1 - n_a / n) * (n - d) / (n - 1)
    if var <= 0:
        return 0.0, 1.0
    stat = float(o_minus_e ** 2 / var)
    return stat, float(chi2.sf(stat, 1))


class RiskStratifier:
    """Splits risks into high/low groups at a threshold learned once and reused."""

    def __init__(self, rule="median", threshold=None):
        if rule not in ("median", "fixed"):
            raise ValueError(f"unknown stratification rule {rule!r}")
        if rule == "fixed" and threshold is None:
            raise ValueError("fixed rule needs a threshold")
        self.rule = rule
        self.threshold = threshold

    def fit(self, risks):
        r = np.asarray(risks, dtype=np.float64)
        if len(r) < 2:
            raise ValueError("stratification needs at least two risks")
        if self.rule == "median":
            self.threshold = float(np.median(r))
            if np.all(r == r[0]):
                warnings.warn("constant risks: median stratification is degenerate, all labelled low",
                              RuntimeWarning)
        return self

    def labels(self, risks):
        if self.threshold is None:
            raise RuntimeError("stratifier has no threshold; call fit first")
        return np.where(np.asarray(risks, dtype=np.float64) > self.threshold, "high", "low")


def stratify(risks, threshold_rule="median", threshold=None):
    s = RiskStratifier(threshold_rule, threshold)
    if threshold_rule == "median":
        s.fit(risks)
    return s.labels(risks)
