"""Cox proportional-hazards regression fitted by damped Newton iteration (Breslow ties)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .records import UndefinedMetricError, as_arrays

Z95 = norm.ppf(0.975)


class CollinearityError(np.linalg.LinAlgError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass
class CoxTerm:
    covariate: str
    beta: float
    hr: float
    ci_low: float
    ci_high: float
    p: float
    se: float


@dataclass
class CoxResult:
    terms: list
    loglik: float
    loglik_null: float
    iterations: int
    loglik_trace: list

    def __getitem__(self, name):
        for t in self.terms:
            if t.covariate == name:
                return t
        raise KeyError(name)


def _risk_set_sums(times, order, x, beta):
    """Per-subject sums over {j: t_j >= t_i} of w, w x and w x x^T, with w = exp(x beta)."""
    eta = x @ beta
    shift = eta.max()
    w = np.exp(eta - shift)
    xs, ws = x[order], w[order]
    ts = times[order]
    # descending time order: cumulative sums include everything at later or equal times
    s0 = np.cumsum(ws)
    s1 = np.cumsum(ws[:, None] * xs, axis=0)
    s2 = np.cumsum(ws[:, None, None] * xs[:, :, None] * xs[:, None, :], axis=0)
    # last position of each tied block in descending order holds the full risk set
    last = np.searchsorted(-ts, -ts, side="right") - 1
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    pick = last[inv]
    return eta, shift, s0[pick], s1[pick], s2[pick]


def partial_loglik(times, events, x, beta):
    """Breslow log partial likelihood and its gradient / Hessian."""
    order = np.argsort(-times, kind="stable")
    eta, shift, s0, s1, s2 = _risk_set_sums(times, order, x, beta)
    ev = events
    ll = float(np.sum(eta[ev] - np.log(s0[ev]) - shift))
    xbar = s1[ev] / s0[ev, None]
    grad = (x[ev] - xbar).sum(axis=0)
    hess = -(s2[ev] / s0[ev, None, None] - xbar[:, :, None] * xbar[:, None, :]).sum(axis=0)
    return ll, grad, hess


def cox_fit(records, covariate_names, max_iter=100, tol=1e-10, x=None):
    """Fit all named covariates jointly and return per-covariate HR, 95% CI and Wald p."""
    times, events = as_arrays(records)
    if x is None:
        x = np.array([[r.covariates[c] for c in covariate_names] for r in records], dtype=np.float64)
    x = np.asarray(x, dtype=np.float64).reshape(len(times), -1)
    n, p = x.shape
    if not events.any():
        raise UndefinedMetricError("Cox regression needs at least one event")
    if n <= p:
        raise ValueError(f"need more subjects ({n}) than covariates ({p})")
    # columns constant over subjects carry no partial-likelihood information
    informative = np.ptp(x, axis=0) > 0
    xi = x[:, informative]
    if xi.shape[1] and np.linalg.matrix_rank(xi - xi.mean(axis=0)) < xi.shape[1]:
        names = [c for c, keep in zip(covariate_names, informative) if keep]
        raise CollinearityError(f"covariates are collinear: {names}")

    beta = np.zeros(xi.shape[1])
    ll, grad, hess = partial_loglik(times, events, xi, beta)
    ll_null = ll
    trace = [ll]
    it = 0
    for it in range(1, max_iter + 1):
        if xi.shape[1] == 0:
            break
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError as exc:
            raise CollinearityError(f"singular information matrix at iteration {it}") from exc
        scale = 1.0
        while True:
            cand = beta + scale * step
            ll_new, g_new, h_new = partial_loglik(times, events, xi, cand)
            if ll_new >= ll - 1e-12 or scale < 1e-8:
                break
            scale *= 0.5
        if ll_new < ll:
            # step halving found no ascent: already at the maximum up to rounding
            break
        converged = abs(ll_new - ll) < tol and np.max(np.abs(scale * step)) < np.sqrt(tol)
        beta, ll, grad, hess = cand, ll_new, g_new, h_new
        trace.append(ll)
        if converged:
            break
    else:
        raise ConvergenceError(
            f"Cox fit did not converge in {max_iter} iterations: beta={beta}, |grad|={np.abs(grad).max():.3g}"
        )

    cov = np.linalg.inv(-hess) if xi.shape[1] else np.zeros((0, 0))
    terms = []
    k = 0
    for name, keep in zip(covariate_names, informative):
        if keep:
            b, se = float(beta[k]), float(np.sqrt(cov[k, k]))
            k += 1
            pval = float(2 * norm.sf(abs(b) / se))
            terms.append(CoxTerm(name, b, float(np.exp(b)), float(np.exp(b - Z95 * se)),
                                 float(np.exp(b + Z95 * se)), pval, se))
        else:
            terms.append(CoxTerm(name, 0.0, 1.0, 0.0, float("inf"), 1.0, float("inf")))
    return CoxResult(terms, ll, ll_null, it, trace)


def univariate_cox(records, covariate_names, **kw):
    return {c: cox_fit(records, [c], **kw)[c] for c in covariate_names}


def cox_workflow(records, covariate_names, alpha=0.05, **kw):
    """Univariate screen, then a joint fit on covariates with p < alpha."""
    uni = univariate_cox(records, covariate_names, **kw)
    selected = [c for c in covariate_names if uni[c].p < alpha]
    multi = cox_fit(records, selected, **kw) if selected else None
    return uni, multi
