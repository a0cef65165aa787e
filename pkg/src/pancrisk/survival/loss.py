"""Cox negative log partial likelihood as a differentiable training loss."""
from __future__ import annotations

import numpy as np

from ..tensorcore import DiffArray
from .records import DegenerateBatchError, as_arrays


def cox_nll(risks, records):
    """Mean over events of ``-(r_i - log sum_{t_j >= t_i} exp(r_j))``.

    Tied event times share one risk set (Breslow). ``risks`` is a DiffArray of
    shape (n,) holding log-hazards.
    """
    times, events = as_arrays(records)
    r = risks.data.reshape(-1)
    n = len(r)
    if n != len(times):
        raise ValueError(f"{n} risks for {len(times)} records")
    if n < 2:
        raise DegenerateBatchError("Cox loss needs at least two subjects")
    n_events = int(events.sum())
    if n_events == 0:
        raise DegenerateBatchError("batch contains no events")
    at_risk = times[None, :] >= times[:, None]  # row i: risk set of subject i
    shift = r.max()
    w = np.exp(r - shift)
    denom = at_risk @ w
    log_denom = np.log(denom) + shift
    loss = -np.sum((r - log_denom)[events]) / n_events

    def back(g):
        # d/dr_k = -(1/E) [delta_k - sum_{i event} R_ik w_k / S_i]
        share = (at_risk[events] / denom[events, None]).sum(axis=0) * w
        grad = -(events.astype(r.dtype) - share) / n_events
        risks.grad += (g * grad).reshape(risks.shape)

    return DiffArray._result(np.asarray(loss, dtype=risks.dtype), (risks,), back)
