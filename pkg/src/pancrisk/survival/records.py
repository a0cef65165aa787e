from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class UndefinedMetricError(ValueError):
    pass


class DegenerateBatchError(ValueError):
    pass


@dataclass
class SurvivalRecord:
    time: float
    event: bool
    covariates: dict = field(default_factory=dict)
    subject_id: str = ""

    def __post_init__(self):
        if not self.time > 0:
            raise ValueError(f"survival time must be positive, got {self.time}")
        self.event = bool(self.event)


def as_arrays(records):
    """(times, events) float/bool arrays from records or from a ``(times, events)`` pair."""
    if isinstance(records, tuple) and len(records) == 2:
        t, e = records
        return np.asarray(t, dtype=np.float64), np.asarray(e, dtype=bool)
    t = np.array([r.time for r in records], dtype=np.float64)
    e = np.array([r.event for r in records], dtype=bool)
    return t, e


def make_records(times, events, covariates=None, ids=None):
    covariates = covariates or {}
    out = []
    for i, (t, e) in enumerate(zip(times, events)):
        cov = {k: float(v[i]) for k, v in covariates.items()}
        out.append(SurvivalRecord(float(t), bool(e), cov, ids[i] if ids is not None else str(i)))
    return out


def read_cohort_csv(path):
    """Read ``subject_id,time_months,event,<covariate...>`` into SurvivalRecords."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        head = reader.fieldnames or []
        if head[:3] != ["subject_id", "time_months", "event"]:
            raise ValueError(f"{path}: header must start with subject_id,time_months,event; got {head[:3]}")
        cov_names = head[3:]
        records = []
        for row in reader:
            cov = {k: float(row[k]) for k in cov_names}
            records.append(SurvivalRecord(float(row["time_months"]), int(row["event"]) == 1, cov,
                                          row["subject_id"]))
    return records


def write_cohort_csv(path, records, covariate_names=None):
    if covariate_names is None:
        covariate_names = list(records[0].covariates) if records else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "time_months", "event", *covariate_names])
        for r in records:
            w.writerow([r.subject_id, repr(float(r.time)), int(r.event),
                        *[repr(float(r.covariates[c])) for c in covariate_names]])
