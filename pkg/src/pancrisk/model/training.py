"""Nested cross-validation: outer test folds, one inner validation split, selection by validation C-index."""
from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..survival import UndefinedMetricError, c_index, cox_nll, cumulative_auc
from ..tensorcore import Adam, ConfigurationError
from .config import ModelConfig
from .features import augment, collate
from .network import PrognosticNet


@dataclass
class TrainConfig:
    folds: int = 5
    epochs: int = 100
    batch: int = 16
    lr: float = 2e-3
    weight_decay: float = 0.0
    val_fraction: float = 0.2
    seed: int = 0
    dtype: str = "float32"
    augment: bool = False
    max_rotation: float = 15.0
    max_shift: int = 2
    horizon: float = 36.0
    workers: int = 1

    def __post_init__(self):
        if self.folds < 2:
            raise ConfigurationError(f"need at least 2 folds, got {self.folds}")
        if self.epochs < 1 or self.batch < 2:
            raise ConfigurationError("epochs must be >= 1 and batch >= 2")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigurationError("val_fraction must lie in (0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class FoldResult:
    fold: int
    test_ids: list
    test_risks: np.ndarray
    test_c: float
    test_auc: float
    best_epoch: int
    best_val_c: float
    state: dict
    log: list = field(default_factory=list)  # dicts: fold, epoch, loss, val_c
    skipped: str = ""


def outer_folds(n, k, seed):
    """Seeded partition of ``range(n)`` into ``k`` test folds."""
    if k > n:
        raise ConfigurationError(f"{k} folds for {n} subjects")
    perm = np.random.default_rng([seed, 2]).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def inner_split(train_idx, val_fraction, seed, fold):
    perm = np.random.default_rng([seed, fold, 4]).permutation(train_idx)
    n_val = max(2, int(round(val_fraction * len(perm))))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def fold_seed(seed, fold):
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def _safe_metric(fn, *args):
    try:
        return float(fn(*args))
    except UndefinedMetricError:
        return float("nan")


def train_fold(features, test_idx, fold, model_cfg, train_cfg, samples=None):
    n = len(features)
    train_all = np.setdiff1d(np.arange(n), test_idx)
    train_idx, val_idx = inner_split(train_all, train_cfg.val_fraction, train_cfg.seed, fold)
    times = np.array([f.time for f in features])
    events = np.array([f.event for f in features], dtype=bool)
    test_ids = [features[i].subject_id for i in test_idx]
    if not events[train_idx].any() or not events[test_idx].any():
        msg = f"fold {fold}: no events in the {'training' if not events[train_idx].any() else 'test'} split"
        warnings.warn(msg + "; fold skipped")
        return FoldResult(fold, test_ids, np.full(len(test_idx), np.nan), float("nan"), float("nan"),
                          -1, float("nan"), {}, [], msg)

    dtype = np.float32 if train_cfg.dtype == "float32" else np.float64
    net = PrognosticNet(model_cfg, seed=fold_seed(train_cfg.seed, fold), dtype=dtype)
    opt = Adam(lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    rng = np.random.default_rng([train_cfg.seed, fold, 3])
    val_feats = [features[i] for i in val_idx]
    val_records = (times[val_idx], events[val_idx])
    best = (-np.inf, -1, net.store.state())
    log = []
    for epoch in range(1, train_cfg.epochs + 1):
        net.train()
        order = rng.permutation(train_idx)
        losses = []
        for lo in range(0, len(order), train_cfg.batch):
            idx = order[lo:lo + train_cfg.batch]
            if len(idx) < 2 or not events[idx].any():
                continue
            if train_cfg.augment and samples is not None:
                batch_feats = [augment(features[i], samples[i], model_cfg, rng,
                                       train_cfg.max_rotation, train_cfg.max_shift) for i in idx]
            else:
                batch_feats = [features[i] for i in idx]
            batch = collate(batch_feats)
            net.store.zero_grad()
            loss = cox_nll(net.log_hazard(batch), (batch.times, batch.events))
            loss.backward()
            opt.step(net.store)
            losses.append(float(loss.data))
        val_c = _safe_metric(c_index, net.risk_scores(val_feats), val_records)
        log.append({"fold": fold, "epoch": epoch, "loss": float(np.mean(losses)) if losses else float("nan"),
                    "val_c": val_c})
        score = val_c if np.isfinite(val_c) else -np.inf
        if score > best[0] or best[1] < 0:
            best = (score, epoch, net.store.state())

    net.store.load_state(best[2])
    test_risks = net.risk_scores([features[i] for i in test_idx])
    test_records = (times[test_idx], events[test_idx])
    test_c = _safe_metric(c_index, test_risks, test_records)
    test_auc = _safe_metric(cumulative_auc, test_risks, test_records, train_cfg.horizon)
    return FoldResult(fold, test_ids, test_risks, test_c, test_auc, best[1], float(best[0]), best[2], log)


def _train_fold_job(args):
    return train_fold(*args)


def nested_cv(features, model_cfg=None, train_cfg=None, samples=None):
    """Train one model per outer fold; returns the list of FoldResult in fold order."""
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    splits = outer_folds(len(features), train_cfg.folds, train_cfg.seed)
    jobs = [(features, test_idx, fold, model_cfg, train_cfg, samples) for fold, test_idx in enumerate(splits)]
    if train_cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=train_cfg.workers) as pool:
            return list(pool.map(_train_fold_job, jobs))
    return [train_fold(*job) for job in jobs]


def summarize(results):
    """Mean and sample sd of test C-index and AUC over the outer folds that ran."""
    done = [r for r in results if not r.skipped]
    c = np.array([r.test_c for r in done])
    auc = np.array([r.test_auc for r in done])

    def stats(a):
        a = a[np.isfinite(a)]
        if len(a) == 0:
            return float("nan"), float("nan")
        return float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0

    (cm, cs), (am, as_) = stats(c), stats(auc)
    return {"folds": len(done), "c_mean": cm, "c_sd": cs, "auc_mean": am, "auc_sd": as_}
