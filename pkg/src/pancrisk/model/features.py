"""Per-subject network inputs, computed once and reused across epochs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..geometry import VESSELS, Structure, extract_surface, k_closest_subset, sample_uniform, set_distance
from ..tensorcore.ops import numpy_avg_pool3d

# sampling seeds are derived from the subject seed and this tag per structure
_SAMPLE_TAG = 7919


@dataclass
class SubjectFeatures:
    subject_id: str
    phases: np.ndarray  # (3, h, w, d) pooled intensities
    pairs: np.ndarray  # (4, 2, h, w, d) pooled PDAC/vessel masks, VESSELS order
    points: np.ndarray  # (4, 2, K, 3) normalized K-closest coordinates (vessel, PDAC)
    chamfer: np.ndarray  # (4,) set distances between sampled surfaces
    time: float = 0.0
    event: bool = False


def normalize_pair(v_pts, p_pts, mode="rms", scale=10.0):
    """Center a K-closest pair at its joint centroid and rescale.

    ``rms`` scales to unit RMS radius about the centroid; ``fixed`` divides by
    ``scale`` (mm) and keeps absolute size.
    """
    both = np.concatenate([v_pts, p_pts])
    c = both.mean(axis=0)
    if mode == "rms":
        r = np.sqrt(((both - c) ** 2).sum(axis=1).mean())
        s = r if r > 0 else 1.0
    elif mode == "fixed":
        s = scale
    else:
        raise ValueError(f"unknown coordinate normalization {mode!r}")
    return (v_pts - c) / s, (p_pts - c) / s


def sample_structures(sample, n_points, seed):
    """Uniform surface samples of PDAC and each vessel, seeded per structure."""
    pdac = extract_surface(sample.pdac_mask, Structure.PDAC)
    out = {"PDAC": sample_uniform(pdac, n_points, [seed, _SAMPLE_TAG, 0])}
    for i, v in enumerate(VESSELS, start=1):
        surf = extract_surface(sample.vessel_masks[v], Structure(v))
        out[v] = sample_uniform(surf, n_points, [seed, _SAMPLE_TAG, i])
    return out


def subject_features(sample, config, seed=None, coord_norm="rms"):
    """Pool volumes and masks and build the geometric inputs for one subject."""
    if seed is None:
        seed = int(sample.info.get("seed", 0))
    f = config.input_pool
    phases = numpy_avg_pool3d(np.asarray(sample.phases, dtype=np.float64), f)
    pdac = numpy_avg_pool3d(sample.pdac_mask.labels.astype(np.float64), f)
    pairs = np.stack([np.stack([pdac, numpy_avg_pool3d(sample.vessel_masks[v].labels.astype(np.float64), f)])
                      for v in VESSELS])
    sets = sample_structures(sample, config.n_points, seed)
    points = np.empty((len(VESSELS), 2, config.k, 3))
    chamfer = np.empty(len(VESSELS))
    for i, v in enumerate(VESSELS):
        chamfer[i] = set_distance(sets[v], sets["PDAC"], squared=config.squared_distance)
        vc, pc = k_closest_subset(sets[v], sets["PDAC"], config.k)
        points[i, 0], points[i, 1] = normalize_pair(vc.points, pc.points, coord_norm, config.coord_scale)
    rec = sample.survival
    return SubjectFeatures(sample.subject_id, phases, pairs, points, chamfer,
                           float(rec.time) if rec else 0.0, bool(rec.event) if rec else False)


@dataclass
class Batch:
    phases: np.ndarray  # (B, 3, h, w, d)
    pairs: np.ndarray  # (B, 4, 2, h, w, d)
    points: np.ndarray  # (B, 4, 2, K, 3)
    chamfer: np.ndarray  # (B, 4)
    times: np.ndarray
    events: np.ndarray

    def __len__(self):
        return len(self.times)


def collate(features, dtype=np.float64):
    return Batch(
        np.stack([f.phases for f in features]).astype(dtype),
        np.stack([f.pairs for f in features]).astype(dtype),
        np.stack([f.points for f in features]).astype(dtype),
        np.stack([f.chamfer for f in features]).astype(dtype),
        np.array([f.time for f in features]),
        np.array([f.event for f in features], dtype=bool),
    )


def augment(feature, sample, config, rng, max_rotation=15.0, max_shift=2):
    """Random axial rotation and integer shift of one subject's network inputs.

    Volumes and masks are transformed at full resolution and pooled again. The
    K-closest point sets are rigidly rotated instead of re-extracted, which is
    exact because the selection is invariant to rigid motion.
    """
    angle = rng.uniform(-max_rotation, max_rotation)
    shift = rng.integers(-max_shift, max_shift + 1, size=3)

    def move(vol, order):
        out = ndimage.rotate(vol, angle, axes=(0, 1), reshape=False, order=order, mode="nearest")
        return ndimage.shift(out, shift, order=0, mode="nearest")

    f = config.input_pool
    phases = np.stack([numpy_avg_pool3d(move(p.astype(np.float64), 1), f) for p in sample.phases])
    pdac = numpy_avg_pool3d(move(sample.pdac_mask.labels.astype(np.float64), 0), f)
    pairs = np.stack([np.stack([pdac, numpy_avg_pool3d(move(sample.vessel_masks[v].labels.astype(np.float64), 0), f)])
                      for v in VESSELS])
    # rotation of (x, y) coordinates matching ndimage's sense on axes (0, 1)
    th = np.deg2rad(angle)
    rot = np.array([[np.cos(th), -np.sin(th), 0.0], [np.sin(th), np.cos(th), 0.0], [0.0, 0.0, 1.0]])
    points = feature.points @ rot.T
    return SubjectFeatures(feature.subject_id, phases, pairs, points, feature.chamfer, feature.time, feature.event)
