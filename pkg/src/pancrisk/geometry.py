"""Surface extraction from voxel masks and tumor-vessel surface distances.

Distances follow the squared point-to-surface convention: the distance from a
point to a set is the minimum squared Euclidean distance to any member, and
the set distance averages that quantity in both directions.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

VESSELS = ("PVSV", "SMV", "SMA", "TC")


class Structure(str, Enum):
    PDAC = "PDAC"
    PVSV = "PVSV"
    SMA = "SMA"
    SMV = "SMV"
    TC = "TC"


class EmptyRegionError(ValueError):
    pass


@dataclass(frozen=True)
class VoxelMask:
    labels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ValueError(f"mask must be 3D, got shape {labels.shape}")
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("mask labels must be 0 or 1")
        object.__setattr__(self, "labels", labels.astype(np.uint8))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def shape(self):
        return self.labels.shape


@dataclass(frozen=True)
class SurfacePointSet:
    points: np.ndarray
    source_label: Structure = Structure.PDAC

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def translated(self, offset):
        return SurfacePointSet(self.points + np.asarray(offset, dtype=np.float64), self.source_label)


def _as_points(s):
    pts = s.points if isinstance(s, SurfacePointSet) else np.asarray(s, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyRegionError("point set is empty")
    return pts


def boundary_voxels(labels):
    """Boolean array of foreground voxels with a background (or out-of-volume) face neighbor."""
    fg = np.asarray(labels).astype(bool)
    padded = np.pad(fg, 1, constant_values=False)
    interior = fg.copy()
    core = (slice(1, -1),) * 3
    for axis in range(3):
        for shift in (1, -1):
            interior &= np.roll(padded, shift, axis=axis)[core]
    return fg & ~interior


def extract_surface(mask, label=Structure.PDAC):
    """Centers of boundary voxels (6-connectivity) in physical units, row-major order."""
    if not mask.labels.any():
        raise EmptyRegionError(f"mask for {Structure(label).value} has no foreground voxels")
    idx = np.argwhere(boundary_voxels(mask.labels))
    return SurfacePointSet(idx * np.asarray(mask.spacing), Structure(label))


def sample_uniform(surface, n, seed):
    """Draw ``n`` surface points; with replacement only when ``n`` exceeds the surface size."""
    if n <= 0:
        raise ValueError(f"sample size must be positive, got {n}")
    pts = _as_points(surface)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pts), size=n, replace=n > len(pts))
    return SurfacePointSet(pts[idx], getattr(surface, "source_label", Structure.PDAC))


def _sq_dists_to_set(a, b):
    """For each row of ``a``, the minimum squared distance to the rows of ``b``.

    A KD-tree finds the nearest index; the squared distance is then recomputed
    from the coordinates so it matches a direct scan.
    """
    _, idx = cKDTree(b).query(a)
    diff = a - b[idx]
    return (diff * diff).sum(axis=-1)


def point_to_surface(v, s, squared=True):
    d = _sq_dists_to_set(np.asarray(v, dtype=np.float64).reshape(1, 3), _as_points(s))[0]
    return d if squared else float(np.sqrt(d))


def point_set_distances(a, b, squared=True):
    d = _sq_dists_to_set(_as_points(a), _as_points(b))
    return d if squared else np.sqrt(d)


def set_distance(v_set, p_set, squared=True):
    """Mean point-to-surface distance from V to P plus the mean from P to V."""
    a, b = _as_points(v_set), _as_points(p_set)
    return float(point_set_distances(a, b, squared).mean() + point_set_distances(b, a, squared).mean())


def chamfer_distance(v_set, p_set, squared=True):
    return set_distance(v_set, p_set, squared)


def k_closest_subset(v_set, p_set, k):
    """The ``k`` points of each set closest to the other set, nearest first.

    Ties are broken by the original index.
    """
    a, b = _as_points(v_set), _as_points(p_set)
    if k <= 0 or k > min(len(a), len(b)):
        raise ValueError(f"k={k} must be in [1, {min(len(a), len(b))}] (set sizes {len(a)} and {len(b)})")
    da = point_set_distances(a, b)
    db = point_set_distances(b, a)
    ia = np.argsort(da, kind="stable")[:k]
    ib = np.argsort(db, kind="stable")[:k]
    return (SurfacePointSet(a[ia], getattr(v_set, "source_label", Structure.PDAC)),
            SurfacePointSet(b[ib], getattr(p_set, "source_label", Structure.PDAC)))


def min_surface_distance(a, b):
    """Smallest Euclidean distance between any two members of the sets."""
    return float(np.sqrt(point_set_distances(a, b).min()))
