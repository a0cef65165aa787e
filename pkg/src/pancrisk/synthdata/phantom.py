"""Multi-phase CT phantoms: an ellipsoidal tumor and four tubular vessels in a noisy background."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import VESSELS, VoxelMask

PHASES = ("non_contrast", "pancreatic", "venous")


class PhantomSpecError(ValueError):
    pass


@dataclass
class Ellipsoid:
    center: tuple
    semi_axes: tuple
    intensity: tuple  # one value per phase

    @property
    def volume(self):
        a, b, c = self.semi_axes
        return 4.0 / 3.0 * np.pi * a * b * c


@dataclass
class Tube:
    centerline: np.ndarray  # (4, 3) polyline vertices -> 3 segments
    radius: float
    intensity: tuple


@dataclass
class PhantomSpec:
    shape: tuple = (32, 32, 32)
    spacing: tuple = (1.0, 1.0, 1.0)
    tumor: Ellipsoid = None
    vessels: dict = field(default_factory=dict)  # name -> Tube, names from VESSELS
    background: tuple = (0.4, 1.0, 0.8)
    noise_sigma: float = 0.1
    seed: int = 0


@dataclass
class SubjectSample:
    subject_id: str
    phases: np.ndarray  # (3, H, W, D) float32
    pdac_mask: VoxelMask
    vessel_masks: dict  # vessel name -> VoxelMask, ordered as VESSELS
    survival: object = None  # SurvivalRecord
    info: dict = field(default_factory=dict)

    @property
    def spacing(self):
        return self.pdac_mask.spacing


def voxel_centers(shape, spacing):
    grids = np.meshgrid(*[np.arange(n) * s for n, s in zip(shape, spacing)], indexing="ij")
    return np.stack(grids, axis=-1)


def _segment_distance(pts, a, b):
    ab = b - a
    t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(pts - closest, axis=-1)


def _check_bounds(lo, hi, shape, spacing, what):
    upper = (np.asarray(shape) - 1) * np.asarray(spacing)
    if np.any(np.asarray(lo) < 0) or np.any(np.asarray(hi) > upper):
        raise PhantomSpecError(f"{what} extends outside the grid [0, {upper.tolist()}]")


def rasterize_tumor(spec):
    t = spec.tumor
    c, ax = np.asarray(t.center, float), np.asarray(t.semi_axes, float)
    if np.any(ax <= 0):
        raise PhantomSpecError("tumor semi-axes must be positive")
    _check_bounds(c - ax, c + ax, spec.shape, spec.spacing, "tumor")
    pts = voxel_centers(spec.shape, spec.spacing)
    return (((pts - c) / ax) ** 2).sum(axis=-1) <= 1.0


def rasterize_tube(spec, tube, name="vessel"):
    line = np.asarray(tube.centerline, float)
    if tube.radius <= 0:
        raise PhantomSpecError(f"{name} radius must be positive")
    _check_bounds(line.min(axis=0) - tube.radius, line.max(axis=0) + tube.radius,
                  spec.shape, spec.spacing, name)
    pts = voxel_centers(spec.shape, spec.spacing)
    dist = np.min([_segment_distance(pts, a, b) for a, b in zip(line[:-1], line[1:])], axis=0)
    return dist <= tube.radius


def gen_phantom(spec, subject_id="s0000"):
    """Rasterize masks and fill the three phase volumes (tumor drawn over vessels)."""
    if spec.tumor is None or set(spec.vessels) != set(VESSELS):
        raise PhantomSpecError(f"phantom needs a tumor and vessels {VESSELS}")
    tumor = rasterize_tumor(spec)
    tubes = {v: rasterize_tube(spec, spec.vessels[v], v) for v in VESSELS}
    vols = np.empty((3,) + tuple(spec.shape), dtype=np.float32)
    for ph in range(3):
        vol = np.full(spec.shape, spec.background[ph], dtype=np.float64)
        for v in VESSELS:
            vol[tubes[v]] = spec.vessels[v].intensity[ph]
        vol[tumor] = spec.tumor.intensity[ph]
        vols[ph] = vol
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        vols += rng.normal(0.0, spec.noise_sigma, size=vols.shape).astype(np.float32)
    return SubjectSample(
        subject_id=subject_id,
        phases=vols,
        pdac_mask=VoxelMask(tumor.astype(np.uint8), spec.spacing),
        vessel_masks={v: VoxelMask(tubes[v].astype(np.uint8), spec.spacing) for v in VESSELS},
    )
