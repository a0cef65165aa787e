"""Seeded synthetic cohorts with geometry- and texture-dependent exponential survival."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from ..geometry import VESSELS, VoxelMask
from ..survival.records import SurvivalRecord, read_cohort_csv, write_cohort_csv
from .phantom import Ellipsoid, PhantomSpec, SubjectSample, Tube, gen_phantom
from .volio import read_volume, write_volume

# offset axis and sign from the tumor center, and the axis the vessel is bent along
VESSEL_LAYOUT = {
    "PVSV": (0, +1, 1),
    "SMV": (0, -1, 1),
    "SMA": (1, +1, 0),
    "TC": (1, -1, 0),
}
ARTERY_INTENSITY = (0.4, 1.8, 1.2)
VEIN_INTENSITY = (0.4, 1.1, 1.6)
MANIFEST_FIELDS = ["subject_id", "seed", "gap_pvsv", "gap_smv", "gap_sma", "gap_tc",
                   "tumor_volume", "contrast", "linear_predictor"]


@dataclass
class HazardModel:
    """Exponential survival with rate ``baseline * exp(lp)``.

    The linear predictor combines standardized latent generators: closeness of
    the tumor to the vessels (mean analytic gap, negated), tumor volume and the
    pancreatic-phase tumor hypo-attenuation. Rates are per month.
    """

    w_dist: float = 1.5
    w_size: float = 0.6
    w_texture: float = 0.5
    baseline: float = 0.03
    censoring: float = 0.01
    gap_mean: float = 2.0
    gap_sd: float = 0.577
    size_mean: float = 550.0
    size_sd: float = 100.0
    contrast_mean: float = 0.45
    contrast_sd: float = 0.144

    def __post_init__(self):
        if self.baseline <= 0 or self.censoring < 0:
            raise ValueError("baseline rate must be positive and censoring rate non-negative")

    def linear_predictor(self, mean_gap, volume, contrast):
        return (self.w_dist * -(mean_gap - self.gap_mean) / self.gap_sd
                + self.w_size * (volume - self.size_mean) / self.size_sd
                + self.w_texture * (contrast - self.contrast_mean) / self.contrast_sd)


@dataclass
class CohortSampler:
    shape: tuple = (32, 32, 32)
    gap_range: tuple = (0.0, 4.0)
    radius_range: tuple = (1.0, 2.0)
    center_jitter: int = 1
    semi_axis_choices: tuple = (4.5, 5.5)  # half-integers keep rasterized gaps within a voxel
    depth_semi_axis_range: tuple = (4.0, 6.5)
    tumor_pancreatic_range: tuple = (0.3, 0.8)
    background: tuple = (0.4, 1.0, 0.8)
    noise_sigma: float = 0.1
    bend: float = 2.0

    def sample(self, rng, seed):
        shape = np.asarray(self.shape)
        center = shape // 2 + rng.integers(-self.center_jitter, self.center_jitter + 1, 3)
        axes = (float(rng.choice(self.semi_axis_choices)), float(rng.choice(self.semi_axis_choices)),
                float(rng.uniform(*self.depth_semi_axis_range)))
        tp = float(rng.uniform(*self.tumor_pancreatic_range))
        tumor = Ellipsoid(tuple(float(c) for c in center), axes, (0.35, tp, 0.6))
        vessels, gaps = {}, {}
        for v in VESSELS:
            axis, sign, bend_axis = VESSEL_LAYOUT[v]
            gap = float(rng.uniform(*self.gap_range))
            radius = float(rng.uniform(*self.radius_range))
            offset = center[axis] + sign * (axes[axis] + gap + radius)
            zc = center[2]
            z = [2.0, zc - 3.0, zc + 3.0, shape[2] - 3.0]
            bends = rng.uniform(-self.bend, self.bend, 2)
            line = np.zeros((4, 3))
            line[:, axis] = offset
            line[:, bend_axis] = center[bend_axis] + np.array([bends[0], 0.0, 0.0, bends[1]])
            line[:, 2] = z
            intensity = ARTERY_INTENSITY if v in ("SMA", "TC") else VEIN_INTENSITY
            vessels[v] = Tube(line, radius, intensity)
            gaps[v] = gap
        spec = PhantomSpec(tuple(int(s) for s in shape), (1.0, 1.0, 1.0), tumor, vessels,
                           self.background, self.noise_sigma, seed)
        return spec, gaps


@dataclass
class Cohort:
    samples: list
    manifest: list = field(default_factory=list)  # dict rows, MANIFEST_FIELDS

    @property
    def records(self):
        return [s.survival for s in self.samples]


def subject_seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def gen_cohort(n, sampler=None, hazard=None, seed=0):
    if n < 2:
        raise ValueError(f"cohort size must be at least 2, got {n}")
    sampler = sampler or CohortSampler()
    hazard = hazard or HazardModel()
    seeds = subject_seeds(seed, n)
    surv_rng = np.random.default_rng([seed, 1])
    samples, manifest = [], []
    for i, s in enumerate(seeds):
        rng = np.random.default_rng(s)
        spec, gaps = sampler.sample(rng, s)
        sid = f"S{i:04d}"
        sample = gen_phantom(spec, sid)
        volume = spec.tumor.volume
        contrast = spec.background[1] - spec.tumor.intensity[1]
        lp = hazard.linear_predictor(np.mean(list(gaps.values())), volume, contrast)
        t_event = surv_rng.exponential(1.0 / (hazard.baseline * np.exp(lp)))
        t_cens = surv_rng.exponential(1.0 / hazard.censoring) if hazard.censoring > 0 else np.inf
        age = float(np.round(rng.uniform(45, 80)))
        sex = float(rng.integers(0, 2))
        size_mm = 2.0 * max(spec.tumor.semi_axes)
        sample.survival = SurvivalRecord(
            float(min(t_event, t_cens)), bool(t_event <= t_cens),
            {"age": age, "sex": sex, "tumor_size_mm": size_mm}, sid)
        sample.info = {"gaps": gaps, "tumor_volume": volume, "contrast": contrast, "linear_predictor": lp,
                       "seed": s}
        samples.append(sample)
        manifest.append({"subject_id": sid, "seed": s, **{f"gap_{v.lower()}": gaps[v] for v in VESSELS},
                         "tumor_volume": volume, "contrast": contrast, "linear_predictor": lp})
    return Cohort(samples, manifest)


def write_cohort(cohort, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for s in cohort.samples:
        d = os.path.join(out_dir, s.subject_id)
        os.makedirs(d, exist_ok=True)
        for ph in range(3):
            write_volume(os.path.join(d, f"phase{ph}.pvl"), s.phases[ph], s.spacing)
        write_volume(os.path.join(d, "mask_pdac.pvl"), s.pdac_mask.labels, s.spacing, mask=True)
        for v in VESSELS:
            write_volume(os.path.join(d, f"mask_{v.lower()}.pvl"), s.vessel_masks[v].labels, s.spacing, mask=True)
    with open(os.path.join(out_dir, "manifest.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, MANIFEST_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in cohort.manifest:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    write_cohort_csv(os.path.join(out_dir, "survival.csv"), cohort.records)


def read_manifest(cohort_dir):
    with open(os.path.join(cohort_dir, "manifest.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in MANIFEST_FIELDS[1:]:
            r[k] = int(r[k]) if k == "seed" else float(r[k])
    return rows


def load_subject(cohort_dir, subject_id):
    d = os.path.join(cohort_dir, subject_id)
    phases = []
    for ph in range(3):
        arr, spacing, _ = read_volume(os.path.join(d, f"phase{ph}.pvl"))
        phases.append(arr)
    pdac, spacing, _ = read_volume(os.path.join(d, "mask_pdac.pvl"))
    vessels = {}
    for v in VESSELS:
        path = os.path.join(d, f"mask_{v.lower()}.pvl")
        if not os.path.exists(path):
            raise FileNotFoundError(f"{subject_id}: missing {os.path.basename(path)}")
        vessels[v] = VoxelMask(read_volume(path)[0], spacing)
    return SubjectSample(subject_id, np.stack(phases), VoxelMask(pdac, spacing), vessels)


def load_cohort(cohort_dir):
    records = read_cohort_csv(os.path.join(cohort_dir, "survival.csv"))
    manifest = {r["subject_id"]: r for r in read_manifest(cohort_dir)} \
        if os.path.exists(os.path.join(cohort_dir, "manifest.csv")) else {}
    samples = []
    for rec in records:
        s = load_subject(cohort_dir, rec.subject_id)
        s.survival = rec
        if rec.subject_id in manifest:
            m = manifest[rec.subject_id]
            s.info = {"linear_predictor": m["linear_predictor"], "seed": m["seed"],
                      "gaps": {v: m[f"gap_{v.lower()}"] for v in VESSELS}}
        samples.append(s)
    return Cohort(samples, list(manifest.values()))

