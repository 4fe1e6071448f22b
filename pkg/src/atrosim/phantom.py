"""Synthetic brain-like phantoms: label maps, intensity images, atrophy maps.

All randomness flows from explicit seeds through numpy's PCG64 generator, so
outputs are bit-reproducible across runs and platforms. Smoothing uses box
blurs (windows truncated at the grid edge) to stay free of transcendental
platform drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec
from .fields import BACKGROUND, CSF, DGM, GM, WM, LabelField, ScalarField


def box_blur(v: np.ndarray, radius: int, passes: int = 1) -> np.ndarray:
    """Separable box blur; edge windows are truncated to in-bounds pixels,
    so output values stay inside the input's range."""
    out = np.asarray(v, dtype=np.float64)
    for _ in range(passes):
        out = _box_blur_axis(out, radius, axis=0)
        out = _box_blur_axis(out, radius, axis=1)
    return out


def _box_blur_axis(v: np.ndarray, radius: int, axis: int) -> np.ndarray:
    v = np.moveaxis(v, axis, 0)
    n = v.shape[0]
    cs = np.concatenate([np.zeros((1,) + v.shape[1:]), np.cumsum(v, axis=0)])
    idx = np.arange(n)
    lo = np.maximum(idx - radius, 0)
    hi = np.minimum(idx + radius, n - 1)
    sums = cs[hi + 1] - cs[lo]
    counts = (hi - lo + 1).astype(np.float64).reshape((-1,) + (1,) * (v.ndim - 1))
    return np.moveaxis(sums / counts, 0, axis)


@dataclass
class PhantomSpec:
    size: int = 64
    seed: int = 0
    outer_radius_frac: float = 0.45
    csf_thickness_frac: float = 0.06
    gm_thickness_frac: float = 0.10
    dgm_radius_frac: float = 0.08
    boundary_wobble_amp: float = 0.03
    wobble_frequency: int = 5

    def __post_init__(self):
        fracs = (self.outer_radius_frac, self.csf_thickness_frac,
                 self.gm_thickness_frac, self.dgm_radius_frac)
        if not all(0.0 < f < 0.5 for f in fracs):
            raise InvalidSpec("all phantom fractions must lie in (0, 0.5)")
        radii = self._radii_fracs()
        if not all(a > b for a, b in zip(radii, radii[1:])):
            raise InvalidSpec("nested radii must be strictly decreasing")
        if self.size < 16:
            raise InvalidSpec("phantom size must be >= 16")

    def _radii_fracs(self) -> tuple[float, float, float, float]:
        outer = self.outer_radius_frac
        csf_in = outer - self.csf_thickness_frac
        gm_in = csf_in - self.gm_thickness_frac
        return outer, csf_in, gm_in, self.dgm_radius_frac


_INTENSITY = {BACKGROUND: 0.0, CSF: 0.1, GM: 0.5, WM: 0.8, DGM: 0.6}


def make_phantom(spec: PhantomSpec) -> tuple[LabelField, ScalarField]:
    """Wobbled concentric annuli (background/CSF/GM/WM with a central DGM disk)
    plus a matching intensity image with smooth seeded noise."""
    rng = np.random.default_rng(np.random.PCG64(spec.seed))
    n = spec.size
    c = (n - 1) / 2.0
    ys, xs = np.mgrid[0:n, 0:n]
    dx = xs - c
    dy = ys - c
    r = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)

    labels = np.full((n, n), BACKGROUND, dtype=np.uint8)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=4)
    for frac, phase, cls in zip(spec._radii_fracs(), phases, (CSF, GM, WM, DGM)):
        wobble = 1.0 + spec.boundary_wobble_amp * np.sin(
            spec.wobble_frequency * theta + phase)
        labels[r <= frac * n * wobble] = cls

    intensity = np.zeros((n, n))
    for cls, base in _INTENSITY.items():
        intensity[labels == cls] = base
    noise = box_blur(rng.uniform(-1.0, 1.0, size=(n, n)), radius=3, passes=2)
    peak = np.abs(noise).max()
    if peak > 0:
        noise *= 0.05 / peak
    intensity = np.clip(intensity + noise, 0.0, 1.0)
    return LabelField(labels), ScalarField(intensity)


@dataclass
class AtrophySpec:
    seed: int = 0
    min_a: float = 0.85
    max_a: float = 1.05
    smoothing_radius: int = 4
    smoothing_passes: int = 3
    restrict_to_brain: bool = True

    def __post_init__(self):
        if not (0.0 < self.min_a <= self.max_a):
            raise InvalidSpec("need 0 < min_a <= max_a")
        if self.smoothing_radius < 0 or self.smoothing_passes < 0:
            raise InvalidSpec("smoothing parameters must be non-negative")


def make_atrophy(spec: AtrophySpec, labels: LabelField) -> ScalarField:
    """Smooth random atrophy map in [min_a, max_a]; exactly 1 outside the brain
    when restrict_to_brain is set."""
    rng = np.random.default_rng(np.random.PCG64(spec.seed))
    a = rng.uniform(spec.min_a, spec.max_a, size=labels.shape)
    a = box_blur(a, spec.smoothing_radius, spec.smoothing_passes)
    if spec.restrict_to_brain:
        a = np.where(labels.brain_mask(), a, 1.0)
    return ScalarField(a)


def make_compensated_atrophy(spec: AtrophySpec, labels: LabelField,
                             csf_amp: float = 0.08) -> ScalarField:
    """Brain atrophy plus a compensating CSF expansion pattern.

    The CSF values carry smooth noise of amplitude csf_amp shifted so the net
    prescribed area change over brain plus CSF is zero, the way maps measured
    from longitudinal registration balance tissue loss against ventricle and
    sulcal expansion. The result is realizable with a fixed skull, unlike a
    map that shrinks the brain without giving the CSF room to take up the
    slack."""
    rng = np.random.default_rng(np.random.PCG64(spec.seed))
    base = rng.uniform(spec.min_a, spec.max_a, size=labels.shape)
    base = box_blur(base, spec.smoothing_radius, spec.smoothing_passes)
    csf_noise = box_blur(rng.uniform(-1.0, 1.0, size=labels.shape),
                         spec.smoothing_radius, spec.smoothing_passes)
    brain = labels.brain_mask()
    csf = labels.labels == CSF
    if not brain.any() or not csf.any():
        raise InvalidSpec("labels must contain brain and CSF pixels")
    vals = np.where(brain, base, 1.0)
    deficit = float(np.sum(vals[brain] - 1.0))
    pattern = csf_amp * csf_noise[csf]
    pattern += (-deficit - pattern.sum()) / csf.sum()
    vals[csf] = 1.0 + pattern
    if np.any(vals <= 0.0):
        raise InvalidSpec("compensated map left non-positive values")
    return ScalarField(vals)
