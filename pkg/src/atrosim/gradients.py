"""Analytic gradient of the total loss w.r.t. the displacement field.

The chain is: per-pixel closed-form dW/dF_K, divided by the isotropic growth
scale to get dW/dF, then pushed through the transposed finite-difference
stencils (discrete integration by parts); the background and center penalties
contribute 2*lambda*u directly. Correctness is established against central
finite differences by `finite_diff_check`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .biomech import (
    EnergyParams,
    J_FLOOR,
    LossBreakdown,
    growth_scale,
    material_map,
    total_loss,
)
from .errors import InvertedElement, ShapeMismatch, SingularElastic
from .fields import (
    BACKGROUND,
    BRAIN_LABELS,
    DisplacementField,
    LabelField,
    ScalarField,
    center_of_mass,
    d_dx,
    d_dx_adjoint,
    d_dy,
    d_dy_adjoint,
)


@dataclass
class GradCheckReport:
    n_probes: int
    max_rel_error: float
    max_abs_error: float
    passed: bool


@dataclass
class LossContext:
    """Static (u-independent) data for repeated loss/gradient evaluation."""

    a: ScalarField
    labels: LabelField
    params: EnergyParams
    mu: np.ndarray
    g: np.ndarray
    background: np.ndarray
    center: tuple[int, int]

    @staticmethod
    def build(a: ScalarField, labels: LabelField,
              params: EnergyParams) -> "LossContext":
        if a.shape != labels.shape:
            raise ShapeMismatch("atrophy and labels dimensions differ")
        return LossContext(
            a=a, labels=labels, params=params,
            mu=material_map(labels, params),
            g=growth_scale(a, params),
            background=labels.labels == BACKGROUND,
            center=center_of_mass(labels, BRAIN_LABELS),
        )


def loss_and_gradient(u: DisplacementField, ctx: LossContext
                      ) -> tuple[LossBreakdown, np.ndarray, np.ndarray]:
    """Loss breakdown plus dL/dux, dL/duy in one pass."""
    params = ctx.params
    mu, g = ctx.mu, ctx.g
    material = mu > 0.0

    # F = I + grad(u); F_K = F / g
    f00 = d_dx(u.ux) + 1.0
    f01 = d_dy(u.ux)
    f10 = d_dx(u.uy)
    f11 = d_dy(u.uy) + 1.0
    k00, k01, k10, k11 = f00 / g, f01 / g, f10 / g, f11 / g

    jac = k00 * k11 - k01 * k10
    if np.any(material & (jac <= J_FLOOR)):
        raise InvertedElement("det(F_K) <= 1e-6 on a material pixel")
    jac_safe = np.where(material, jac, 1.0)
    trace = k00 ** 2 + k01 ** 2 + k10 ** 2 + k11 ** 2
    kappa = params.bulk_ratio * mu
    j_pow = jac_safe ** (-params.alpha)

    w = 0.5 * mu * (trace * j_pow - params.beta) + 0.5 * kappa * (jac_safe - 1.0) ** 2
    energy = float(np.sum(np.where(material, w, 0.0)))

    # dW/dF_K = mu J^-a F_K + [-a (mu/2) tr J^-a + K (J-1) J] F_K^-T,
    # with J F_K^-T = cofactor(F_K).
    lead = np.where(material, mu * j_pow, 0.0)
    coef = np.where(
        material,
        (-params.alpha * 0.5 * mu * trace * j_pow + kappa * (jac_safe - 1.0) * jac_safe)
        / jac_safe,
        0.0,
    )
    if not np.all(np.isfinite(coef)):
        raise SingularElastic("F_K numerically singular on a material pixel")
    # dL/dF = dW/dF_K / g
    p00 = (lead * k00 + coef * k11) / g
    p01 = (lead * k01 - coef * k10) / g
    p10 = (lead * k10 - coef * k01) / g
    p11 = (lead * k11 + coef * k00) / g

    gux = d_dx_adjoint(p00) + d_dy_adjoint(p01)
    guy = d_dx_adjoint(p10) + d_dy_adjoint(p11)

    bg = ctx.background
    bg_pen = float(np.sum(u.ux[bg] ** 2) + np.sum(u.uy[bg] ** 2))
    gux[bg] += 2.0 * params.lambda1 * u.ux[bg]
    guy[bg] += 2.0 * params.lambda1 * u.uy[bg]

    cx, cy = ctx.center
    c_pen = float(u.ux[cy, cx] ** 2 + u.uy[cy, cx] ** 2)
    gux[cy, cx] += 2.0 * params.lambda2 * u.ux[cy, cx]
    guy[cy, cx] += 2.0 * params.lambda2 * u.uy[cy, cx]

    total = energy + params.lambda1 * bg_pen + params.lambda2 * c_pen
    breakdown = LossBreakdown(total=total, energy=energy,
                              background_penalty=bg_pen, center_penalty=c_pen)
    return breakdown, gux, guy


def loss_gradient(u: DisplacementField, a: ScalarField, labels: LabelField,
                  params: EnergyParams) -> DisplacementField:
    """dL/du for the total objective, one value per pixel and component."""
    ctx = LossContext.build(a, labels, params)
    _, gux, guy = loss_and_gradient(u, ctx)
    return DisplacementField(gux, guy)


def finite_diff_check(u: DisplacementField, a: ScalarField, labels: LabelField,
                      params: EnergyParams, n_probes: int, step: float,
                      tolerance: float, seed: int) -> GradCheckReport:
    """Compare the analytic gradient to central differences at random probes.

    Relative error uses denominator max(1, |numeric|) so near-zero entries are
    judged on absolute error.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    ctx = LossContext.build(a, labels, params)
    _, gux, guy = loss_and_gradient(u, ctx)
    analytic = (gux, guy)
    planes = (u.ux, u.uy)

    rng = np.random.default_rng(seed)
    h, w = u.shape
    max_rel = 0.0
    max_abs = 0.0
    for _ in range(n_probes):
        comp = int(rng.integers(0, 2))
        y = int(rng.integers(0, h))
        x = int(rng.integers(0, w))
        orig = planes[comp][y, x]

        planes[comp][y, x] = orig + step
        lo_hi = total_loss(u, a, labels, params).total
        planes[comp][y, x] = orig - step
        lo_lo = total_loss(u, a, labels, params).total
        planes[comp][y, x] = orig

        numeric = (lo_hi - lo_lo) / (2.0 * step)
        err = abs(analytic[comp][y, x] - numeric)
        max_abs = max(max_abs, err)
        max_rel = max(max_rel, err / max(1.0, abs(numeric)))
    return GradCheckReport(n_probes=n_probes, max_rel_error=max_rel,
                           max_abs_error=max_abs, passed=max_rel < tolerance)
