"""Direct variational solver: Adam on the displacement field itself.

This is the per-image reference path; the trained network amortizes exactly
this objective, so the solver doubles as the oracle it is judged against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .biomech import CONVENTION_JACOBIAN, EnergyParams, LossBreakdown
from .errors import EmptyMask, InvertedElement, NonPositiveAtrophy
from .fields import (
    BACKGROUND,
    CSF,
    DisplacementField,
    LabelField,
    ScalarField,
)
from .gradients import LossContext, loss_and_gradient
from .metrics import mse_atrophy

TERM_MAX_ITERS = "max_iters"
TERM_GRAD_NORM = "grad_norm"
TERM_BACKOFF = "inversion_backoff_exhausted"

MAX_BACKOFFS = 10


@dataclass
class SolveOptions:
    max_iters: int = 2000
    learning_rate: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    stop_grad_norm: float = 1e-6
    brain_only: bool = False
    convention: str = CONVENTION_JACOBIAN

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class SolveReport:
    iterations_run: int
    final_loss: LossBreakdown
    loss_history: list[float] = field(default_factory=list)
    mse_atrophy: float = 0.0
    terminated_by: str = TERM_MAX_ITERS


def solve_displacement(a: ScalarField, labels: LabelField, params: EnergyParams,
                       opts: SolveOptions, seed: int = 0
                       ) -> tuple[DisplacementField, SolveReport]:
    """Optimize u from rest with Adam; returns the best-loss iterate.

    With brain_only the atrophy map is overwritten with 1.0 on CSF and
    background before solving, but the realization error is still reported
    against the original prescription.
    """
    if np.any(a.values <= 0.0):
        raise NonPositiveAtrophy("atrophy map must be strictly positive")
    if not labels.brain_mask().any():
        raise EmptyMask("labels contain no brain pixels")
    params = EnergyParams(alpha=params.alpha, beta=params.beta,
                          bulk_ratio=params.bulk_ratio,
                          mu_tissue=params.mu_tissue, mu_csf=params.mu_csf,
                          lambda1=params.lambda1, lambda2=params.lambda2,
                          d=params.d, convention=opts.convention)

    a_solve = a
    if opts.brain_only:
        vals = a.values.copy()
        vals[np.isin(labels.labels, (BACKGROUND, CSF))] = 1.0
        a_solve = ScalarField(vals)

    ctx = LossContext.build(a_solve, labels, params)
    h, w = a.shape
    ux = np.zeros((h, w))
    uy = np.zeros((h, w))
    m_ux = np.zeros_like(ux)
    m_uy = np.zeros_like(uy)
    v_ux = np.zeros_like(ux)
    v_uy = np.zeros_like(uy)

    lr = opts.learning_rate
    b1, b2, eps = opts.adam_beta1, opts.adam_beta2, opts.adam_epsilon

    loss, gux, guy = loss_and_gradient(DisplacementField(ux, uy), ctx)
    history = [loss.total]
    best_loss = loss
    best_ux, best_uy = ux.copy(), uy.copy()
    terminated = TERM_MAX_ITERS
    iterations = 0
    backoffs = 0

    for it in range(1, opts.max_iters + 1):
        gnorm = max(np.abs(gux).max(), np.abs(guy).max())
        if gnorm <= opts.stop_grad_norm:
            terminated = TERM_GRAD_NORM
            break

        m_ux = b1 * m_ux + (1 - b1) * gux
        m_uy = b1 * m_uy + (1 - b1) * guy
        v_ux = b2 * v_ux + (1 - b2) * gux ** 2
        v_uy = b2 * v_uy + (1 - b2) * guy ** 2
        mh_ux = m_ux / (1 - b1 ** it)
        mh_uy = m_uy / (1 - b1 ** it)
        vh_ux = v_ux / (1 - b2 ** it)
        vh_uy = v_uy / (1 - b2 ** it)
        step_x = lr * mh_ux / (np.sqrt(vh_ux) + eps)
        step_y = lr * mh_uy / (np.sqrt(vh_uy) + eps)

        try:
            trial = DisplacementField(ux - step_x, uy - step_y)
            loss, gux, guy = loss_and_gradient(trial, ctx)
        except InvertedElement:
            backoffs += 1
            if backoffs > MAX_BACKOFFS:
                terminated = TERM_BACKOFF
                break
            lr *= 0.5
            # rejected step: rewind the moment updates too
            m_ux = (m_ux - (1 - b1) * gux) / b1
            m_uy = (m_uy - (1 - b1) * guy) / b1
            v_ux = (v_ux - (1 - b2) * gux ** 2) / b2
            v_uy = (v_uy - (1 - b2) * guy ** 2) / b2
            continue

        ux, uy = trial.ux, trial.uy
        iterations = it
        history.append(loss.total)
        if loss.total < best_loss.total:
            best_loss = loss
            best_ux, best_uy = ux.copy(), uy.copy()

    u_best = DisplacementField(best_ux, best_uy)
    report = SolveReport(
        iterations_run=iterations,
        final_loss=best_loss,
        loss_history=history,
        mse_atrophy=mse_atrophy(a, u_best, labels, masked=True),
        terminated_by=terminated,
    )
    return u_best, report
