"""Evaluation protocol: atrophy realization error, image MSE, per-tissue Dice."""

from __future__ import annotations

import numpy as np

from .errors import EmptyMask, ShapeMismatch
from .fields import (
    DisplacementField,
    LabelField,
    ScalarField,
    deformation_gradient,
    jacobian_det,
)


def mse_atrophy(a: ScalarField, u: DisplacementField, mask: LabelField,
                masked: bool = True) -> float:
    """Mean squared error between the prescribed map and det(F).

    masked=True averages over brain (GM/WM/DGM) pixels only.
    """
    if not (a.shape == u.shape == mask.shape):
        raise ShapeMismatch("field dimensions differ")
    det = jacobian_det(deformation_gradient(u)).values
    sq = (a.values - det) ** 2
    if masked:
        brain = mask.brain_mask()
        if not brain.any():
            raise EmptyMask("no brain pixels to average over")
        return float(sq[brain].mean())
    return float(sq.mean())


def mse_image(x: ScalarField, y: ScalarField) -> float:
    if x.shape != y.shape:
        raise ShapeMismatch("image dimensions differ")
    return float(((x.values - y.values) ** 2).mean())


def dice(x: LabelField, y: LabelField, cls: int) -> float:
    """2|X∩Y| / (|X|+|Y|) for one tissue class; 1.0 when both sets are empty."""
    if x.shape != y.shape:
        raise ShapeMismatch("label dimensions differ")
    xm = x.labels == cls
    ym = y.labels == cls
    denom = int(xm.sum()) + int(ym.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((xm & ym).sum()) / denom
