"""Activity-coupled Cartesian DOA targets and the three training objectives.

An ACCDOA grid has shape ``(3, C, T)`` (optionally with leading batch axes): for
class ``c`` at frame ``t`` the vector is ``activity * unit_doa``, so its length
carries detection and its direction carries localisation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

DEFAULT_THRESHOLD = 0.5
BCE_EPS = 1e-7
_NORM_TOL = 1e-9


class LabelError(ValueError):
    pass


@dataclass
class EventLabelTrack:
    """Frame-wise references: ``activity`` (C, T) in {0, 1}, ``doa`` (3, C, T).

    ``doa`` is unit norm where active and zero where inactive.
    """

    activity: NDArray
    doa: NDArray

    def validate(self) -> "EventLabelTrack":
        act = np.asarray(self.activity)
        doa = np.asarray(self.doa)
        if doa.shape[-3] != 3 or doa.shape[:-3] + doa.shape[-2:] != act.shape:
            raise LabelError(f"doa shape {doa.shape} incompatible with activity {act.shape}")
        if not np.all((act == 0) | (act == 1)):
            raise LabelError("activity must be binary")
        norms = np.linalg.norm(doa, axis=-3)
        active = act == 1
        if np.any(np.abs(norms[active] - 1.0) > _NORM_TOL):
            raise LabelError("active DOAs must be unit norm")
        if np.any(norms[~active] != 0.0):
            raise LabelError("inactive DOAs must be zero")
        return self

    @property
    def num_classes(self) -> int:
        return self.activity.shape[-2]

    @property
    def num_frames(self) -> int:
        return self.activity.shape[-1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventLabelTrack):
            return NotImplemented
        return np.array_equal(self.activity, other.activity) and np.array_equal(self.doa, other.doa)


@dataclass
class TwoBranchOutput:
    """SELDnet-style head output: ``sed`` (C, T) probabilities and ``doa`` (3, C, T)."""

    sed: NDArray
    doa: NDArray


def empty_track(num_classes: int, num_frames: int) -> EventLabelTrack:
    return EventLabelTrack(
        np.zeros((num_classes, num_frames), dtype=np.int8),
        np.zeros((3, num_classes, num_frames)),
    )


def encode(labels: EventLabelTrack) -> NDArray[np.float64]:
    labels.validate()
    return np.asarray(labels.activity, dtype=np.float64)[..., None, :, :] * labels.doa


def decode(grid: NDArray, threshold: float = DEFAULT_THRESHOLD) -> EventLabelTrack:
    """Threshold vector lengths to recover activity; normalise active vectors."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    grid = np.asarray(grid, dtype=np.float64)
    norm = np.linalg.norm(grid, axis=-3)
    active = norm > threshold
    safe = np.where(active, norm, 1.0)
    doa = np.where(active[..., None, :, :], grid / safe[..., None, :, :], 0.0)
    # vectors already unit length to rounding are passed through untouched
    exact = np.abs(norm - 1.0) <= 1e-12
    doa = np.where((active & exact)[..., None, :, :], grid, doa)
    return EventLabelTrack(active.astype(np.int8), doa)


def accdoa_loss(estimate: NDArray, reference: NDArray) -> tuple[float, NDArray]:
    """Mean squared error over every element of the grid, with its gradient.

    Inactive references are zero vectors, so those cells only pull the estimate's
    length toward zero and never rotate it.
    """
    estimate = np.asarray(estimate)
    reference = np.asarray(reference)
    if estimate.shape != reference.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {reference.shape}")
    diff = estimate - reference
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def _bce(sed: NDArray, activity: NDArray) -> tuple[float, NDArray]:
    p = np.clip(sed, BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(activity, dtype=p.dtype)
    n = p.size
    loss = -np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)) / n
    grad = (-y / p + (1.0 - y) / (1.0 - p)) / n
    # clamped probabilities receive no gradient
    grad = np.where((sed < BCE_EPS) | (sed > 1.0 - BCE_EPS), 0.0, grad)
    return float(loss), grad


def masked_mse(doa: NDArray, labels: EventLabelTrack) -> tuple[float, NDArray]:
    """Squared DOA error averaged over coordinates of active cells only."""
    mask = np.asarray(labels.activity, dtype=doa.dtype)[..., None, :, :]
    count = 3.0 * float(np.sum(labels.activity))
    if count == 0:
        return 0.0, np.zeros_like(doa)
    diff = (doa - labels.doa) * mask
    return float(np.sum(diff * diff) / count), 2.0 * diff / count


def seldnet_loss(
    out: TwoBranchOutput, labels: EventLabelTrack, weight: float = 10.0
) -> tuple[float, TwoBranchOutput]:
    """BCE on the detection branch plus ``weight`` times masked MSE on the DOA branch.

    Returns the loss and its gradients with respect to ``out.sed`` (probabilities,
    not logits) and ``out.doa``.
    """
    if weight <= 0:
        raise ValueError("loss weight must be positive")
    bce, g_sed = _bce(out.sed, labels.activity)
    mse, g_doa = masked_mse(out.doa, labels)
    return bce + weight * mse, TwoBranchOutput(g_sed, weight * g_doa)


def two_stage_loss(
    out: TwoBranchOutput, labels: EventLabelTrack, stage: int
) -> tuple[float, TwoBranchOutput]:
    """Stage 1 trains detection only (BCE); stage 2 trains DOA only (masked MSE)."""
    if stage == 1:
        loss, g_sed = _bce(out.sed, labels.activity)
        return loss, TwoBranchOutput(g_sed, np.zeros_like(out.doa))
    if stage == 2:
        loss, g_doa = masked_mse(out.doa, labels)
        return loss, TwoBranchOutput(np.zeros_like(out.sed), g_doa)
    raise ValueError(f"stage must be 1 or 2, got {stage}")


def head_param_count(embedding_dim: int, num_classes: int, variant: str) -> int:
    """Parameters in the output head on top of a ``embedding_dim`` embedding.

    ``accdoa`` is a single affine map to ``3C`` outputs. ``two_branch`` has two
    branches of two affine layers each: ``K -> K -> C`` and ``K -> K -> 3C``.
    """
    k, c = embedding_dim, num_classes
    if k < 1 or c < 1:
        raise ValueError("dimensions must be positive")
    if variant == "accdoa":
        return (k + 1) * 3 * c
    if variant == "two_branch":
        hidden = k * k + k
        return 2 * hidden + (k * c + c) + (k * 3 * c + 3 * c)
    raise ValueError(f"unknown head variant {variant!r}")
