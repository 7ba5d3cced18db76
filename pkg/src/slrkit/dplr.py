"""Dense pseudo-label refinement.

Turns a sparse greedy decode into frame-level training targets: when the
predicted gloss count matches the ground truth, wrong glosses are swapped
for the true ones before every blank frame is filled with its nearest
gloss; when the counts differ by one, the decode is densified as-is; a
larger gap skips the sample entirely.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .ctc import collapse
from .errors import CannotDensifyError, ContractViolationError, ShapeError

__all__ = [
    "DplrCase",
    "LossBundle",
    "classify_case",
    "swap_wrong_glosses",
    "densify",
    "generate_dpl",
    "pseudo_label_targets",
    "refine_loss",
    "total_loss",
]


class DplrCase(Enum):
    CASE1 = "Case1"
    CASE2 = "Case2"
    SKIP = "Skip"


@dataclass
class LossBundle:
    """The four objective components and their weights."""

    l_inter: float
    l_intra: float
    l_refine: float
    l_bta: float
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0


def total_loss(bundle: LossBundle) -> float:
    """Weighted sum of the four components (refine term is 0 when no DPL exists)."""
    return (
        bundle.l_inter
        + bundle.lambda1 * bundle.l_intra
        + bundle.lambda2 * bundle.l_refine
        + bundle.lambda3 * bundle.l_bta
    )


def classify_case(pred: Sequence[int], gt: Sequence[int]) -> DplrCase:
    """Equal lengths -> Case1; off by one -> Case2; otherwise skip the sample."""
    gap = abs(len(pred) - len(gt))
    if gap == 0:
        return DplrCase.CASE1
    if gap == 1:
        return DplrCase.CASE2
    return DplrCase.SKIP


def swap_wrong_glosses(
    framewise, pred: Sequence[int], gt: Sequence[int], blank: int
) -> np.ndarray:
    """Relabel each wrong non-blank run with the ground-truth gloss.

    Runs are the unit of greedy CTC prediction, so the k-th run is replaced
    wholesale whenever ``pred[k] != gt[k]``; blanks are untouched.
    """
    if len(pred) != len(gt):
        raise ContractViolationError(
            f"swap requires equal lengths, got {len(pred)} vs {len(gt)}"
        )
    labels = np.asarray(framewise, dtype=np.int64).copy()
    if collapse(labels, blank) != list(pred):
        raise ContractViolationError("framewise labels do not collapse to pred")
    run = -1
    prev = None
    for t in range(labels.size):
        lab = int(labels[t])
        if lab != blank and lab != prev:
            run += 1
        prev = lab
        if lab != blank and pred[run] != gt[run]:
            labels[t] = gt[run]
    return labels


def densify(framewise, blank: int) -> np.ndarray:
    """Fill every blank frame with the nearest non-blank label.

    Equidistant blanks take the earlier (left) gloss. Raises
    :class:`CannotDensifyError` on an all-blank input.
    """
    labels = np.asarray(framewise, dtype=np.int64)
    nonblank = np.flatnonzero(labels != blank)
    if nonblank.size == 0:
        raise CannotDensifyError("framewise prediction is entirely blank")
    t = np.arange(labels.size)
    # index of nearest non-blank on each side (clipped at the ends)
    right_pos = np.searchsorted(nonblank, t, side="left").clip(max=nonblank.size - 1)
    left_pos = (np.searchsorted(nonblank, t, side="right") - 1).clip(min=0)
    left, right = nonblank[left_pos], nonblank[right_pos]
    # ties (equal distance) resolve to the left/earlier gloss
    use_left = np.abs(t - left) <= np.abs(right - t)
    source = np.where(use_left, left, right)
    return labels[source]


def generate_dpl(framewise, gt: Sequence[int], blank: int) -> np.ndarray | None:
    """Full dense pseudo-label generation; ``None`` when the sample is skipped."""
    return pseudo_label_targets(framewise, gt, blank, densify_on=True, refine_on=True)


def pseudo_label_targets(
    framewise,
    gt: Sequence[int],
    blank: int,
    densify_on: bool = True,
    refine_on: bool = True,
) -> np.ndarray | None:
    """Pseudo-label targets under the design-choice toggles.

    ``refine_on=False`` never swaps in ground truth; ``densify_on=False``
    keeps blank frames as blank targets. The length-gap gating always
    applies. Returns ``None`` when the sample is skipped or cannot be
    densified.
    """
    labels = np.asarray(framewise, dtype=np.int64)
    pred = collapse(labels, blank)
    case = classify_case(pred, gt)
    if case is DplrCase.SKIP:
        return None
    if case is DplrCase.CASE1 and refine_on:
        labels = swap_wrong_glosses(labels, pred, gt, blank)
    if densify_on:
        try:
            return densify(labels, blank)
        except CannotDensifyError:
            return None
    return labels.copy()


def refine_loss(
    latent_logprobs: np.ndarray, targets
) -> tuple[float, np.ndarray]:
    """Mean per-frame cross-entropy of *targets* under the latent head.

    Returns the loss and its gradient wrt the log-probabilities (the only
    path the refinement supervision flows through).
    """
    targets = np.asarray(targets, dtype=np.int64)
    if latent_logprobs.ndim != 2:
        raise ShapeError(f"refine_loss expects [T, V+1], got {latent_logprobs.shape}")
    t_len, k = latent_logprobs.shape
    if targets.shape != (t_len,):
        raise ContractViolationError(
            f"targets length {targets.shape} != frames {t_len}"
        )
    if targets.min() < 0 or targets.max() >= k:
        raise ContractViolationError("target label outside class range")
    rows = np.arange(t_len)
    loss = float(-latent_logprobs[rows, targets].mean(dtype=np.float64))
    grad = np.zeros_like(latent_logprobs)
    grad[rows, targets] = -1.0 / t_len
    return loss, grad
