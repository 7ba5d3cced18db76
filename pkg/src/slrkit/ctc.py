"""CTC loss, greedy decoding and sequence collapse.

The loss runs the standard forward-backward recursion over the
blank-interleaved label graph, entirely in log-space double precision.
Blank is always the last class index. ``brute_force_ctc`` enumerates every
framewise path and is the test oracle for small instances.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import InfeasibleTargetError, ShapeError

__all__ = [
    "min_frames_required",
    "ctc_loss",
    "brute_force_ctc",
    "greedy_decode",
    "collapse",
]


def _validate(logprobs: np.ndarray, target: list[int]) -> tuple[int, int, int]:
    if logprobs.ndim != 2:
        raise ShapeError(f"ctc expects [T, V+1] log-probs, got {logprobs.shape}")
    t_len, k = logprobs.shape
    blank = k - 1
    for g in target:
        if not 0 <= g < blank:
            raise ShapeError(f"target label {g} outside [0, {blank})")
    return t_len, k, blank


def min_frames_required(target: list[int]) -> int:
    """Frames needed to emit *target*: one per gloss plus one blank per repeat."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_loss(
    logprobs: np.ndarray, target: list[int]
) -> tuple[float, np.ndarray]:
    """Negative log-probability of *target* plus gradient wrt the log-probs.

    Sums over every valid blank-augmented alignment. Raises
    :class:`InfeasibleTargetError` when the target cannot fit in the frame
    count; callers skip such samples.
    """
    t_len, k, blank = _validate(logprobs, target)
    if t_len < min_frames_required(target):
        raise InfeasibleTargetError(
            f"target of {len(target)} glosses needs {min_frames_required(target)} "
            f"frames, got {t_len}"
        )
    lp = np.asarray(logprobs, dtype=np.float64)
    labels = np.empty(2 * len(target) + 1, dtype=np.int64)
    labels[0::2] = blank
    labels[1::2] = target
    s_len = labels.size

    # skip transition s-2 -> s allowed when label differs and is not blank
    can_skip = np.zeros(s_len, dtype=bool)
    if s_len > 2:
        can_skip[2:] = (labels[2:] != blank) & (labels[2:] != labels[:-2])

    neg = -np.inf
    alpha = np.full((t_len, s_len), neg)
    alpha[0, 0] = lp[0, labels[0]]
    if s_len > 1:
        alpha[0, 1] = lp[0, labels[1]]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        skip = np.where(can_skip[2:], prev[:-2], neg)
        acc[2:] = np.logaddexp(acc[2:], skip)
        alpha[t] = acc + lp[t, labels]

    log_z = np.logaddexp(alpha[-1, -1], alpha[-1, -2]) if s_len > 1 else alpha[-1, -1]
    if not np.isfinite(log_z):
        raise InfeasibleTargetError("no valid alignment has finite probability")

    beta = np.full((t_len, s_len), neg)
    beta[-1, -1] = 0.0
    if s_len > 1:
        beta[-1, -2] = 0.0
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + lp[t + 1, labels]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        skip = np.where(can_skip[2:], nxt[2:], neg)
        acc[:-2] = np.logaddexp(acc[:-2], skip)
        beta[t] = acc

    # posterior over classes per frame; gradient of -log Z wrt lp is -gamma
    occ = alpha + beta - log_z
    grad = np.zeros((t_len, k), dtype=np.float64)
    np.add.at(grad, (slice(None), labels), -np.exp(occ))
    return float(-log_z), grad


@lru_cache(maxsize=64)
def _path_table(k: int, t_len: int) -> tuple[np.ndarray, np.ndarray]:
    """All ``k**t_len`` framewise paths and their emission masks (blank = k-1)."""
    paths = np.indices((k,) * t_len).reshape(t_len, -1).T  # [P, T]
    first_of_run = np.ones_like(paths, dtype=bool)
    first_of_run[:, 1:] = paths[:, 1:] != paths[:, :-1]
    emits = first_of_run & (paths != k - 1)
    return paths, emits


def brute_force_ctc(logprobs: np.ndarray, target: list[int]) -> float:
    """Enumerate all framewise paths whose collapse equals *target*.

    Only usable when ``(V+1)**T`` stays small (the caller guards); kept fully
    independent of the forward-backward recursion.
    """
    t_len, k, blank = _validate(logprobs, target)
    n_paths = k**t_len
    if n_paths > 10**7:
        raise ShapeError(f"{n_paths} paths exceed the brute-force budget")
    lp = np.asarray(logprobs, dtype=np.float64)
    paths, emits = _path_table(k, t_len)

    path_lp = lp[np.arange(t_len), paths].sum(axis=1)
    match = emits.sum(axis=1) == len(target)
    if target:
        tgt = np.asarray(target)
        pos = np.cumsum(emits, axis=1) - 1
        ok = np.where(emits, tgt[np.clip(pos, 0, len(target) - 1)] == paths, True)
        match &= ok.all(axis=1)
    if not match.any():
        return float("inf")
    sel = path_lp[match]
    m = sel.max()
    return float(-(m + np.log(np.exp(sel - m).sum())))


def greedy_decode(logprobs: np.ndarray) -> np.ndarray:
    """Per-frame argmax labels; ties go to the smallest class index."""
    if logprobs.ndim != 2:
        raise ShapeError(f"greedy_decode expects [T, V+1], got {logprobs.shape}")
    return logprobs.argmax(axis=1)


def collapse(labels, blank: int) -> list[int]:
    """Merge consecutive duplicates, then drop blanks."""
    out: list[int] = []
    prev = None
    for lab in labels:
        lab = int(lab)
        if lab != prev:
            if lab != blank:
                out.append(lab)
            prev = lab
    return out
