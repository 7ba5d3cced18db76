"""Word error rate with substitution/deletion/insertion decomposition."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import UndefinedWerError

__all__ = ["EditStats", "edit_alignment", "wer", "corpus_wer", "write_wer_report"]


@dataclass
class EditStats:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def edit_alignment(reference: Sequence[int], hypothesis: Sequence[int]) -> EditStats:
    """Minimal unit-cost edit alignment between reference and hypothesis.

    Among minimal alignments the backtrace prefers substitution over
    deletion over insertion, so the S/D/I decomposition is reproducible.
    """
    if len(reference) == 0:
        raise UndefinedWerError("WER undefined for an empty reference")
    n, m = len(reference), len(hypothesis)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dist[i][0] = i
    for j in range(m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row, above = dist[i], dist[i - 1]
        ref_tok = reference[i - 1]
        for j in range(1, m + 1):
            sub = above[j - 1] + (ref_tok != hypothesis[j - 1])
            row[j] = min(sub, above[j] + 1, row[j - 1] + 1)

    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and reference[i - 1] == hypothesis[j - 1] \
                and dist[i][j] == dist[i - 1][j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + 1:
            subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditStats(substitutions=subs, deletions=dels, insertions=ins, ref_len=n)


def wer(stats: EditStats) -> float:
    """``100 * (S + D + I) / ref_len``; may exceed 100."""
    return 100.0 * stats.errors / stats.ref_len


def corpus_wer(pairs: Iterable[tuple[Sequence[int], Sequence[int]]]) -> float:
    """Pooled WER: total edits over total reference length (not a mean of WERs)."""
    errors = 0
    ref_total = 0
    for ref, hyp in pairs:
        stats = edit_alignment(ref, hyp)
        errors += stats.errors
        ref_total += stats.ref_len
    if ref_total == 0:
        raise UndefinedWerError("corpus WER undefined: no reference tokens")
    return 100.0 * errors / ref_total


def write_wer_report(rows: list[tuple[str, EditStats]], out) -> float:
    """Write the evaluation TSV (per-video rows plus pooled TOTAL); returns total WER."""
    out.write("video_id\tref_len\tS\tD\tI\twer\n")
    tot = EditStats(0, 0, 0, 0)
    for video_id, st in rows:
        out.write(
            f"{video_id}\t{st.ref_len}\t{st.substitutions}\t{st.deletions}"
            f"\t{st.insertions}\t{wer(st):.2f}\n"
        )
        tot.substitutions += st.substitutions
        tot.deletions += st.deletions
        tot.insertions += st.insertions
        tot.ref_len += st.ref_len
    total = wer(tot)
    out.write(
        f"TOTAL\t{tot.ref_len}\t{tot.substitutions}\t{tot.deletions}"
        f"\t{tot.insertions}\t{total:.2f}\n"
    )
    return total
