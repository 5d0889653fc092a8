"""Token-level word error rate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from pilotdec.errors import InvalidReference


@dataclass(frozen=True)
class WerBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.ref_len


def edit_distance(ref: Sequence, hyp: Sequence) -> WerBreakdown:
    """Unit-cost Levenshtein alignment of ``hyp`` against ``ref``.

    The traceback prefers substitution (or match), then insertion, then
    deletion when several moves reach the same minimal cost.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    if n == 0:
        raise InvalidReference("reference sequence is empty")
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row, prev = d[i], d[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ri != hyp[j - 1])
            row[j] = min(sub, row[j - 1] + 1, prev[j] + 1)

    s = dl = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and d[i][j] == d[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dl += 1
            i -= 1
    return WerBreakdown(s, dl, ins, n)


def wer(ref: Sequence, hyp: Sequence) -> float:
    return edit_distance(ref, hyp).wer


def corpus_wer(pairs: Iterable[tuple[Sequence, Sequence]]) -> float:
    """Mean of per-utterance WER (each utterance weighted equally)."""
    values = [wer(r, h) for r, h in pairs]
    return sum(values) / len(values) if values else 0.0
