"""CTC prefix scoring in the log domain.

Implements the prefix forward recursion used by hybrid CTC/attention
decoding, a resumable variant that starts from cached rows computed on a
shorter (pilot) lattice, and a brute-force path-sum oracle.

For a prefix ``h`` the state holds two rows over frames ``t = 0..T-1``:
``r_n[t]``, the log-probability of all frame paths over ``0..t`` that
collapse to ``h`` and end in the last token of ``h``, and ``r_b[t]``, the
same for paths ending in blank.  The prefix score ``psi`` is the
log-probability that the collapsed output of the full lattice starts with
``h``.

Probability zero is represented by ``-inf``; numpy's ``logaddexp`` saturates
correctly on it and the recursion never subtracts two infinities, so NaN
cannot arise.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pilotdec.errors import InvalidState, InvalidToken, TooLarge
from pilotdec.lattice import EmissionLattice, ctc_collapse

NEG_INF = -np.inf
BRUTE_FORCE_LIMIT = 10**7


@dataclass(frozen=True, eq=False)
class CtcPrefixState:
    r_n: np.ndarray
    r_b: np.ndarray
    last_token: int | None = None

    @property
    def frames_scored(self) -> int:
        return len(self.r_n)

    def final_log_prob(self) -> float:
        """log P(collapse == prefix) over all scored frames."""
        return float(np.logaddexp(self.r_n[-1], self.r_b[-1]))


@dataclass(frozen=True, eq=False)
class CtcScore:
    psi: float
    state: CtcPrefixState
    frames_computed: int = 0


def ctc_init(lattice: EmissionLattice, blank: int = 0) -> CtcPrefixState:
    """State of the empty prefix: every frame so far emitted blank."""
    r_b = np.cumsum(lattice.frames[:, blank])
    r_n = np.full(lattice.T, NEG_INF)
    return CtcPrefixState(r_n, r_b, None)


def _phi(rg_n: np.ndarray, rg_b: np.ndarray, last: Sequence[int | None], cands: np.ndarray) -> np.ndarray:
    """Log mass available to start emitting each candidate, shape (H, T, C).

    A repeated token may only follow its previous occurrence through a blank.
    """
    last_arr = np.array([-1 if l is None else l for l in last])
    same = cands[None, :] == last_arr[:, None]  # (H, C)
    rn = np.where(same[:, None, :], NEG_INF, rg_n[:, :, None])
    return np.logaddexp(rg_b[:, :, None], rn)


def forward_rows(
    rg_n: np.ndarray,
    rg_b: np.ndarray,
    last: Sequence[int | None],
    x: np.ndarray,
    cands: np.ndarray,
    blank: int = 0,
    start: int = 0,
    cache_n: np.ndarray | None = None,
    cache_b: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched prefix extension.

    ``rg_*`` are the parent rows, shape (H, T); ``cands`` the C candidate
    tokens (none of them blank).  Returns child rows ``(r_n, r_b)`` of shape
    (H, T, C) and ``psi`` of shape (H, C).  When ``start > 0`` the first
    ``start`` frames of the child rows are copied from ``cache_*`` (shape
    (H, >=start, C)) and the recursion resumes at frame ``start``.
    """
    H, T = rg_n.shape
    C = len(cands)
    xc = x[:, cands]
    xb = x[:, blank]
    phi = _phi(rg_n, rg_b, last, cands)

    r_n = np.empty((H, T, C))
    r_b = np.empty((H, T, C))
    if start == 0:
        empty = np.array([l is None for l in last])
        r_n[:, 0, :] = np.where(empty[:, None], xc[0][None, :], NEG_INF)
        r_b[:, 0, :] = NEG_INF
        t0 = 1
    else:
        r_n[:, :start, :] = cache_n[:, :start, :]
        r_b[:, :start, :] = cache_b[:, :start, :]
        t0 = start
    for t in range(t0, T):
        r_n[:, t, :] = np.logaddexp(r_n[:, t - 1, :], phi[:, t - 1, :]) + xc[t]
        r_b[:, t, :] = np.logaddexp(r_b[:, t - 1, :], r_n[:, t - 1, :]) + xb[t]

    # psi sums the first-emission events; it needs only parent rows, so it is
    # evaluated for all frames without the recursion
    starts = np.concatenate([r_n[:, :1, :], phi[:, :-1, :] + xc[None, 1:, :]], axis=1)
    psi = np.logaddexp.reduce(starts, axis=1)
    return r_n, r_b, psi


def _check_token(c: int, blank: int) -> None:
    if c == blank:
        raise InvalidToken("cannot extend a prefix with the blank token")


def ctc_extend(
    state: CtcPrefixState,
    c: int,
    lattice: EmissionLattice,
    blank: int = 0,
    eos: int | None = None,
) -> CtcScore:
    """Score ``h = (g, c)`` where ``state`` belongs to ``g``.

    For ``c == eos`` the score is the probability that the whole lattice
    collapses exactly to ``g`` and the returned state is ``g``'s own.
    """
    _check_token(c, blank)
    if state.frames_scored != lattice.T:
        raise InvalidState(f"state covers {state.frames_scored} frames, lattice has {lattice.T}")
    if eos is not None and c == eos:
        return CtcScore(state.final_log_prob(), state, 0)
    r_n, r_b, psi = forward_rows(
        state.r_n[None], state.r_b[None], [state.last_token], lattice.frames, np.array([c]), blank
    )
    new = CtcPrefixState(r_n[0, :, 0], r_b[0, :, 0], int(c))
    return CtcScore(float(psi[0, 0]), new, lattice.T)


def leap_boundary(cached_frames: int, q: float) -> int:
    """Number of leading frames reused from a cached pilot state."""
    if not 0.5 <= q <= 1.0:
        raise InvalidState(f"q={q} outside [0.5, 1]")
    return int(math.floor(cached_frames * q + 1e-12))


def ctc_extend_leap(
    state: CtcPrefixState,
    cached: CtcPrefixState,
    c: int,
    lattice: EmissionLattice,
    q: float = 1.0,
    blank: int = 0,
) -> CtcScore:
    """Like :func:`ctc_extend`, resuming from ``cached`` rows of ``h = (g, c)``.

    ``cached`` was computed on a pilot lattice; its first
    ``floor(cached.frames_scored * q)`` frames are reused and the recursion
    only runs over the remaining frames of ``lattice``.  ``state`` holds the
    rows of ``g`` on ``lattice``.  The result is exact whenever the pilot
    lattice shares those leading frames with ``lattice``.
    """
    _check_token(c, blank)
    if state.frames_scored != lattice.T:
        raise InvalidState(f"state covers {state.frames_scored} frames, lattice has {lattice.T}")
    B = leap_boundary(cached.frames_scored, q)
    if cached.frames_scored > lattice.T or B > lattice.T:
        raise InvalidState(f"cached boundary {B} beyond lattice length {lattice.T}")
    r_n, r_b, psi = forward_rows(
        state.r_n[None],
        state.r_b[None],
        [state.last_token],
        lattice.frames,
        np.array([c]),
        blank,
        start=B,
        cache_n=cached.r_n[None, :, None],
        cache_b=cached.r_b[None, :, None],
    )
    new = CtcPrefixState(r_n[0, :, 0], r_b[0, :, 0], int(c))
    recomputed = lattice.T - B if B > 0 else lattice.T
    return CtcScore(float(psi[0, 0]), new, recomputed)


def ctc_prefix_logprob(prefix: Sequence[int], lattice: EmissionLattice, blank: int = 0) -> float:
    """Prefix score of a whole token sequence by chaining :func:`ctc_extend`."""
    state = ctc_init(lattice, blank)
    psi = 0.0
    for c in prefix:
        sc = ctc_extend(state, int(c), lattice, blank)
        state, psi = sc.state, sc.psi
    return psi


def ctc_brute_force(
    prefix: Sequence[int],
    lattice: EmissionLattice,
    blank: int = 0,
    exact: bool = False,
) -> float:
    """Log-sum over all ``V**T`` frame paths whose collapse starts with ``prefix``.

    With ``exact=True`` only paths collapsing to exactly ``prefix`` count.
    """
    T, V = lattice.T, lattice.V
    if V**T > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"V**T = {V}**{T} exceeds {BRUTE_FORCE_LIMIT}")
    prefix = tuple(int(p) for p in prefix)
    if len(prefix) > T:
        return NEG_INF
    x = lattice.frames
    k = len(prefix)
    total = NEG_INF
    frames = np.arange(T)
    for path in itertools.product(range(V), repeat=T):
        out = ctc_collapse(path, blank)
        ok = out == prefix if exact else out[:k] == prefix
        if ok:
            total = np.logaddexp(total, x[frames, path].sum())
    return float(total)
