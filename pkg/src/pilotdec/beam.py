"""Hybrid CTC/attention beam search with reference-guided accelerations.

Hypotheses are ranked by ``lam * attn_logp + (1 - lam) * ctc_psi``.  When a
reference from a pilot decode is supplied the search can

* collapse the beam to its best hypothesis on rounds where that hypothesis's
  newest token agrees with the reference (one attention evaluation instead of
  ``k``); the first disagreement disables collapsing for the rest of the
  utterance;
* stop once the round count reaches a length predicted from the reference
  and some hypothesis has ended;
* resume CTC prefix rows from those the pilot computed for the same prefix,
  recomputing only the frames past ``floor(T_pilot * q)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from pilotdec.ctc import NEG_INF, CtcPrefixState, ctc_init, forward_rows, leap_boundary
from pilotdec.errors import InvalidConfig, InvalidState
from pilotdec.lattice import EmissionLattice, Vocab
from pilotdec.scorer import AttnScorer, NfeReport


@dataclass(frozen=True)
class BeamConfig:
    beam_width: int = 5
    lam: float = 0.7  # attention weight; CTC gets 1 - lam
    max_tokens: int = 30
    end_detect_margin: float = 0.0
    collapse: bool = False
    early_term: bool = False
    early_term_c: int = 5
    leap: bool = False
    leap_q: float = 1.0

    def __post_init__(self):
        if self.beam_width < 1:
            raise InvalidConfig("beam_width must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidConfig("lam must lie in [0, 1]")
        if self.max_tokens < 1:
            raise InvalidConfig("max_tokens must be >= 1")
        if self.early_term_c < 0:
            raise InvalidConfig("early_term_c must be >= 0")
        if not 0.5 <= self.leap_q <= 1.0:
            raise InvalidConfig("leap_q must lie in [0.5, 1]")

    def with_opts(self, collapse: bool, early_term: bool, leap: bool) -> "BeamConfig":
        from dataclasses import replace

        return replace(self, collapse=collapse, early_term=early_term, leap=leap)


@dataclass(eq=False)
class Hypothesis:
    tokens: tuple[int, ...]
    attn_logp: float
    ctc_state: CtcPrefixState
    ctc_psi: float
    score: float
    ended: bool = False
    token_logps: tuple[float, ...] = ()
    attn_token_logps: tuple[float, ...] = ()
    parent: "Hypothesis | None" = field(default=None, repr=False)
    # child CTC rows (T, C) for every candidate, kept when a pilot needs them
    expansion: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def output(self) -> tuple[int, ...]:
        """Tokens without the leading sos and trailing eos."""
        toks = self.tokens[1:]
        return toks[:-1] if self.ended else toks

    def ancestry(self) -> list["Hypothesis"]:
        chain = []
        h = self
        while h is not None:
            chain.append(h)
            h = h.parent
        return chain[::-1]


@dataclass(frozen=True, eq=False)
class PilotReference:
    """Reference hypothesis produced by a pilot decode of a partial input.

    ``expansions[j]`` holds the CTC rows, over the pilot's frames, of every
    one-token extension of the reference prefix with ``j`` tokens.
    """

    tokens: tuple[int, ...]
    token_logps: tuple[float, ...]
    attn_token_logps: tuple[float, ...]
    partial_frames: int
    partial_len_s: float
    pilot_index: int = 0
    ended: bool = False
    expansions: tuple[tuple[np.ndarray, np.ndarray], ...] = ()
    nfe: NfeReport = field(default_factory=NfeReport)

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    def ctc_state(self, j: int, vocab: Vocab) -> CtcPrefixState | None:
        """Pilot CTC state of the reference prefix with ``j >= 1`` tokens."""
        if j < 1 or j > len(self.tokens) or j - 1 >= len(self.expansions):
            return None
        cands = candidate_tokens(vocab)
        ci = int(np.searchsorted(cands, self.tokens[j - 1]))
        rn, rb = self.expansions[j - 1]
        return CtcPrefixState(rn[:, ci], rb[:, ci], self.tokens[j - 1])


@dataclass
class DecodeResult:
    best: Hypothesis
    beam_final: list[Hypothesis]
    nfe: NfeReport
    rounds: int
    collapse_hits: int = 0
    collapse_divergences: int = 0
    leap_rounds: int = 0
    predicted_length: int | None = None
    stop_reason: str = ""

    @property
    def tokens(self) -> tuple[int, ...]:
        return self.best.output


def candidate_tokens(vocab: Vocab) -> np.ndarray:
    """Tokens a hypothesis may be extended with: words and eos, ascending."""
    return np.array(sorted((*vocab.word_ids, vocab.eos_id)))


def combine(attn: float | np.ndarray, ctc: float | np.ndarray, lam: float):
    """Weighted score that treats ``0 * -inf`` as 0 at the endpoints."""
    if lam == 1.0:
        return np.asarray(attn, dtype=float) + 0.0
    if lam == 0.0:
        return np.asarray(ctc, dtype=float) + 0.0
    return lam * np.asarray(attn) + (1.0 - lam) * np.asarray(ctc)


def predict_length(len_partial_s: float, len_full_s: float, n_p: int, c: int) -> int:
    """Predicted output length: scale the pilot token count by the input growth."""
    if len_partial_s <= 0:
        raise InvalidState(f"partial length must be positive, got {len_partial_s}")
    if n_p < 0:
        raise InvalidState("n_p must be nonnegative")
    return int(math.floor(len_full_s / len_partial_s * n_p + 0.5)) + int(c)


def early_terminate(ended: Sequence[Hypothesis], round_idx: int, n: int) -> bool:
    return round_idx >= n and len(ended) > 0


def _sort_key(h: Hypothesis):
    # descending score; ties by lowest token ids, then shortest
    return (-h.score, h.tokens)


def collapse_step(
    running: list[Hypothesis], reference: PilotReference | None, round_idx: int
) -> tuple[list[Hypothesis], str]:
    """Validate the best hypothesis's newest token against the reference.

    Returns the hypotheses to expand this round and one of ``"hit"``,
    ``"diverged"`` or ``"skip"`` (no token to check: first round, empty or
    exhausted reference).
    """
    j = round_idx - 1
    if reference is None or not running or j < 1 or j > reference.n_tokens:
        return running, "skip"
    best = running[0]
    if len(best.tokens) - 1 >= j and best.tokens[j] == reference.tokens[j - 1]:
        return [best], "hit"
    return running, "diverged"


def _root(lattice: EmissionLattice, vocab: Vocab) -> Hypothesis:
    state = ctc_init(lattice, vocab.blank_id)
    return Hypothesis((vocab.sos_id,), 0.0, state, 0.0, 0.0)


def beam_search(
    lattice: EmissionLattice,
    scorer: AttnScorer,
    vocab: Vocab,
    cfg: BeamConfig,
    reference: PilotReference | None = None,
    keep_expansions: bool = False,
) -> DecodeResult:
    """Decode ``lattice``; see the module docstring for the accelerations."""
    T = lattice.T
    x = lattice.frames
    blank, eos = vocab.blank_id, vocab.eos_id
    cands = candidate_tokens(vocab)
    eos_col = int(np.searchsorted(cands, eos))
    word_mask = cands != eos
    k = cfg.beam_width

    nfe = NfeReport()
    running = [_root(lattice, vocab)]
    ended: list[Hypothesis] = []
    hits = divergences = leap_rounds = 0
    collapse_on = cfg.collapse and reference is not None and reference.n_tokens > 0
    predicted = None
    if cfg.early_term and reference is not None and reference.partial_len_s > 0:
        predicted = predict_length(reference.partial_len_s, lattice.duration_s, reference.n_tokens, cfg.early_term_c)

    rounds = 0
    stop_reason = "max_tokens"
    for rnd in range(1, cfg.max_tokens + 1):
        rounds = rnd
        expand = running
        collapsed = rnd == 1 and reference is not None
        if collapse_on:
            expand, status = collapse_step(running, reference, rnd)
            if status == "hit":
                hits += 1
                collapsed = True
            elif status == "diverged":
                divergences += 1
                collapse_on = False

        # CTC rows for every candidate of every expanded hypothesis
        leap_cache = None
        if cfg.leap and collapsed and reference is not None and len(expand) == 1:
            h = expand[0]
            j = len(h.tokens) - 1
            if j < len(reference.expansions) and h.tokens[1:] == reference.tokens[:j]:
                cache = reference.expansions[j]
                B = leap_boundary(cache[0].shape[0], cfg.leap_q)
                if 0 < B <= T:
                    leap_cache = (B, cache)
        rg_n = np.stack([h.ctc_state.r_n for h in expand])
        rg_b = np.stack([h.ctc_state.r_b for h in expand])
        last = [h.ctc_state.last_token for h in expand]
        if leap_cache is not None:
            B, (cn, cb) = leap_cache
            r_n, r_b, psi = forward_rows(rg_n, rg_b, last, x, cands, blank, B, cn[None], cb[None])
            nfe.ctc_frames_scored += T - B
            leap_rounds += 1
        else:
            r_n, r_b, psi = forward_rows(rg_n, rg_b, last, x, cands, blank)
            nfe.ctc_frames_scored += T * len(expand)
        psi[:, eos_col] = np.logaddexp(rg_n[:, -1], rg_b[:, -1])

        attn = np.empty((len(expand), len(cands)))
        for i, h in enumerate(expand):
            attn[i] = scorer.next_log_probs(h.tokens, lattice)[cands]
        nfe.attn_evals += len(expand)

        new_attn = np.array([h.attn_logp for h in expand])[:, None] + attn
        scores = combine(new_attn, psi, cfg.lam)

        pool = []
        for i, h in enumerate(expand):
            if keep_expansions:
                h.expansion = (r_n[i], r_b[i])
            for ci, c in enumerate(cands):
                pool.append((-scores[i, ci], h.tokens + (int(c),), i, ci))
        pool.sort(key=lambda p: (p[0], p[1]))

        new_running = []
        for neg, toks, i, ci in pool[:k]:
            parent = expand[i]
            c = int(cands[ci])
            if word_mask[ci]:
                state = CtcPrefixState(r_n[i, :, ci].copy(), r_b[i, :, ci].copy(), c)
            else:
                state = parent.ctc_state
            child = Hypothesis(
                tokens=toks,
                attn_logp=float(new_attn[i, ci]),
                ctc_state=state,
                ctc_psi=float(psi[i, ci]),
                score=float(scores[i, ci]),
                ended=not word_mask[ci],
                token_logps=parent.token_logps + (float(scores[i, ci] - parent.score),),
                attn_token_logps=parent.attn_token_logps + (float(attn[i, ci]),),
                parent=parent,
            )
            (ended if child.ended else new_running).append(child)
        running = sorted(new_running, key=_sort_key)
        ended.sort(key=_sort_key)

        if not running:
            stop_reason = "beam_exhausted"
            break
        if ended and ended[0].score > running[0].score + cfg.end_detect_margin:
            stop_reason = "end_detect"
            break
        if predicted is not None and early_terminate(ended, rnd, predicted):
            stop_reason = "early_term"
            break

    nfe.decode_rounds = rounds
    best = ended[0] if ended else running[0]
    return DecodeResult(
        best=best,
        beam_final=sorted(ended + running, key=_sort_key)[:k],
        nfe=nfe,
        rounds=rounds,
        collapse_hits=hits,
        collapse_divergences=divergences,
        leap_rounds=leap_rounds,
        predicted_length=predicted,
        stop_reason=stop_reason,
    )


def reference_from(result: DecodeResult, lattice: EmissionLattice, pilot_index: int = 0) -> PilotReference:
    """Package the best hypothesis of a (pilot) decode as a reference."""
    best = result.best
    n = len(best.output)
    chain = best.ancestry()
    expansions = []
    for node in chain:
        if node.expansion is None or len(expansions) > n:
            break
        expansions.append(node.expansion)
    return PilotReference(
        tokens=best.output,
        token_logps=best.token_logps[:n],
        attn_token_logps=best.attn_token_logps[:n],
        partial_frames=lattice.T,
        partial_len_s=lattice.duration_s,
        pilot_index=pilot_index,
        ended=best.ended,
        expansions=tuple(expansions),
        nfe=result.nfe,
    )
