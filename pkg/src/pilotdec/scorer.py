"""Autoregressive token scorers standing in for the attention decoder.

Both scorers return a full ``V``-length vector of natural-log probabilities
for the next token given a prefix that starts with ``<sos>``.  Blank and
``<sos>`` always get probability zero.  Every call to
:meth:`AttnScorer.next_log_probs` counts as one neural function evaluation.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pilotdec.errors import InvalidConfig
from pilotdec.lattice import DEFAULT_TOKEN_RATE, EmissionLattice, SyntheticUtterance, Vocab

NOISE_CONCENTRATION = 0.15
FLOOR = 1e-6


@dataclass
class NfeReport:
    attn_evals: int = 0
    ctc_frames_scored: int = 0
    decode_rounds: int = 0

    def __iadd__(self, other: "NfeReport") -> "NfeReport":
        self.attn_evals += other.attn_evals
        self.ctc_frames_scored += other.ctc_frames_scored
        self.decode_rounds += other.decode_rounds
        return self

    def to_dict(self) -> dict:
        return {
            "attn_evals": self.attn_evals,
            "ctc_frames_scored": self.ctc_frames_scored,
            "decode_rounds": self.decode_rounds,
        }


def _context_frames(context) -> int | None:
    if context is None:
        return None
    if isinstance(context, EmissionLattice):
        return context.T
    return len(context)


class AttnScorer:
    """Base class: subclasses implement :meth:`_log_probs`."""

    def __init__(self, vocab: Vocab):
        self.vocab = vocab
        self._nfe = 0
        self._lock = threading.Lock()
        allowed = np.zeros(vocab.size, dtype=bool)
        allowed[list(vocab.word_ids)] = True
        allowed[vocab.eos_id] = True
        self._allowed = allowed

    @property
    def nfe_counter(self) -> int:
        return self._nfe

    def reset_nfe(self) -> None:
        with self._lock:
            self._nfe = 0

    def next_log_probs(self, prefix: Sequence[int], context=None) -> np.ndarray:
        with self._lock:
            self._nfe += 1
        return self._log_probs(tuple(int(t) for t in prefix), context)

    def _log_probs(self, prefix: tuple[int, ...], context) -> np.ndarray:
        raise NotImplementedError

    def _to_log(self, probs: np.ndarray) -> np.ndarray:
        """Normalize ``probs`` over the allowed tokens and take logs."""
        p = np.where(self._allowed, probs, 0.0)
        n_allowed = self._allowed.sum()
        p = (1.0 - FLOOR) * p / p.sum() + np.where(self._allowed, FLOOR / n_allowed, 0.0)
        with np.errstate(divide="ignore"):
            return np.log(p)


class NgramScorer(AttnScorer):
    """Seeded random n-gram tables with a frame-proportional length model.

    The eos probability is scaled by ``exp(length_slope * (n - expected))``
    where ``n`` is the number of tokens emitted so far and ``expected`` is
    ``token_rate`` times the context duration.
    """

    def __init__(
        self,
        order: int,
        vocab: Vocab,
        seed: int,
        token_rate: float = DEFAULT_TOKEN_RATE,
        frame_duration: float = 0.04,
        length_slope: float = 1.5,
        default_length: int = 8,
    ):
        if order < 1:
            raise InvalidConfig(f"n-gram order must be >= 1, got {order}")
        super().__init__(vocab)
        self.order = order
        self.seed = seed
        self.token_rate = token_rate
        self.frame_duration = frame_duration
        self.length_slope = length_slope
        self.default_length = default_length
        self._tables: dict[tuple[int, ...], np.ndarray] = {}

    def _row(self, history: tuple[int, ...]) -> np.ndarray:
        row = self._tables.get(history)
        if row is None:
            rng = np.random.default_rng([self.seed, 0x96A, len(history), *history])
            row = rng.dirichlet(np.full(self.vocab.size, 0.5))
            self._tables[history] = row
        return row

    def _log_probs(self, prefix, context):
        history = prefix[-(self.order - 1) :] if self.order > 1 else ()
        p = self._row(history).copy()
        frames = _context_frames(context)
        if frames is None:
            expected = self.default_length
        else:
            expected = frames * self.frame_duration * self.token_rate
        n = len(prefix) - 1
        eos = self.vocab.eos_id
        p[eos] = min(p[eos] * np.exp(self.length_slope * (n - expected)), 1e6)
        return self._to_log(p)


class TeacherScorer(AttnScorer):
    """Lattice-conditioned scorer with dialable quality.

    The intended next token is the ``i``-th truth token visible within the
    context frames (or eos once those run out), where ``i`` is the number of
    tokens already emitted.  Its distribution is
    ``fidelity * onehot(target) + (1 - fidelity) * noise`` with noise drawn
    from a Dirichlet seeded by the prefix.
    """

    def __init__(self, utt: SyntheticUtterance, fidelity: float, vocab: Vocab, seed: int):
        if not 0.0 <= fidelity <= 1.0:
            raise InvalidConfig(f"fidelity {fidelity} outside [0, 1]")
        super().__init__(vocab)
        self.utt = utt
        self.fidelity = float(fidelity)
        self.seed = seed
        self._allowed_ids = np.flatnonzero(self._allowed)

    def _log_probs(self, prefix, context):
        frames = _context_frames(context)
        visible = self.utt.truth if frames is None else self.utt.visible_truth(frames)
        i = len(prefix) - 1
        target = visible[i] if i < len(visible) else self.vocab.eos_id
        p = np.zeros(self.vocab.size)
        p[target] = self.fidelity
        if self.fidelity < 1.0:
            rng = np.random.default_rng([self.seed, 0x7EA, *prefix])
            noise = rng.dirichlet(np.full(len(self._allowed_ids), NOISE_CONCENTRATION))
            p[self._allowed_ids] += (1.0 - self.fidelity) * noise
        return self._to_log(p)


def ngram_scorer(order: int, vocab: Vocab, seed: int, **kwargs) -> NgramScorer:
    return NgramScorer(order, vocab, seed, **kwargs)


def teacher_scorer(utt: SyntheticUtterance, fidelity: float, vocab: Vocab, seed: int) -> TeacherScorer:
    return TeacherScorer(utt, fidelity, vocab, seed)
