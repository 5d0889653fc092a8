"""Vocabularies, emission lattices and the synthetic utterance generator.

A lattice is a ``T x V`` matrix of natural-log token posteriors, one row per
encoder frame.  Synthetic utterances carry a ground-truth token sequence and
the frame at which each token is emitted; :func:`make_lattice` renders them
into lattices whose difficulty is controlled by ``noise_level``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from pilotdec.errors import InvalidConfig, InvalidUtterance

FRAME_DURATION = 0.04  # 25 frames/s

# Clean-row shape.  Token frames put TOKEN_PEAK on the token and BLANK_BIAS on
# blank; blank frames put BLANK_PEAK on blank.  Whatever is left is spread
# uniformly so no entry is ever exactly zero.
TOKEN_PEAK = 0.88
BLANK_BIAS = 0.10
BLANK_PEAK = 0.97
NOISE_CONCENTRATION = 0.1
# blank frames receive this fraction of the per-frame noise weight
BLANK_NOISE = 0.1

DEFAULT_TOKEN_RATE = 2.5  # tokens per second of speech


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    blank_id: int = 0
    sos_id: int = 1
    eos_id: int = 2

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        n = len(self.tokens)
        if n < 4:
            raise InvalidConfig(f"vocab needs at least 4 entries, got {n}")
        ids = (self.blank_id, self.sos_id, self.eos_id)
        if len(set(ids)) != 3:
            raise InvalidConfig("blank_id, sos_id and eos_id must be distinct")
        if any(not 0 <= i < n for i in ids):
            raise InvalidConfig("special token id out of range")

    @classmethod
    def default(cls, n_words: int = 28) -> "Vocab":
        words = tuple(f"w{i:02d}" for i in range(n_words))
        return cls(("<blank>", "<sos>", "<eos>") + words)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def word_ids(self) -> tuple[int, ...]:
        special = {self.blank_id, self.sos_id, self.eos_id}
        return tuple(i for i in range(len(self.tokens)) if i not in special)

    def to_dict(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "blank_id": self.blank_id,
            "sos_id": self.sos_id,
            "eos_id": self.eos_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(tuple(d["tokens"]), d["blank_id"], d["sos_id"], d["eos_id"])


@dataclass(frozen=True, eq=False)
class EmissionLattice:
    frames: np.ndarray
    frame_duration: float = FRAME_DURATION

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise InvalidUtterance(f"lattice must be a non-empty T x V matrix, got {frames.shape}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def V(self) -> int:
        return self.frames.shape[1]

    @property
    def duration_s(self) -> float:
        return self.T * self.frame_duration

    def prefix(self, n_frames: int) -> "EmissionLattice":
        n_frames = max(1, min(int(n_frames), self.T))
        return EmissionLattice(self.frames[:n_frames], self.frame_duration)

    def row_norms(self) -> np.ndarray:
        return logsumexp(self.frames, axis=1)

    @classmethod
    def from_probs(cls, probs, frame_duration: float = FRAME_DURATION) -> "EmissionLattice":
        probs = np.asarray(probs, dtype=np.float64)
        probs = probs / probs.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore"):
            return cls(np.log(probs), frame_duration)


@dataclass(frozen=True)
class SyntheticUtterance:
    truth: tuple[int, ...]
    alignment: tuple[int, ...]
    noise_level: float
    duration_s: float
    frame_duration: float = FRAME_DURATION

    def __post_init__(self):
        object.__setattr__(self, "truth", tuple(int(t) for t in self.truth))
        object.__setattr__(self, "alignment", tuple(int(a) for a in self.alignment))

    @property
    def n_frames(self) -> int:
        return max(1, int(round(self.duration_s / self.frame_duration)))

    def validate(self, vocab: Vocab) -> None:
        if not self.truth:
            raise InvalidUtterance("truth must be non-empty")
        if len(self.alignment) != len(self.truth):
            raise InvalidUtterance("alignment and truth lengths differ")
        if not 0.0 <= self.noise_level <= 1.0:
            raise InvalidUtterance(f"noise_level {self.noise_level} outside [0, 1]")
        words = set(vocab.word_ids)
        if any(t not in words for t in self.truth):
            raise InvalidUtterance("truth contains a non-word token")
        a = self.alignment
        if a[0] < 0 or a[-1] >= self.n_frames:
            raise InvalidUtterance(f"alignment {a[0]}..{a[-1]} outside [0, {self.n_frames})")
        for prev, nxt, tp, tn in zip(a, a[1:], self.truth, self.truth[1:]):
            if nxt <= prev:
                raise InvalidUtterance("alignment must be strictly increasing")
            if tp == tn and nxt == prev + 1:
                raise InvalidUtterance("repeated token needs a blank frame between emissions")

    def visible_truth(self, n_frames: int) -> tuple[int, ...]:
        """Truth tokens whose emission frame lies in the first ``n_frames``."""
        return tuple(t for t, a in zip(self.truth, self.alignment) if a < n_frames)

    def to_dict(self) -> dict:
        return {
            "truth": list(self.truth),
            "alignment": list(self.alignment),
            "noise_level": self.noise_level,
            "duration_s": self.duration_s,
        }

    @classmethod
    def from_dict(cls, d: dict, frame_duration: float = FRAME_DURATION) -> "SyntheticUtterance":
        return cls(
            tuple(d["truth"]),
            tuple(d["alignment"]),
            float(d["noise_level"]),
            float(d["duration_s"]),
            frame_duration,
        )


def make_lattice(utt: SyntheticUtterance, vocab: Vocab, seed: int) -> EmissionLattice:
    """Render ``utt`` into a normalized emission lattice.

    Each row is ``(1 - w) * clean + w * noise``, where ``clean`` peaks on the
    aligned token (or blank between tokens) and ``noise`` is a seeded
    Dirichlet draw over blank and the word tokens.  ``w`` is
    ``utt.noise_level`` on token frames and ``BLANK_NOISE`` times that on blank
    frames, so noise mostly confuses tokens rather than inventing them.
    """
    utt.validate(vocab)
    T, V = utt.n_frames, vocab.size
    rng = np.random.default_rng([int(seed), 0x1A7])

    floor_ids = [i for i in range(V) if i != vocab.blank_id]
    clean = np.zeros((T, V))
    rest = 1.0 - BLANK_PEAK
    clean[:, floor_ids] = rest / len(floor_ids)
    clean[:, vocab.blank_id] = BLANK_PEAK
    tok_rest = (1.0 - TOKEN_PEAK - BLANK_BIAS) / (V - 2)
    for tok, t in zip(utt.truth, utt.alignment):
        clean[t, :] = tok_rest
        clean[t, tok] = TOKEN_PEAK
        clean[t, vocab.blank_id] = BLANK_BIAS

    noisy_ids = [vocab.blank_id, *vocab.word_ids]
    noise = np.zeros((T, V))
    noise[:, noisy_ids] = rng.dirichlet(np.full(len(noisy_ids), NOISE_CONCENTRATION), size=T)
    # keep every entry strictly positive so log rows stay finite
    noise = 0.999 * noise + 0.001 / V

    w = np.full((T, 1), BLANK_NOISE * float(utt.noise_level))
    w[list(utt.alignment)] = float(utt.noise_level)
    probs = (1.0 - w) * clean + w * noise
    probs /= probs.sum(axis=1, keepdims=True)
    logp = np.log(probs)
    logp -= logsumexp(logp, axis=1, keepdims=True)
    return EmissionLattice(logp, utt.frame_duration)


def greedy_ctc(lattice: EmissionLattice, blank_id: int = 0) -> tuple[int, ...]:
    """Per-frame argmax followed by the standard CTC collapse."""
    return ctc_collapse(np.argmax(lattice.frames, axis=1), blank_id)


def ctc_collapse(path: Sequence[int], blank_id: int = 0) -> tuple[int, ...]:
    out = []
    prev = None
    for p in path:
        p = int(p)
        if p != prev and p != blank_id:
            out.append(p)
        prev = p
    return tuple(out)


@dataclass(frozen=True)
class CorpusConfig:
    n: int = 100
    difficulty_mix: tuple[tuple[float, float], ...] = ((0.2, 1.0),)
    duration_range: tuple[float, float] = (2.0, 6.0)
    token_rate: float = DEFAULT_TOKEN_RATE
    n_words: int = 28
    frame_duration: float = FRAME_DURATION
    seed: int = 0

    def __post_init__(self):
        mix = tuple((float(a), float(b)) for a, b in self.difficulty_mix)
        object.__setattr__(self, "difficulty_mix", mix)
        object.__setattr__(self, "duration_range", tuple(float(d) for d in self.duration_range))


def _split_counts(n: int, fractions: Sequence[float]) -> list[int]:
    # largest-remainder apportionment: exact when n * fraction is integral
    raw = [n * f for f in fractions]
    counts = [math.floor(r) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def gen_corpus(
    n: int,
    difficulty_mix: Sequence[tuple[float, float]],
    seed: int,
    vocab: Vocab | None = None,
    duration_range: tuple[float, float] = (2.0, 6.0),
    token_rate: float = DEFAULT_TOKEN_RATE,
    frame_duration: float = FRAME_DURATION,
) -> list[SyntheticUtterance]:
    """Generate ``n`` utterances split across noise levels by ``difficulty_mix``.

    Utterances are grouped by difficulty class in mix order.  Token counts
    scale with duration at ``token_rate`` tokens/s (jittered by +-20%).
    """
    if not difficulty_mix:
        raise InvalidConfig("difficulty_mix: must contain at least one (noise_level, fraction) pair")
    fractions = [float(f) for _, f in difficulty_mix]
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidConfig(f"difficulty_mix: fractions must sum to 1, got {sum(fractions)!r}")
    for noise, _ in difficulty_mix:
        if not 0.0 <= noise <= 1.0:
            raise InvalidConfig(f"difficulty_mix: noise level {noise} outside [0, 1]")
    lo, hi = duration_range
    if not 0 < lo <= hi:
        raise InvalidConfig(f"duration_range: invalid range {duration_range}")
    if n < 0:
        raise InvalidConfig("n: must be nonnegative")
    vocab = vocab or Vocab.default()
    words = np.array(vocab.word_ids)
    rng = np.random.default_rng([int(seed), 0xC0B])

    utts = []
    for (noise, _), count in zip(difficulty_mix, _split_counts(n, fractions)):
        for _ in range(count):
            T = max(3, int(round(rng.uniform(lo, hi) / frame_duration)))
            duration = T * frame_duration
            # one free frame at each end, at least one blank between tokens
            max_tokens = (T - 1) // 2
            n_tok = int(round(duration * token_rate * rng.uniform(0.8, 1.2)))
            n_tok = min(max(n_tok, 1), max_tokens)
            truth = tuple(int(w) for w in rng.choice(words, size=n_tok))
            slots = np.sort(rng.choice(T - 1 - n_tok, size=n_tok, replace=False))
            # slot i -> frame 1 + slot + i keeps a gap of at least one frame
            alignment = tuple(int(1 + s + i) for i, s in enumerate(slots))
            utts.append(SyntheticUtterance(truth, alignment, float(noise), duration, frame_duration))
    return utts
