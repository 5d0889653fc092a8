"""Offload decision at the end of ingestion.

The decision only sees the latest pilot reference (plus the decision time and
a random draw for the naive baseline).  Nothing from the full local decode is
reachable from here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pilotdec.beam import PilotReference
from pilotdec.errors import InvalidConfig, NoReference

MODES = ("perplexity", "naive", "always_local", "always_offload")


@dataclass(frozen=True)
class OfframpConfig:
    mode: str = "perplexity"
    theta: float = math.inf
    alpha: float = 1.0
    # per-token probabilities: "combined" (beam ranking score) or "attn"
    prob_source: str = "combined"
    # path taken when no usable pilot reference exists
    fallback_offload: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfig(f"offramp.mode must be one of {MODES}, got {self.mode!r}")
        if not self.theta > 0:
            raise InvalidConfig("offramp.theta must be > 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidConfig("offramp.alpha must lie in [0, 1]")
        if self.prob_source not in ("combined", "attn"):
            raise InvalidConfig("offramp.prob_source must be 'combined' or 'attn'")


@dataclass(frozen=True)
class OffloadDecision:
    offload: bool
    perplexity: float | None
    decided_at_s: float
    basis: int | None

    def to_dict(self) -> dict:
        return {
            "offload": self.offload,
            "perplexity": self.perplexity,
            "decided_at_s": self.decided_at_s,
            "basis": self.basis,
        }


def perplexity_of(logps) -> float:
    logps = np.asarray(logps, dtype=float)
    if logps.size == 0:
        raise NoReference("no token log-probabilities to score")
    return float(math.exp(-float(np.mean(logps))))


def perplexity(ref: PilotReference | None, prob_source: str = "combined") -> float:
    """``exp`` of the negative mean per-token log-probability of the reference."""
    if ref is None or ref.n_tokens == 0:
        raise NoReference("pilot reference is missing or empty")
    logps = ref.token_logps if prob_source == "combined" else ref.attn_token_logps
    return perplexity_of(logps)


def decide(
    ref: PilotReference | None,
    cfg: OfframpConfig,
    draw: float | np.random.Generator | None = None,
    decided_at_s: float = 0.0,
) -> OffloadDecision:
    """Route one input.

    ``draw`` is the naive baseline's uniform sample in [0, 1) (or a generator
    to take one from); the input stays local iff ``draw < alpha``.
    """
    basis = ref.pilot_index if ref is not None else None
    try:
        ppl = perplexity(ref, cfg.prob_source)
    except NoReference:
        ppl = None

    if cfg.mode == "always_local":
        offload = False
    elif cfg.mode == "always_offload":
        offload = True
    elif cfg.mode == "naive":
        if isinstance(draw, np.random.Generator):
            draw = float(draw.random())
        if draw is None:
            raise InvalidConfig("naive mode needs a random draw")
        offload = not draw < cfg.alpha
    elif ppl is None:
        offload = cfg.fallback_offload
    else:
        offload = ppl > cfg.theta
    return OffloadDecision(offload, ppl, decided_at_s, basis)
