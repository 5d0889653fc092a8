"""Pilot decodes of the growing partial input during ingestion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from pilotdec.beam import BeamConfig, PilotReference, beam_search, reference_from
from pilotdec.errors import InvalidConfig
from pilotdec.lattice import EmissionLattice, Vocab
from pilotdec.scorer import AttnScorer


@dataclass(frozen=True)
class PilotConfig:
    granularity_s: float = 1.0
    min_partial_s: float = 1.5
    beam_width: int = 3
    token_limit: int = 15
    # "absolute" uses token_limit; "ratio" uses ceil(length_ratio * avg_full_tokens)
    length_mode: str = "absolute"
    length_ratio: float = 0.7
    avg_full_tokens: float = 10.0
    growth: float = 1.0
    incremental: bool = True
    leap_q: float = 1.0

    def __post_init__(self):
        if self.granularity_s <= 0:
            raise InvalidConfig("pilot.granularity_s must be > 0")
        if self.min_partial_s < 0:
            raise InvalidConfig("pilot.min_partial_s must be >= 0")
        if self.beam_width < 1:
            raise InvalidConfig("pilot.beam_width must be >= 1")
        if self.token_limit < 1:
            raise InvalidConfig("pilot.token_limit must be >= 1")
        if self.length_mode not in ("absolute", "ratio"):
            raise InvalidConfig(f"pilot.length_mode must be 'absolute' or 'ratio', got {self.length_mode!r}")
        if self.growth < 1.0:
            raise InvalidConfig("pilot.growth must be >= 1")
        if not 0.5 <= self.leap_q <= 1.0:
            raise InvalidConfig("pilot.leap_q must lie in [0.5, 1]")

    @property
    def max_tokens(self) -> int:
        if self.length_mode == "ratio":
            return max(1, math.ceil(self.length_ratio * self.avg_full_tokens))
        return self.token_limit


@dataclass(frozen=True)
class PilotRun:
    start_s: float
    end_s: float
    partial_len_s: float
    reference: PilotReference

    def to_dict(self) -> dict:
        ref = self.reference
        return {
            "start_s": self.start_s,
            "end_s": self.end_s,
            "partial_len_s": self.partial_len_s,
            "pilot_index": ref.pilot_index,
            "tokens": list(ref.tokens),
            "token_logps": list(ref.token_logps),
            "attn_evals": ref.nfe.attn_evals,
            "ctc_frames_scored": ref.nfe.ctc_frames_scored,
        }


@dataclass
class PilotTrace:
    runs: list[PilotRun] = field(default_factory=list)
    dropped: int = 0
    infeasible: bool = False

    @property
    def last(self) -> PilotReference | None:
        return self.runs[-1].reference if self.runs else None

    def to_dict(self) -> dict:
        return {
            "runs": [r.to_dict() for r in self.runs],
            "dropped": self.dropped,
            "infeasible": self.infeasible,
        }


def schedule_pilots(duration_s: float, cfg: PilotConfig) -> list[float]:
    """Trigger times ``min_partial_s, +dt, +dt*growth, ...`` strictly before the end."""
    if duration_s <= 0:
        raise InvalidConfig("duration_s must be > 0")
    times = []
    i = 0
    while True:
        if cfg.growth == 1.0:
            offset = i * cfg.granularity_s
        else:
            offset = cfg.granularity_s * (cfg.growth**i - 1.0) / (cfg.growth - 1.0)
        t = round(cfg.min_partial_s + offset, 9)
        if t >= duration_s - 1e-9:
            return times
        times.append(t)
        i += 1


def pilot_beam_config(cfg: PilotConfig, beam: BeamConfig, with_prev: bool) -> BeamConfig:
    inc = cfg.incremental and with_prev
    return replace(
        beam,
        beam_width=cfg.beam_width,
        max_tokens=cfg.max_tokens,
        collapse=inc,
        leap=inc,
        leap_q=cfg.leap_q,
        early_term=False,
    )


def run_pilot(
    partial: EmissionLattice,
    scorer: AttnScorer,
    vocab: Vocab,
    cfg: PilotConfig,
    beam: BeamConfig | None = None,
    prev: PilotReference | None = None,
    pilot_index: int = 0,
) -> PilotReference:
    """Narrow-beam decode of a partial lattice.

    With ``prev`` and ``cfg.incremental`` the previous reference drives beam
    collapse and CTC leap, exactly as it would for a full decode.
    """
    bcfg = pilot_beam_config(cfg, beam or BeamConfig(), prev is not None)
    result = beam_search(partial, scorer, vocab, bcfg, reference=prev if bcfg.collapse else None, keep_expansions=True)
    return reference_from(result, partial, pilot_index)
