"""Pilot-aided hybrid CTC/attention decoding and edge/cloud pipeline simulation."""

from pilotdec.errors import (
    ConfigError,
    InvalidConfig,
    InvalidReference,
    InvalidState,
    InvalidToken,
    InvalidUtterance,
    NoReference,
    PilotDecError,
    ShapeError,
    TooLarge,
)
from pilotdec.lattice import EmissionLattice, SyntheticUtterance, Vocab, gen_corpus, make_lattice

__all__ = [
    "ConfigError",
    "EmissionLattice",
    "InvalidConfig",
    "InvalidReference",
    "InvalidState",
    "InvalidToken",
    "InvalidUtterance",
    "NoReference",
    "PilotDecError",
    "ShapeError",
    "SyntheticUtterance",
    "TooLarge",
    "Vocab",
    "gen_corpus",
    "make_lattice",
]

__version__ = "0.1.0"
