"""Corpus file format.

A corpus is a JSON object::

    {
      "format": "pilotdec.corpus/v1",
      "seed": <int>,
      "frame_duration": <seconds per frame>,
      "vocab": {"tokens": [...], "blank_id": 0, "sos_id": 1, "eos_id": 2},
      "utterances": [
        {"truth": [ids], "alignment": [frames], "noise_level": <0..1>, "duration_s": <s>},
        ...
      ],
      "lattices": [ [[log-probs per token] per frame] per utterance ]   # optional
    }

Keys are written sorted and floats with ``repr`` precision, so equal inputs
give byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from pilotdec.errors import InvalidConfig
from pilotdec.lattice import FRAME_DURATION, EmissionLattice, SyntheticUtterance, Vocab

FORMAT = "pilotdec.corpus/v1"


def corpus_to_dict(
    utts: Sequence[SyntheticUtterance],
    vocab: Vocab,
    seed: int,
    lattices: Sequence[EmissionLattice] | None = None,
) -> dict:
    fd = utts[0].frame_duration if utts else FRAME_DURATION
    doc = {
        "format": FORMAT,
        "seed": seed,
        "frame_duration": fd,
        "vocab": vocab.to_dict(),
        "utterances": [u.to_dict() for u in utts],
    }
    if lattices is not None:
        doc["lattices"] = [lat.frames.tolist() for lat in lattices]
    return doc


def write_corpus(path, utts, vocab, seed, lattices=None) -> None:
    doc = corpus_to_dict(utts, vocab, seed, lattices)
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def read_corpus(path) -> tuple[list[SyntheticUtterance], Vocab, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise InvalidConfig(f"{path}: not a {FORMAT} corpus file")
    vocab = Vocab.from_dict(doc["vocab"])
    fd = float(doc.get("frame_duration", FRAME_DURATION))
    utts = [SyntheticUtterance.from_dict(u, fd) for u in doc["utterances"]]
    for u in utts:
        u.validate(vocab)
    return utts, vocab, doc
