"""Run configuration: every module config plus seeds, loaded from JSON.

Config file schema (all sections and keys optional, unknown keys rejected)::

    {
      "seed": 0,
      "corpus":  {"n", "difficulty_mix": [[noise, fraction], ...], "duration_range",
                  "token_rate", "n_words", "frame_duration", "seed"},
      "beam":    {"beam_width", "lam", "max_tokens", "end_detect_margin", "collapse",
                  "early_term", "early_term_c", "leap", "leap_q"},
      "pilot":   {"granularity_s", "min_partial_s", "beam_width", "token_limit",
                  "length_mode", "length_ratio", "avg_full_tokens", "growth",
                  "incremental", "leap_q"},
      "offramp": {"mode", "theta", "alpha", "prob_source", "fallback_offload"},
      "encoder": {"conv_layers", "kernel", "attn_layers", "dim", "seed", "conv_gain",
                  "attn_gain", "ctc_gain"},
      "cost":    {"attn_eval_s", "ctc_frame_s", "conv_frame_s", "attn_frame2_s"},
      "network": {"rtt_s", "rtt_jitter_s", "upload_s_per_kb", "audio_kb_per_s",
                  "cloud_compute_s", "cloud_jitter_s"},
      "cloud":   {"residual_error"},
      "sim":     {"fidelity", "fidelity_noise_slope", "lattice_mode",
                  "pilot_perturbation", "segment_s", "run_pilots"}
    }

Infinite thresholds are written as the string ``"inf"``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from pilotdec.beam import BeamConfig
from pilotdec.encoder import EncoderConfig
from pilotdec.errors import InvalidConfig
from pilotdec.lattice import CorpusConfig
from pilotdec.offramp import OfframpConfig
from pilotdec.pilot import PilotConfig
from pilotdec.sim import CloudModel, CostModel, NetworkModel, PipelineConfig, SimConfig

SECTIONS = {
    "corpus": CorpusConfig,
    "beam": BeamConfig,
    "pilot": PilotConfig,
    "offramp": OfframpConfig,
    "encoder": EncoderConfig,
    "cost": CostModel,
    "network": NetworkModel,
    "cloud": CloudModel,
    "sim": SimConfig,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    beam: BeamConfig = field(default_factory=BeamConfig)
    pilot: PilotConfig = field(default_factory=PilotConfig)
    offramp: OfframpConfig = field(default_factory=OfframpConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    cost: CostModel = field(default_factory=CostModel)
    network: NetworkModel = field(default_factory=NetworkModel)
    cloud: CloudModel = field(default_factory=CloudModel)
    sim: SimConfig = field(default_factory=SimConfig)

    @property
    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(
            beam=self.beam,
            pilot=self.pilot,
            offramp=self.offramp,
            encoder=self.encoder,
            cost=self.cost,
            network=self.network,
            cloud=self.cloud,
            sim=self.sim,
        )

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise InvalidConfig("config must be a JSON object")
        unknown = set(d) - {"seed", *SECTIONS}
        if unknown:
            raise InvalidConfig(f"unknown config key(s): {', '.join(sorted(unknown))}")
        kwargs = {}
        if "seed" in d:
            kwargs["seed"] = _int("seed", d["seed"])
        for name, typ in SECTIONS.items():
            if name in d:
                kwargs[name] = _section(name, typ, d[name])
        return cls(**kwargs)

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)


def _int(name, v) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise InvalidConfig(f"{name}: expected an integer, got {v!r}")
    return v


def _section(name: str, typ, values):
    if not isinstance(values, dict):
        raise InvalidConfig(f"{name}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(typ)}
    unknown = set(values) - set(fields)
    if unknown:
        raise InvalidConfig(f"unknown config key(s) in {name}: {', '.join(name + '.' + k for k in sorted(unknown))}")
    kwargs = {}
    for k, v in values.items():
        if v == "inf":
            v = math.inf
        elif isinstance(v, list):
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        kwargs[k] = v
    try:
        return typ(**kwargs)
    except InvalidConfig as exc:
        msg = str(exc)
        raise InvalidConfig(msg if msg.startswith(name) else f"{name}: {msg}") from None
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"{name}: {exc}") from None


def _jsonable(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config {path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(data)
