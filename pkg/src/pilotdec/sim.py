"""Deterministic simulated-clock model of the on-device pipeline.

Time ``0`` is the start of ingestion and ``duration_s`` its end.  The device
is a single FIFO server: streaming convolution segments and pilot decodes are
released during ingestion and queue behind one another.  At ingestion end the
offramp routes the input either to the local path (wait for the device, run
the attention encoder stage, decode) or to the cloud (upload, round trip,
cloud compute).  User latency is measured from ingestion end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from pilotdec.beam import BeamConfig, DecodeResult, PilotReference, beam_search
from pilotdec.encoder import Encoder, EncoderConfig, features_from_lattice
from pilotdec.errors import InvalidConfig, NoReference
from pilotdec.lattice import EmissionLattice, SyntheticUtterance, Vocab, make_lattice
from pilotdec.metrics import wer
from pilotdec.offramp import OfframpConfig, OffloadDecision, decide, perplexity
from pilotdec.pilot import PilotConfig, PilotRun, PilotTrace, run_pilot, schedule_pilots
from pilotdec.scorer import NfeReport, TeacherScorer


@dataclass(frozen=True)
class CostModel:
    attn_eval_s: float = 0.01
    ctc_frame_s: float = 5e-5  # per hypothesis per frame, all candidates at once
    conv_frame_s: float = 1e-3
    attn_frame2_s: float = 3e-7  # per attention layer per frame**2

    def __post_init__(self):
        if min(self.attn_eval_s, self.ctc_frame_s, self.conv_frame_s, self.attn_frame2_s) < 0:
            raise InvalidConfig("cost model entries must be >= 0")

    def decode_s(self, nfe: NfeReport) -> float:
        return nfe.attn_evals * self.attn_eval_s + nfe.ctc_frames_scored * self.ctc_frame_s

    def attention_s(self, n_frames: int, attn_layers: int) -> float:
        return attn_layers * n_frames * n_frames * self.attn_frame2_s

    def scaled(self, factor: float) -> "CostModel":
        return CostModel(*(getattr(self, f) * factor for f in ("attn_eval_s", "ctc_frame_s", "conv_frame_s", "attn_frame2_s")))


@dataclass(frozen=True)
class NetworkModel:
    rtt_s: float = 0.25
    rtt_jitter_s: float = 0.1
    upload_s_per_kb: float = 0.004
    audio_kb_per_s: float = 32.0
    cloud_compute_s: float = 0.15
    cloud_jitter_s: float = 0.05

    def __post_init__(self):
        vals = (self.rtt_s, self.rtt_jitter_s, self.upload_s_per_kb, self.audio_kb_per_s, self.cloud_compute_s, self.cloud_jitter_s)
        if min(vals) < 0:
            raise InvalidConfig("network model entries must be >= 0")

    def sample(self, duration_s: float, rng: np.random.Generator) -> tuple[float, float, float]:
        """(upload, rtt, cloud compute) seconds for one input."""
        upload = duration_s * self.audio_kb_per_s * self.upload_s_per_kb
        rtt = self.rtt_s + self.rtt_jitter_s * float(rng.random())
        cloud = self.cloud_compute_s + self.cloud_jitter_s * float(rng.random())
        return upload, rtt, cloud


@dataclass(frozen=True)
class CloudModel:
    residual_error: float = 0.02  # per-token substitution rate of the cloud model

    def __post_init__(self):
        if not 0.0 <= self.residual_error <= 1.0:
            raise InvalidConfig("cloud.residual_error must lie in [0, 1]")

    def transcribe(self, utt: SyntheticUtterance, vocab: Vocab, rng: np.random.Generator) -> tuple[int, ...]:
        words = vocab.word_ids
        out = []
        for t in utt.truth:
            if rng.random() < self.residual_error:
                t = words[(words.index(t) + 1 + int(rng.integers(len(words) - 1))) % len(words)]
            out.append(t)
        return tuple(out)


@dataclass(frozen=True)
class SimConfig:
    fidelity: float = 0.9
    # teacher fidelity drops by this much per unit of lattice noise
    fidelity_noise_slope: float = 1.0
    lattice_mode: str = "teacher"
    pilot_perturbation: float = 0.02
    segment_s: float = 0.2
    run_pilots: bool = True

    def __post_init__(self):
        if not 0.0 <= self.fidelity <= 1.0:
            raise InvalidConfig("sim.fidelity must lie in [0, 1]")
        if self.lattice_mode not in ("teacher", "encoder"):
            raise InvalidConfig("sim.lattice_mode must be 'teacher' or 'encoder'")
        if not 0.0 <= self.pilot_perturbation <= 1.0:
            raise InvalidConfig("sim.pilot_perturbation must lie in [0, 1]")
        if self.segment_s <= 0:
            raise InvalidConfig("sim.segment_s must be > 0")

    def fidelity_for(self, noise_level: float) -> float:
        return float(min(1.0, max(0.0, self.fidelity - self.fidelity_noise_slope * noise_level)))


@dataclass(frozen=True)
class PipelineConfig:
    beam: BeamConfig = field(default_factory=BeamConfig)
    pilot: PilotConfig = field(default_factory=PilotConfig)
    offramp: OfframpConfig = field(default_factory=OfframpConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    cost: CostModel = field(default_factory=CostModel)
    network: NetworkModel = field(default_factory=NetworkModel)
    cloud: CloudModel = field(default_factory=CloudModel)
    sim: SimConfig = field(default_factory=SimConfig)


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def lattice_seed(seed: int, index: int) -> int:
    """Seed of the rendered lattice for utterance ``index`` of a run."""
    return _seed(seed, index, 0x1A7)


@dataclass(eq=False)
class UtterancePaths:
    """Both execution paths of one input, computed before any routing."""

    index: int
    utt: SyntheticUtterance
    trace: PilotTrace
    decision_ref: PilotReference | None
    local: DecodeResult
    local_wait_s: float
    local_encode_s: float
    local_decode_s: float
    local_wer: float
    upload_s: float
    rtt_s: float
    cloud_s: float
    cloud_tokens: tuple[int, ...]
    cloud_wer: float
    naive_draw: float

    @property
    def duration_s(self) -> float:
        return self.utt.duration_s

    @property
    def local_latency_s(self) -> float:
        return self.local_wait_s + self.local_encode_s + self.local_decode_s

    @property
    def offload_latency_s(self) -> float:
        return self.upload_s + self.rtt_s + self.cloud_s


def _perturb(lattice: EmissionLattice, weight: float, seed: int) -> EmissionLattice:
    if weight <= 0:
        return lattice
    rng = np.random.default_rng(seed)
    noise = rng.dirichlet(np.ones(lattice.V), size=lattice.T)
    probs = (1.0 - weight) * np.exp(lattice.frames) + weight * noise
    return EmissionLattice.from_probs(probs, lattice.frame_duration)


class _LatticeSource:
    """Full and partial lattices for one utterance in teacher or encoder mode."""

    def __init__(self, utt, vocab, cfg: PipelineConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.teacher = make_lattice(utt, vocab, seed)
        if cfg.sim.lattice_mode == "encoder":
            enc_cfg = replace(cfg.encoder, dim=vocab.size)
            self.encoder = Encoder(enc_cfg, vocab)
            seg = max(1, int(round(cfg.sim.segment_s / utt.frame_duration)))
            self.conv = self.encoder.encode_streaming(features_from_lattice(self.teacher), seg)
            self.full = self.encoder.project_ctc(self.encoder.contextualize(self.conv))
        else:
            self.encoder = None
            self.full = self.teacher

    def partial(self, n_frames: int, pilot_index: int) -> EmissionLattice:
        if self.encoder is not None:
            return self.encoder.project_ctc(self.encoder.contextualize(self.conv[:n_frames]))
        return _perturb(self.teacher.prefix(n_frames), self.cfg.sim.pilot_perturbation, _seed(self.seed, 0x9E, pilot_index))


def _pilot_cost(ref: PilotReference, cfg: PipelineConfig) -> float:
    return cfg.cost.attention_s(ref.partial_frames, cfg.encoder.attn_layers) + cfg.cost.decode_s(ref.nfe)


def run_pilot_timeline(
    utt: SyntheticUtterance,
    src: _LatticeSource,
    scorer: TeacherScorer,
    vocab: Vocab,
    cfg: PipelineConfig,
) -> tuple[PilotTrace, float]:
    """Play ingestion on the FIFO device; returns the trace and device-free time.

    Conv segments are released at the end of each segment, pilots at their
    trigger times.  A pilot that cannot start before ingestion ends is dropped;
    a pilot whose cost exceeds its interval (or a dropped one) marks the
    configuration infeasible.  Overruns are never cancelled, they delay
    whatever is queued behind them.
    """
    D = utt.duration_s
    fd = utt.frame_duration
    T = utt.n_frames
    tasks = []  # (release, kind, payload)
    seg_frames = max(1, int(round(cfg.sim.segment_s / fd)))
    for s in range(0, T, seg_frames):
        n = min(seg_frames, T - s)
        tasks.append((round((s + n) * fd, 9), 0, n))
    triggers = schedule_pilots(D, cfg.pilot) if cfg.sim.run_pilots else []
    for i, t in enumerate(triggers):
        interval = cfg.pilot.granularity_s * cfg.pilot.growth**i
        tasks.append((t, 1, (i, interval)))
    tasks.sort(key=lambda x: (x[0], x[1]))

    trace = PilotTrace()
    free = 0.0
    prev = None
    for release, kind, payload in tasks:
        start = max(release, free)
        if kind == 0:
            free = start + payload * cfg.cost.conv_frame_s
            continue
        i, interval = payload
        if start >= D - 1e-12:
            trace.dropped += 1
            trace.infeasible = True
            continue
        n_frames = max(1, int(math.floor(release / fd + 1e-9)))
        partial = src.partial(n_frames, i)
        ref = run_pilot(partial, scorer, vocab, cfg.pilot, cfg.beam, prev, pilot_index=i)
        cost = _pilot_cost(ref, cfg)
        if cost > interval + 1e-12:
            trace.infeasible = True
        free = start + cost
        trace.runs.append(PilotRun(start, free, partial.duration_s, ref))
        prev = ref
    return trace, free


def simulate_paths(utt: SyntheticUtterance, index: int, vocab: Vocab, cfg: PipelineConfig, seed: int) -> UtterancePaths:
    """Run pilots, the local decode and the cloud model for one input."""
    lat_seed = lattice_seed(seed, index)
    src = _LatticeSource(utt, vocab, cfg, lat_seed)
    scorer = TeacherScorer(utt, cfg.sim.fidelity_for(utt.noise_level), vocab, _seed(seed, index, 0x5C0))

    trace, free = run_pilot_timeline(utt, src, scorer, vocab, cfg)
    D = utt.duration_s
    done_by_end = [r for r in trace.runs if r.end_s <= D + 1e-12]
    decision_ref = done_by_end[-1].reference if done_by_end else None

    local_start = max(D, free)
    full_ref = trace.last
    result = beam_search(src.full, scorer, vocab, cfg.beam, reference=full_ref)
    encode_s = cfg.cost.attention_s(src.full.T, cfg.encoder.attn_layers)
    decode_s = cfg.cost.decode_s(result.nfe)

    rng = np.random.default_rng(_seed(seed, index, 0x7E7))
    upload, rtt, cloud = cfg.network.sample(D, rng)
    cloud_tokens = cfg.cloud.transcribe(utt, vocab, rng)
    naive_draw = float(np.random.default_rng(_seed(seed, index, 0xA1)).random())

    return UtterancePaths(
        index=index,
        utt=utt,
        trace=trace,
        decision_ref=decision_ref,
        local=result,
        local_wait_s=local_start - D,
        local_encode_s=encode_s,
        local_decode_s=decode_s,
        local_wer=wer(utt.truth, result.tokens),
        upload_s=upload,
        rtt_s=rtt,
        cloud_s=cloud,
        cloud_tokens=cloud_tokens,
        cloud_wer=wer(utt.truth, cloud_tokens),
        naive_draw=naive_draw,
    )


def route(paths: UtterancePaths, offramp: OfframpConfig) -> OffloadDecision:
    return decide(paths.decision_ref, offramp, paths.naive_draw, decided_at_s=paths.duration_s)


def report_row(paths: UtterancePaths, decision: OffloadDecision) -> dict:
    """Per-utterance latency report for the chosen path."""
    if decision.offload:
        latency = paths.offload_latency_s
        tokens, w = paths.cloud_tokens, paths.cloud_wer
    else:
        latency = paths.local_latency_s
        tokens, w = paths.local.tokens, paths.local_wer
    D = paths.duration_s
    nfe = paths.local.nfe
    pilot_attn = sum(r.reference.nfe.attn_evals for r in paths.trace.runs)
    return {
        "index": paths.index,
        "duration_s": D,
        "noise_level": paths.utt.noise_level,
        "n_pilots": len(paths.trace.runs),
        "pilots_dropped": paths.trace.dropped,
        "infeasible": paths.trace.infeasible,
        "offload": decision.offload,
        "perplexity": decision.perplexity,
        "decided_at_s": decision.decided_at_s,
        "basis": decision.basis,
        "local_wait_s": paths.local_wait_s,
        "local_encode_s": paths.local_encode_s,
        "local_decode_s": paths.local_decode_s,
        "upload_s": paths.upload_s,
        "rtt_s": paths.rtt_s,
        "cloud_s": paths.cloud_s,
        "user_latency_s": latency,
        "rtf": latency / D,
        "wer": w,
        "local_wer": paths.local_wer,
        "attn_evals": nfe.attn_evals,
        "ctc_frames_scored": nfe.ctc_frames_scored,
        "decode_rounds": nfe.decode_rounds,
        "collapse_hits": paths.local.collapse_hits,
        "pilot_attn_evals": pilot_attn,
        "truth": list(paths.utt.truth),
        "output": list(tokens),
        "pilots": paths.trace.to_dict()["runs"],
    }


def simulate_utterance(
    utt: SyntheticUtterance, index: int, vocab: Vocab, cfg: PipelineConfig, seed: int
) -> dict:
    paths = simulate_paths(utt, index, vocab, cfg, seed)
    return report_row(paths, route(paths, cfg.offramp))


AGGREGATE_COLUMNS = (
    "label",
    "mode",
    "theta",
    "alpha",
    "tau_s",
    "n",
    "offload_frac",
    "mean_wer",
    "mean_latency_s",
    "p90_latency_s",
    "mean_rtf",
    "mean_local_decode_s",
    "local_attn_evals",
    "local_ctc_frames",
    "pilot_attn_evals",
    "infeasible",
)


def aggregate(rows: Sequence[dict], label: str, offramp: OfframpConfig, tau_s: float) -> dict:
    lat = np.array([r["user_latency_s"] for r in rows])
    local = [r for r in rows if not r["offload"]]
    return {
        "label": label,
        "mode": offramp.mode,
        "theta": offramp.theta,
        "alpha": offramp.alpha,
        "tau_s": tau_s,
        "n": len(rows),
        "offload_frac": float(np.mean([r["offload"] for r in rows])),
        "mean_wer": float(np.mean([r["wer"] for r in rows])),
        "mean_latency_s": float(lat.mean()),
        "p90_latency_s": float(np.percentile(lat, 90)),
        "mean_rtf": float(np.mean([r["rtf"] for r in rows])),
        "mean_local_decode_s": float(np.mean([r["local_encode_s"] + r["local_decode_s"] for r in rows])),
        "local_attn_evals": int(sum(r["attn_evals"] for r in local)),
        "local_ctc_frames": int(sum(r["ctc_frames_scored"] for r in local)),
        "pilot_attn_evals": int(sum(r["pilot_attn_evals"] for r in rows)),
        "infeasible": int(sum(r["infeasible"] for r in rows)),
    }


def simulate_corpus(
    corpus: Sequence[SyntheticUtterance], vocab: Vocab, cfg: PipelineConfig, seed: int
) -> list[UtterancePaths]:
    if not corpus:
        raise InvalidConfig("corpus must be non-empty")
    return [simulate_paths(u, i, vocab, cfg, seed) for i, u in enumerate(corpus)]


def run_experiment(
    corpus: Sequence[SyntheticUtterance],
    vocab: Vocab,
    cfg: PipelineConfig,
    seed: int,
    thetas: Sequence[float] = (),
    alphas: Sequence[float] = (),
    paths: list[UtterancePaths] | None = None,
) -> list[dict]:
    """One aggregate row per sweep point, plus the two endpoint rows.

    Pilots and both execution paths are simulated once per utterance; each
    sweep point only re-routes them.
    """
    if paths is None:
        paths = simulate_corpus(corpus, vocab, cfg, seed)
    tau = cfg.pilot.granularity_s
    points = [("always_local", OfframpConfig(mode="always_local"))]
    points += [(f"theta={t:g}", replace(cfg.offramp, mode="perplexity", theta=float(t))) for t in thetas]
    points += [(f"alpha={a:g}", replace(cfg.offramp, mode="naive", alpha=float(a))) for a in alphas]
    points.append(("always_offload", OfframpConfig(mode="always_offload")))
    table = []
    for label, off in points:
        rows = [report_row(p, route(p, off)) for p in paths]
        table.append(aggregate(rows, label, off, tau))
    return table


def offload_needed(frontier: Sequence[tuple[float, float]], target_wer: float) -> float | None:
    """Smallest offload fraction at which a frontier reaches ``target_wer``.

    ``frontier`` holds (offload_frac, mean_wer) points; consecutive points are
    joined linearly after sorting by offload fraction.
    """
    pts = sorted(frontier)
    for (f0, w0), (f1, w1) in zip(pts, pts[1:]):
        if w0 <= target_wer:
            return f0
        if w1 <= target_wer:
            return f0 + (f1 - f0) * (w0 - target_wer) / (w0 - w1)
    if pts and pts[-1][1] <= target_wer:
        return pts[-1][0]
    return None


def frontier_points(paths: Sequence[UtterancePaths], offramp: OfframpConfig) -> tuple[float, float]:
    rows = [report_row(p, route(p, offramp)) for p in paths]
    return float(np.mean([r["offload"] for r in rows])), float(np.mean([r["wer"] for r in rows]))


def perplexity_thresholds(paths: Sequence[UtterancePaths], prob_source: str = "combined") -> list[float]:
    """Every threshold that changes the perplexity offload set, descending from +inf."""
    vals = set()
    for p in paths:
        try:
            vals.add(perplexity(p.decision_ref, prob_source))
        except NoReference:
            pass
    return [math.inf] + sorted(vals, reverse=True)
