"""Command-line entry point.

    pilotdec gen       write a synthetic corpus (JSON)
    pilotdec decode    pilots + full local decode per utterance (CSV)
    pilotdec simulate  full pipeline run-log (JSON lines) and aggregate row (CSV)
    pilotdec sweep     theta / alpha / tau sweeps as a frontier table (CSV)

Exit codes: 0 ok, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from pilotdec.config import RunConfig, load_config
from pilotdec.corpus_io import read_corpus, write_corpus
from pilotdec.encoder import flops_report
from pilotdec.errors import InvalidConfig, PilotDecError
from pilotdec.lattice import Vocab, gen_corpus, make_lattice
from pilotdec.offramp import OfframpConfig
from pilotdec.sim import (
    AGGREGATE_COLUMNS,
    aggregate,
    lattice_seed,
    report_row,
    route,
    run_experiment,
    simulate_corpus,
)

log = logging.getLogger("pilotdec")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

DECODE_COLUMNS = (
    "index",
    "n_frames",
    "duration_s",
    "noise_level",
    "wer",
    "attn_evals",
    "ctc_frames_scored",
    "decode_rounds",
    "collapse_hits",
    "collapse_divergences",
    "leap_rounds",
    "predicted_length",
    "stop_reason",
    "n_pilots",
    "pilot_attn_evals",
    "local_encode_s",
    "local_decode_s",
    "enc_streaming_flops",
    "enc_nonstreaming_flops",
    "enc_streaming_fraction",
)


def _floats(text: str, name: str) -> list[float]:
    try:
        return [math.inf if t.strip() == "inf" else float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InvalidConfig(f"--{name}: expected a comma-separated list of numbers, got {text!r}") from None


def _mix(text: str) -> tuple[tuple[float, float], ...]:
    pairs = []
    for part in text.split(","):
        try:
            noise, frac = part.split(":")
            pairs.append((float(noise), float(frac)))
        except ValueError:
            raise InvalidConfig(f"difficulty_mix: bad entry {part!r}, expected noise:fraction") from None
    return tuple(pairs)


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _header(cfg: RunConfig, command: str) -> str:
    return "# pilotdec " + command + " config=" + json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))


def _csv_text(rows, columns, header: str) -> str:
    buf = io.StringIO()
    buf.write(header + "\n")
    w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(r.get(k)) for k in columns})
    return buf.getvalue()


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_corpus(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    return read_corpus(path)


def cmd_gen(args) -> int:
    cfg = _config(args)
    c = cfg.corpus
    if args.n is not None:
        c = replace(c, n=args.n)
    if args.mix is not None:
        c = replace(c, difficulty_mix=_mix(args.mix))
    seed = cfg.seed if args.seed is not None else c.seed
    vocab = Vocab.default(c.n_words)
    utts = gen_corpus(c.n, c.difficulty_mix, seed, vocab, c.duration_range, c.token_rate, c.frame_duration)
    lattices = None
    if args.with_lattices:
        lattices = [make_lattice(u, vocab, lattice_seed(cfg.seed, i)) for i, u in enumerate(utts)]
    write_corpus(args.out, utts, vocab, seed, lattices)
    log.info("wrote %d utterances to %s", len(utts), args.out)
    return EXIT_OK


def _opt_flags(cfg: RunConfig, args) -> RunConfig:
    beam = cfg.beam
    if args.all_opts:
        beam = beam.with_opts(True, True, True)
    else:
        beam = replace(
            beam,
            collapse=beam.collapse or args.collapse,
            early_term=beam.early_term or args.early_term,
            leap=beam.leap or args.leap,
        )
    return cfg.replace(beam=beam)


def cmd_decode(args) -> int:
    cfg = _opt_flags(_config(args), args)
    utts, vocab, _ = _load_corpus(args.corpus)
    paths = simulate_corpus(utts, vocab, cfg.pipeline, cfg.seed)
    rows = []
    for p in paths:
        res = p.local
        fl = flops_report(cfg.encoder, p.utt.n_frames, vocab.size)
        rows.append(
            {
                "index": p.index,
                "n_frames": p.utt.n_frames,
                "duration_s": p.duration_s,
                "noise_level": p.utt.noise_level,
                "wer": p.local_wer,
                "attn_evals": res.nfe.attn_evals,
                "ctc_frames_scored": res.nfe.ctc_frames_scored,
                "decode_rounds": res.rounds,
                "collapse_hits": res.collapse_hits,
                "collapse_divergences": res.collapse_divergences,
                "leap_rounds": res.leap_rounds,
                "predicted_length": res.predicted_length,
                "stop_reason": res.stop_reason,
                "n_pilots": len(p.trace.runs),
                "pilot_attn_evals": sum(r.reference.nfe.attn_evals for r in p.trace.runs),
                "local_encode_s": p.local_encode_s,
                "local_decode_s": p.local_decode_s,
                "enc_streaming_flops": fl.streaming,
                "enc_nonstreaming_flops": fl.non_streaming,
                "enc_streaming_fraction": fl.streaming_fraction,
            }
        )
    _emit(_csv_text(rows, DECODE_COLUMNS, _header(cfg, "decode")), args.out)
    if args.out:
        total = sum(r["attn_evals"] for r in rows)
        mean_wer = float(np.mean([r["wer"] for r in rows]))
        print(f"utterances={len(rows)} attn_evals={total} mean_wer={mean_wer:.4f}")
    return EXIT_OK


def _offramp_from_args(cfg: RunConfig, args) -> OfframpConfig:
    off = cfg.offramp
    if args.mode:
        off = replace(off, mode=args.mode)
    if args.theta is not None:
        off = replace(off, mode=args.mode or "perplexity", theta=_floats(args.theta, "theta")[0])
    if args.alpha is not None:
        off = replace(off, mode=args.mode or "naive", alpha=_floats(args.alpha, "alpha")[0])
    return off


def cmd_simulate(args) -> int:
    cfg = _opt_flags(_config(args), args)
    off = _offramp_from_args(cfg, args)
    cfg = cfg.replace(offramp=off)
    utts, vocab, _ = _load_corpus(args.corpus)
    paths = simulate_corpus(utts, vocab, cfg.pipeline, cfg.seed)
    rows = [report_row(p, route(p, off)) for p in paths]
    lines = [json.dumps({"config": cfg.to_dict()}, sort_keys=True)]
    lines += [json.dumps(_json_row(r), sort_keys=True) for r in rows]
    _emit("\n".join(lines) + "\n", args.out)
    agg = aggregate(rows, off.mode, off, cfg.pilot.granularity_s)
    text = _csv_text([agg], AGGREGATE_COLUMNS, _header(cfg, "simulate"))
    if args.agg:
        Path(args.agg).write_text(text)
    elif args.out:
        sys.stdout.write(text)
    return EXIT_OK


def _json_row(r: dict) -> dict:
    return {k: (("inf" if v > 0 else "-inf") if isinstance(v, float) and math.isinf(v) else v) for k, v in r.items()}


def cmd_sweep(args) -> int:
    cfg = _opt_flags(_config(args), args)
    utts, vocab, _ = _load_corpus(args.corpus)
    thetas = _floats(args.theta, "theta") if args.theta else []
    alphas = _floats(args.alpha, "alpha") if args.alpha else []
    taus = _floats(args.tau, "tau") if args.tau else [cfg.pilot.granularity_s]
    for t in taus:
        if t <= 0:
            raise InvalidConfig(f"--tau: granularity must be > 0, got {t}")
    table = []
    for tau in taus:
        run = cfg.replace(pilot=replace(cfg.pilot, granularity_s=tau))
        table += run_experiment(utts, vocab, run.pipeline, run.seed, thetas, alphas)
    _emit(_csv_text(table, AGGREGATE_COLUMNS, _header(cfg, "sweep")), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pilotdec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output path (default: stdout)")

    def opts(p):
        p.add_argument("--collapse", action="store_true", help="beam collapse against the pilot reference")
        p.add_argument("--early-term", action="store_true", help="early termination at the predicted length")
        p.add_argument("--leap", action="store_true", help="CTC leap from cached pilot rows")
        p.add_argument("--all-opts", action="store_true", help="enable all three")

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--mix", help="difficulty mix, e.g. 0.1:0.5,0.7:0.5")
    p.add_argument("--with-lattices", action="store_true", help="embed rendered lattices")
    p.set_defaults(func=cmd_gen, out_required=True)

    p = sub.add_parser("decode", help="decode every utterance of a corpus locally")
    common(p)
    opts(p)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("simulate", help="simulate the pipeline with one offramp setting")
    common(p)
    opts(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=["perplexity", "naive", "always_local", "always_offload"])
    p.add_argument("--theta")
    p.add_argument("--alpha")
    p.add_argument("--agg", help="aggregate CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="offramp and granularity sweeps")
    common(p)
    opts(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--theta", help="comma-separated perplexity thresholds")
    p.add_argument("--alpha", help="comma-separated NaiveHybrid local probabilities")
    p.add_argument("--tau", help="comma-separated pilot granularities (s)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "out_required", False) and not args.out:
        parser.error("--out is required")
    try:
        return args.func(args)
    except InvalidConfig as exc:
        print(f"pilotdec: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PilotDecError, OSError, ValueError, KeyError) as exc:
        print(f"pilotdec: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
