"""Acceptance criteria 1-11.

Each test appends one ``criterion N: PASS|FAIL ...`` line, shown in the
terminal summary (and printed inline with ``-s``), then asserts.
"""

import math
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_lattice
from pilotdec.beam import BeamConfig, PilotReference, beam_search, reference_from
from pilotdec.ctc import ctc_brute_force, ctc_extend, ctc_extend_leap, ctc_init, leap_boundary
from pilotdec.encoder import Encoder, EncoderConfig
from pilotdec.lattice import Vocab, gen_corpus, make_lattice
from pilotdec.metrics import edit_distance
from pilotdec.offramp import OfframpConfig, perplexity
from pilotdec.pilot import PilotConfig
from pilotdec.scorer import teacher_scorer
from pilotdec.sim import (
    CostModel,
    PipelineConfig,
    SimConfig,
    frontier_points,
    offload_needed,
    perplexity_thresholds,
    simulate_corpus,
)
from test_metrics import all_sequences, recursive_distance

SEED = 2024
VOCAB = Vocab.default()
ALL_OPTS = BeamConfig(beam_width=5, max_tokens=30).with_opts(True, True, True)


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def reference_pipeline(beam: BeamConfig, **pilot) -> PipelineConfig:
    return PipelineConfig(beam=beam, pilot=PilotConfig(**pilot), sim=SimConfig(fidelity=0.9))


@pytest.fixture(scope="module")
def reference_corpus():
    return gen_corpus(200, [(0.2, 1.0)], seed=SEED, vocab=VOCAB)


@pytest.fixture(scope="module")
def optimized_paths(reference_corpus):
    return simulate_corpus(reference_corpus, VOCAB, reference_pipeline(ALL_OPTS), SEED)


def test_c01_ctc_oracle():
    start = time.perf_counter()
    worst, count = 0.0, 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        T, V = int(rng.integers(1, 9)), int(rng.integers(2, 5))
        lat = random_lattice(rng, T, V, alpha=0.5)
        prefix = [int(t) for t in rng.integers(1, V, size=rng.integers(1, 4))]
        state = ctc_init(lat)
        for j, c in enumerate(prefix):
            sc = ctc_extend(state, c, lat)
            want = ctc_brute_force(prefix[: j + 1], lat)
            if want == -np.inf:
                err = 0.0 if sc.psi == -np.inf else math.inf
            else:
                err = abs(sc.psi - want)
            worst = max(worst, err)
            count += 1
            state = sc.state
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 60
    report(1, ok, f"{count} prefix scores, max |err|={worst:.2e} (tol 1e-9), {elapsed:.1f}s (< 60s)")
    assert ok


def test_c02_leap_exactness():
    worst, frames_ok, n = 0.0, True, 0
    for seed in range(120):
        rng = np.random.default_rng(1000 + seed)
        V = int(rng.integers(3, 8))
        T = int(rng.integers(4, 60))
        T_p = int(rng.integers(2, T + 1))
        q = float(rng.choice([0.5, 0.6, 0.75, 0.9, 1.0]))
        full = random_lattice(rng, T, V)
        pilot = full.prefix(T_p)
        g = [int(t) for t in rng.integers(1, V, size=rng.integers(0, 4))]
        c = int(rng.integers(1, V))
        s_full, s_pilot = ctc_init(full), ctc_init(pilot)
        for t in g:
            s_full = ctc_extend(s_full, t, full).state
            s_pilot = ctc_extend(s_pilot, t, pilot).state
        cached = ctc_extend(s_pilot, c, pilot).state
        exact = ctc_extend(s_full, c, full)
        leap = ctc_extend_leap(s_full, cached, c, full, q=q)
        B = math.floor(T_p * q)
        frames_ok &= leap.frames_computed == T - B and B == leap_boundary(T_p, q)
        if exact.psi == -np.inf:
            worst = max(worst, 0.0 if leap.psi == -np.inf else math.inf)
        else:
            worst = max(worst, abs(leap.psi - exact.psi))
        n += 1
    ok = worst <= 1e-12 and frames_ok
    report(2, ok, f"{n} instances, max |psi err|={worst:.2e} (tol 1e-12), frames recomputed == T - floor(T_p*q): {frames_ok}")
    assert ok


def test_c03_streaming_prefix():
    enc = Encoder(EncoderConfig(dim=31), VOCAB)
    rng = np.random.default_rng(SEED)
    identical, n_inputs, n_cuts = True, 10, 20
    for _ in range(n_inputs):
        x = rng.normal(size=(int(rng.integers(20, 60)), 31))
        whole = enc.encode_segment(enc.empty_cache(), x)[1]
        for _ in range(n_cuts):
            cuts = sorted(set(int(c) for c in rng.integers(1, len(x), size=rng.integers(1, 12))))
            cache, outs = enc.empty_cache(), []
            for a, b in zip([0, *cuts], [*cuts, len(x)]):
                cache, o = enc.encode_segment(cache, x[a:b])
                outs.append(o)
            identical &= bool(np.array_equal(np.concatenate(outs), whole))
    report(3, identical, f"{n_inputs} inputs x {n_cuts} random segmentations bitwise identical: {identical}")
    assert identical


def test_c04_optimization_soundness():
    utts = gen_corpus(100, [(0.3, 1.0)], seed=SEED, vocab=VOCAB)
    same, fewer, saved = True, True, 0
    for i, u in enumerate(utts):
        lat = make_lattice(u, VOCAB, i)
        sc = teacher_scorer(u, 0.8, VOCAB, i)
        vanilla = beam_search(lat, sc, VOCAB, BeamConfig(beam_width=1), keep_expansions=True)
        ref = reference_from(vanilla, lat)
        opt = beam_search(lat, sc, VOCAB, BeamConfig(beam_width=1).with_opts(True, True, True), reference=ref)
        same &= opt.tokens == vanilla.tokens
        fewer &= opt.nfe.attn_evals <= vanilla.nfe.attn_evals
        saved += vanilla.nfe.ctc_frames_scored - opt.nfe.ctc_frames_scored
    ok = same and fewer
    report(4, ok, f"100 utterances, k=1: outputs identical={same}, attn NFEs <= vanilla={fewer}, CTC frames saved={saved}")
    assert ok


def test_c05_ablation(reference_corpus, optimized_paths):
    # vanilla search ignores the reference, so its pilots need not run
    vanilla_cfg = replace(reference_pipeline(BeamConfig(beam_width=5, max_tokens=30)), sim=SimConfig(fidelity=0.9, run_pilots=False))
    vanilla = simulate_corpus(reference_corpus, VOCAB, vanilla_cfg, SEED)
    nfe_v = sum(p.local.nfe.attn_evals for p in vanilla)
    nfe_o = sum(p.local.nfe.attn_evals for p in optimized_paths)
    wer_v = float(np.mean([p.local_wer for p in vanilla]))
    wer_o = float(np.mean([p.local_wer for p in optimized_paths]))
    reduction = 1 - nfe_o / nfe_v
    ok = reduction >= 0.30 and wer_o - wer_v <= 0.01
    report(5, ok, f"attn NFEs {nfe_v} -> {nfe_o} ({reduction:.1%} reduction, need >= 30%), WER {wer_v:.4f} -> {wer_o:.4f} (degradation <= 0.01)")
    assert ok


def test_c06_early_termination():
    utts = gen_corpus(40, [(0.3, 1.0)], seed=SEED, vocab=VOCAB)
    rounds_off, rounds_on = [], []
    for i, u in enumerate(utts):
        lat = make_lattice(u, VOCAB, i)
        sc = teacher_scorer(u, 0.7, VOCAB, i)
        pilot = beam_search(lat.prefix(max(1, int(lat.T * 0.7))), sc, VOCAB, BeamConfig(beam_width=3), keep_expansions=True)
        ref = reference_from(pilot, lat.prefix(max(1, int(lat.T * 0.7))))
        rounds_off.append(beam_search(lat, sc, VOCAB, BeamConfig()).rounds)
        rounds_on.append(beam_search(lat, sc, VOCAB, BeamConfig(early_term=True), reference=ref).rounds)
    avg_ok = np.mean(rounds_on) <= np.mean(rounds_off)

    # scripted: vanilla never end-detects; termination at n saves l_v - n rounds
    cfg = BeamConfig(beam_width=4, max_tokens=20, end_detect_margin=1e9)
    scripted, exact = 0, True
    for i, u in enumerate(utts[:8]):
        lat = make_lattice(u, VOCAB, i)
        sc = teacher_scorer(u, 0.6, VOCAB, i)
        vanilla = beam_search(lat, sc, VOCAB, cfg)
        for n in range(2, vanilla.rounds):
            ref = PilotReference((3,) * n, (0.0,) * n, (0.0,) * n, lat.T, lat.duration_s)
            res = beam_search(lat, sc, VOCAB, replace(cfg, early_term=True, early_term_c=0), reference=ref)
            if res.stop_reason == "early_term" and res.rounds == n:
                scripted += 1
                head = beam_search(lat, sc, VOCAB, replace(cfg, max_tokens=n))
                exact &= vanilla.rounds - res.rounds == vanilla.rounds - n
                exact &= res.nfe.attn_evals == head.nfe.attn_evals and res.tokens == head.tokens
    ok = avg_ok and exact and scripted >= 10
    report(6, ok, f"mean rounds {np.mean(rounds_off):.2f} -> {np.mean(rounds_on):.2f}; {scripted} scripted terminations save exactly l_v - n: {exact}")
    assert ok


def test_c07_offramp_dominance():
    utts = gen_corpus(400, [(0.1, 0.5), (0.7, 0.5)], seed=SEED, vocab=VOCAB)
    paths = simulate_corpus(utts, VOCAB, reference_pipeline(ALL_OPTS), SEED)
    thetas = perplexity_thresholds(paths)
    ppl_front = [frontier_points(paths, OfframpConfig(mode="perplexity", theta=t)) for t in thetas]
    naive_front = [frontier_points(paths, OfframpConfig(mode="naive", alpha=a)) for a in np.linspace(0, 1, 21)]

    # offload sets must shrink as theta grows
    def offloaded(theta):
        return {p.index for p in paths if perplexity_or_inf(p) > theta}

    sets = [offloaded(t) for t in sorted(thetas)]
    monotone = all(b <= a for a, b in zip(sets, sets[1:]))

    w_local = frontier_points(paths, OfframpConfig(mode="always_local"))[1]
    w_cloud = frontier_points(paths, OfframpConfig(mode="always_offload"))[1]
    targets = np.linspace(w_cloud, w_local, 7)[1:-1]
    wins = []
    for w in targets:
        f_p, f_n = offload_needed(ppl_front, w), offload_needed(naive_front, w)
        if f_p is not None and f_n:
            wins.append((w, f_p, f_n, f_p <= 0.8 * f_n))
    n_wins = sum(1 for *_, ok in wins if ok)
    detail = ", ".join(f"WER {w:.3f}: {fp:.1%} vs {fn:.1%}" for w, fp, fn, _ in wins)
    ok = n_wins >= 3 and monotone
    report(7, ok, f"{n_wins}/{len(wins)} matched-WER points with >= 20% lower offload ({detail}); theta-monotone: {monotone}")
    assert ok


def perplexity_or_inf(p):
    return perplexity(p.decision_ref) if p.decision_ref is not None and p.decision_ref.n_tokens else math.inf


def test_c08_granularity_sweep(reference_corpus, optimized_paths):
    costs = {}
    for dt in (2.0, 0.5):
        paths = simulate_corpus(reference_corpus, VOCAB, reference_pipeline(ALL_OPTS, granularity_s=dt), SEED)
        costs[dt] = float(np.mean([p.local_encode_s + p.local_decode_s for p in paths]))
    costs[1.0] = float(np.mean([p.local_encode_s + p.local_decode_s for p in optimized_paths]))
    decreasing = costs[2.0] > costs[1.0] > costs[0.5]

    # a 5x slower device cannot keep up with 0.5 s pilots
    slow = replace(reference_pipeline(ALL_OPTS, granularity_s=0.5), cost=CostModel().scaled(5.0))
    flagged = simulate_corpus(reference_corpus[:20], VOCAB, slow, SEED)
    n_flagged = sum(p.trace.infeasible for p in flagged)
    ok = decreasing and n_flagged > 0
    cost_str = ", ".join(f"dt={dt:g}s: {costs[dt] * 1000:.1f} ms" for dt in (2.0, 1.0, 0.5))
    report(8, ok, f"mean local decode cost {cost_str} (strictly decreasing: {decreasing}); slow device flagged infeasible on {n_flagged}/20")
    assert ok


def test_c09_cli_determinism(tmp_path):
    def cli(*args):
        return subprocess.run([sys.executable, "-m", "pilotdec.cli", *map(str, args)], capture_output=True, check=True).stdout

    corpus = tmp_path / "c.json"
    cli("gen", "--n", 10, "--seed", 7, "--mix", "0.1:0.5,0.7:0.5", "--out", corpus)
    first = corpus.read_bytes()
    cli("gen", "--n", 10, "--seed", 7, "--mix", "0.1:0.5,0.7:0.5", "--out", corpus)
    same = {"gen": corpus.read_bytes() == first}
    commands = {
        "decode": ["decode", "--corpus", corpus, "--all-opts"],
        "simulate": ["simulate", "--corpus", corpus, "--theta", 3],
        "sweep": ["sweep", "--corpus", corpus, "--theta", "inf,3", "--alpha", "0.5", "--tau", "1,0.5"],
    }
    for name, args in commands.items():
        same[name] = cli(*args) == cli(*args)
    ok = all(same.values())
    report(9, ok, "byte-identical reruns: " + ", ".join(f"{k}={v}" for k, v in same.items()))
    assert ok


def test_c10_perplexity_units():
    def ref(probs):
        lp = tuple(math.log(p) for p in probs)
        return PilotReference(tuple(range(3, 3 + len(lp))), lp, lp, 10, 1.0)

    V = VOCAB.size
    errs = [
        abs(perplexity(ref([1.0] * 5)) - 1.0),
        abs(perplexity(ref([1 / V] * 7)) - V),
        abs(perplexity(ref([0.5, 0.25])) - 2**1.5),
    ]
    ok = max(errs) <= 1e-12
    report(10, ok, f"ppl cases max |err|={max(errs):.1e} (tol 1e-12)")
    assert ok


def test_c11_wer_oracle():
    seqs = list(all_sequences(6, (0, 1, 2)))
    # an empty reference has no WER, so refs start at length 1
    n_pairs = mismatches = 0
    for r in seqs:
        if not r:
            continue
        for h in seqs:
            mismatches += edit_distance(r, h).errors != recursive_distance(r, h)
            n_pairs += 1
    ok = mismatches == 0
    report(11, ok, f"all {n_pairs} pairs (length <= 6, 3 tokens, non-empty ref), mismatches={mismatches}")
    assert ok
