"""Toy late-contextualization encoder.

Bottom stage: stacked causal 1-D convolutions that can be run segment by
segment with a per-layer ring of trailing frames.  Top stage: a few layers of
single-head self-attention over the whole sequence, run once ingestion is
complete.  Weights are seeded random matrices; nothing here is trained.

The streaming stage processes one frame at a time with matrix-vector
products, so its output for a frame never depends on how the input was cut
into segments (bitwise).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from pilotdec.errors import InvalidConfig, ShapeError
from pilotdec.lattice import EmissionLattice, FRAME_DURATION, Vocab


@dataclass(frozen=True)
class EncoderConfig:
    conv_layers: int = 6
    kernel: int = 5
    attn_layers: int = 3
    dim: int = 31
    seed: int = 0
    # residual gains; small values keep the output close to the input features
    conv_gain: float = 0.15
    attn_gain: float = 0.3
    ctc_gain: float = 6.0

    def __post_init__(self):
        if self.conv_layers < 1 or self.attn_layers < 1 or self.kernel < 1 or self.dim < 1:
            raise InvalidConfig("conv_layers, attn_layers, kernel and dim must all be >= 1")


@dataclass(frozen=True, eq=False)
class SegmentCache:
    rings: tuple[np.ndarray, ...]
    frames_seen: int = 0


@dataclass(frozen=True)
class FlopsReport:
    frames: int
    streaming: int
    non_streaming: int

    @property
    def streaming_fraction(self) -> float:
        total = self.streaming + self.non_streaming
        return self.streaming / total if total else 0.0


class Encoder:
    """Seeded encoder weights plus the three encoding stages."""

    def __init__(self, cfg: EncoderConfig, vocab: Vocab):
        self.cfg = cfg
        self.vocab = vocab
        rng = np.random.default_rng([cfg.seed, 0xE4C])
        d, k = cfg.dim, cfg.kernel
        scale = 1.0 / np.sqrt(d * k)
        self.conv_w = [rng.normal(0, scale, size=(k, d, d)) for _ in range(cfg.conv_layers)]
        self.conv_b = [rng.normal(0, 0.01, size=d) for _ in range(cfg.conv_layers)]
        s = 1.0 / np.sqrt(d)
        self.attn_w = [
            tuple(rng.normal(0, s, size=(d, d)) for _ in range(4)) for _ in range(cfg.attn_layers)
        ]
        V = vocab.size
        proj = rng.normal(0, s, size=(d, V))
        if d == V:
            # feature i is the posterior of token i: keep an identity path
            proj = proj + np.eye(V)
        self.ctc_w = proj * cfg.ctc_gain

    def empty_cache(self) -> SegmentCache:
        k, d = self.cfg.kernel, self.cfg.dim
        return SegmentCache(tuple(np.zeros((k - 1, d)) for _ in range(self.cfg.conv_layers)), 0)

    def encode_segment(self, cache: SegmentCache, segment) -> tuple[SegmentCache, np.ndarray]:
        seg = np.asarray(segment, dtype=np.float64)
        if seg.ndim != 2 or seg.shape[1] != self.cfg.dim:
            if seg.size == 0:
                return cache, np.zeros((0, self.cfg.dim))
            raise ShapeError(f"segment must be (n, {self.cfg.dim}), got {seg.shape}")
        if seg.shape[0] == 0:
            return cache, np.zeros((0, self.cfg.dim))
        k = self.cfg.kernel
        rings = []
        h = seg
        for w, b, ring in zip(self.conv_w, self.conv_b, cache.rings):
            padded = np.concatenate([ring, h], axis=0)
            out = np.empty_like(h)
            for t in range(h.shape[0]):
                acc = b.copy()
                window = padded[t : t + k]
                for j in range(k):
                    acc = acc + window[j] @ w[j]
                out[t] = h[t] + self.cfg.conv_gain * np.tanh(acc)
            rings.append(padded[len(padded) - (k - 1) :].copy() if k > 1 else np.zeros((0, h.shape[1])))
            h = out
        return SegmentCache(tuple(rings), cache.frames_seen + seg.shape[0]), h

    def encode_streaming(self, features, segment_frames: int) -> np.ndarray:
        cache = self.empty_cache()
        outs = []
        for s in range(0, len(features), max(1, segment_frames)):
            cache, o = self.encode_segment(cache, features[s : s + segment_frames])
            outs.append(o)
        return np.concatenate(outs, axis=0) if outs else np.zeros((0, self.cfg.dim))

    def contextualize(self, conv_out) -> np.ndarray:
        z = np.asarray(conv_out, dtype=np.float64)
        if z.ndim != 2 or z.shape[0] == 0 or z.shape[1] != self.cfg.dim:
            raise ShapeError(f"conv output must be non-empty (T, {self.cfg.dim}), got {z.shape}")
        d = self.cfg.dim
        for wq, wk, wv, wo in self.attn_w:
            q, k, v = z @ wq, z @ wk, z @ wv
            att = softmax(q @ k.T / np.sqrt(d), axis=1)
            z = z + self.cfg.attn_gain * np.tanh(att @ v @ wo)
        return z

    def project_ctc(self, z) -> EmissionLattice:
        logits = np.asarray(z) @ self.ctc_w
        return EmissionLattice(log_softmax(logits, axis=1), FRAME_DURATION)

    def encode(self, features, segment_frames: int | None = None) -> EmissionLattice:
        conv = self.encode_streaming(features, segment_frames or len(features))
        return self.project_ctc(self.contextualize(conv))

    def flops(self, n_frames: int) -> FlopsReport:
        return flops_report(self.cfg, n_frames, self.vocab.size)


def features_from_lattice(lattice: EmissionLattice) -> np.ndarray:
    """Input features for encoder mode: per-frame posteriors centred at zero."""
    p = np.exp(lattice.frames)
    return p - 1.0 / lattice.V


def flops_report(cfg: EncoderConfig, n_frames: int, vocab_size: int) -> FlopsReport:
    """Multiply-accumulate counts (x2) of one utterance through the encoder.

    Convolution work is streamable.  Attention needs the whole input, and the
    CTC projection sits on top of it, so both count as non-streaming.
    """
    T, d, k = n_frames, cfg.dim, cfg.kernel
    conv = cfg.conv_layers * T * k * d * d * 2
    attn = cfg.attn_layers * (4 * T * d * d * 2 + 2 * T * T * d * 2)
    ctc = T * d * vocab_size * 2
    return FlopsReport(T, conv, attn + ctc)
