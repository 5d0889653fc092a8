import numpy as np
import pytest

from pilotdec.encoder import Encoder, EncoderConfig, features_from_lattice, flops_report
from pilotdec.errors import ShapeError
from pilotdec.lattice import Vocab


@pytest.fixture
def enc():
    return Encoder(EncoderConfig(dim=31), Vocab.default())


def random_cuts(rng, T):
    n = int(rng.integers(1, T))
    return sorted(set(int(c) for c in rng.integers(1, T, size=n)))


def encode_with_cuts(enc, x, cuts):
    cache = enc.empty_cache()
    outs = []
    for a, b in zip([0, *cuts], [*cuts, len(x)]):
        cache, o = enc.encode_segment(cache, x[a:b])
        outs.append(o)
    return np.concatenate(outs), cache


class TestStreamingConv:
    def test_any_segmentation_is_bitwise_equal(self, enc):
        rng = np.random.default_rng(0)
        for _ in range(3):
            x = rng.normal(size=(int(rng.integers(10, 40)), 31))
            whole = enc.encode_segment(enc.empty_cache(), x)[1]
            for _ in range(5):
                got, cache = encode_with_cuts(enc, x, random_cuts(rng, len(x)))
                assert np.array_equal(got, whole)
                assert cache.frames_seen == len(x)

    def test_one_vs_ten_frame_chunks(self, enc):
        x = np.random.default_rng(1).normal(size=(30, 31))
        assert np.array_equal(enc.encode_streaming(x, 1), enc.encode_streaming(x, 10))

    def test_empty_segment(self, enc):
        cache = enc.encode_segment(enc.empty_cache(), np.ones((3, 31)))[0]
        new, out = enc.encode_segment(cache, np.zeros((0, 31)))
        assert out.shape == (0, 31)
        assert new is cache

    def test_dimension_mismatch(self, enc):
        with pytest.raises(ShapeError):
            enc.encode_segment(enc.empty_cache(), np.ones((2, 7)))

    def test_causal(self, enc):
        x = np.random.default_rng(2).normal(size=(12, 31))
        y = x.copy()
        y[-1] += 1.0
        a, b = enc.encode_streaming(x, 4), enc.encode_streaming(y, 4)
        assert np.array_equal(a[:-1], b[:-1])


class TestContextualize:
    def test_last_frame_reaches_first_output(self, enc):
        x = np.random.default_rng(3).normal(size=(15, 31))
        y = x.copy()
        y[-1] += 0.5
        assert not np.allclose(enc.contextualize(x)[0], enc.contextualize(y)[0])

    def test_deterministic(self, enc):
        x = np.random.default_rng(4).normal(size=(8, 31))
        assert np.array_equal(enc.contextualize(x), enc.contextualize(x))

    def test_prefix_differs_from_full(self, enc):
        x = np.random.default_rng(5).normal(size=(20, 31))
        assert not np.allclose(enc.contextualize(x[:10]), enc.contextualize(x)[:10])

    def test_empty_rejected(self, enc):
        with pytest.raises(ShapeError):
            enc.contextualize(np.zeros((0, 31)))


class TestProjection:
    def test_shape_and_normalization(self, enc):
        z = np.random.default_rng(6).normal(size=(9, 31))
        lat = enc.project_ctc(z)
        assert lat.T == 9 and lat.V == 31
        np.testing.assert_allclose(lat.row_norms(), 0.0, atol=1e-6)
        assert np.array_equal(lat.frames, enc.project_ctc(z).frames)

    def test_features_round_trip_shape(self, enc):
        lat = enc.project_ctc(np.random.default_rng(7).normal(size=(5, 31)))
        assert features_from_lattice(lat).shape == (5, 31)


class TestFlops:
    def test_monotone_in_frames(self):
        cfg = EncoderConfig()
        a, b = flops_report(cfg, 50, 31), flops_report(cfg, 100, 31)
        assert b.streaming > a.streaming and b.non_streaming > a.non_streaming

    def test_attention_share_grows_with_length(self):
        cfg = EncoderConfig()
        assert flops_report(cfg, 400, 31).streaming_fraction < flops_report(cfg, 50, 31).streaming_fraction
