import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentcodec.coder import encode_values, payload_bits
from latentcodec.dist import DiscreteDistribution, kl_bits
from latentcodec.exceptions import InfiniteRateError, LatentCodecError, SupportError
from latentcodec.histogram import LatentChannel, hard_histogram
from latentcodec.sideinfo import (
    GMMSideCodec,
    GmmSideInfo,
    RateReport,
    adaptive_total_rate,
    dataset_gap,
    dequantize_gmm,
    gmm_side_codec_decode,
    gmm_side_codec_encode,
    histogram_side_codec_encode,
    lambda_q,
    pooled_defaults,
    potential_savings,
    quantize_gmm,
    side_rate_q,
)
from latentcodec.synthetic import two_laplacian_dataset

SUP = (-40, 81)


class TestLambdaQ:
    def test_trained_256_target_768x512(self):
        assert lambda_q((256, 256), (768, 512)) == 1 / 6

    def test_equal(self):
        assert lambda_q((64, 32), (64, 32)) == 1.0

    def test_quarter(self):
        assert lambda_q((128, 128), (256, 256)) == 0.25

    def test_zero_dims(self):
        with pytest.raises(LatentCodecError):
            lambda_q((0, 1), (1, 1))


class TestRateReport:
    def test_total(self):
        r = RateReport(100.0, 40.0, 0.25, lambda_x=2.0, distortion=3.0, pixels=10)
        assert r.total == pytest.approx(116.0, abs=1e-9)
        assert r.bpp["total"] == pytest.approx(11.6)

    def test_negative_rate(self):
        with pytest.raises(LatentCodecError):
            RateReport(-1.0, 0.0, 1.0)


class TestPotentialSavings:
    def test_equal_is_zero(self):
        p = DiscreteDistribution(0, [0.5, 0.5])
        assert potential_savings([p, p], [p, p], (64, 64), 16).delta_r_max_bpp == 0.0

    def test_plug_in(self):
        p, q = DiscreteDistribution(0, [0.5, 0.5]), DiscreteDistribution(0, [0.25, 0.75])
        kl = 0.5 * math.log2(0.5 / 0.25) + 0.5 * math.log2(0.5 / 0.75)
        rep = potential_savings([p], [q], (256, 256), 16)
        assert rep.delta_r_max_bpp == pytest.approx(kl * 256 / 65536, abs=1e-15)
        assert rep.delta_r_max_bpp == pytest.approx(8.1e-4, abs=5e-6)

    def test_support_mismatch(self):
        p = DiscreteDistribution(0, [0.5, 0.5])
        with pytest.raises(SupportError):
            potential_savings([p], [DiscreteDistribution(1, [0.5, 0.5])], (16, 16), 1)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_nonnegative(self, seed):
        r = np.random.default_rng(seed)
        ps = [DiscreteDistribution.normalized(0, r.gamma(1, size=9)) for _ in range(3)]
        qs = [DiscreteDistribution.normalized(0, r.gamma(1, size=9)) for _ in range(3)]
        assert potential_savings(ps, qs, (32, 32), 4).delta_r_max_bpp >= 0

    def test_dataset_mean(self):
        p, q = DiscreteDistribution(0, [0.5, 0.5]), DiscreteDistribution(0, [0.25, 0.75])
        rep = dataset_gap([[p], [q]], [q], (16, 16), 1)
        assert rep.delta_r_max_bpp == pytest.approx(kl_bits(p, q) / 2)
        assert len(rep.per_image) == 2


class TestSideRateQ:
    def test_mode_half(self):
        p = DiscreteDistribution(0, [0.5, 0.5])
        assert side_rate_q([p], [[0, 0, 0]]) == 3.0

    def test_empty(self):
        assert side_rate_q([DiscreteDistribution(0, [1.0])], [[]]) == 0.0

    def test_zero_probability(self):
        with pytest.raises(InfiniteRateError):
            side_rate_q([DiscreteDistribution(0, [1.0, 0.0])], [[1]])

    def test_matches_coder_length(self, rng):
        p = DiscreteDistribution.normalized(-3, [1, 2, 4, 8, 4, 2, 1])
        q = rng.choice(np.arange(-3, 4), size=20_000, p=p.masses)
        ideal = side_rate_q([p], [q])
        assert abs(payload_bits(encode_values(q, p)) - ideal) <= 64 + 0.001 * ideal


def laplace_channels(rng, scales, n=1024):
    return [LatentChannel.clipped(np.round(rng.laplace(0, b, n)), SUP) for b in scales]


class TestGmmCodec:
    @pytest.mark.parametrize("K, C, bits", [(1, 16, 256), (3, 192, 12288), (2, 5, 200)])
    def test_side_bits_formula(self, rng, K, C, bits):
        chans = [LatentChannel(rng.integers(-3, 4, size=8).astype(float), (-5, 11)) for _ in range(C)]
        assert gmm_side_codec_encode(chans, K).side_bits == bits == (3 * K - 1) * C * 8

    def test_round_trip_bytes(self, rng):
        side = gmm_side_codec_encode(laplace_channels(rng, [1, 4, 8]), K=2)
        again = GmmSideInfo.from_bytes(side.to_bytes(), 3, 2, SUP)
        assert np.array_equal(again.codes, side.codes)
        for a, b in zip(gmm_side_codec_decode(side), gmm_side_codec_decode(again)):
            assert a == b

    def test_quantization_idempotent(self, rng):
        side = gmm_side_codec_encode(laplace_channels(rng, [2, 6]), K=3)
        for row, params in zip(side.codes, side.params()):
            again = quantize_gmm(np.asarray(params.weights), np.asarray(params.means),
                                 np.asarray(params.scales), side.support)
            assert np.array_equal(again, row)
            assert dequantize_gmm(again, 3, side.support) == params

    def test_degenerate_channel(self):
        side = gmm_side_codec_encode([LatentChannel(np.full(50, 3.0), SUP)], K=3)
        (params,) = side.params()
        top = int(np.argmax(params.weights))
        assert params.weights[top] == pytest.approx(1.0, abs=1e-2)
        assert params.means[top] == pytest.approx(3.0, abs=0.5)
        assert side.distributions()[0].masses[43] > 0.99

    def test_bad_k(self, rng):
        with pytest.raises(LatentCodecError):
            gmm_side_codec_encode(laplace_channels(rng, [1]), K=4)

    def test_fit_is_close(self, rng):
        side = gmm_side_codec_encode(laplace_channels(rng, [3], n=4096), K=2)
        p = hard_histogram(laplace_channels(np.random.default_rng(0), [3], n=4096)[0])
        assert kl_bits(p, side.distributions()[0]) < 0.1

    def test_estimator(self, rng):
        X = np.stack([np.round(rng.laplace(0, 2, 256)).clip(-40, 40) for _ in range(4)])
        est = GMMSideCodec(n_components=1).fit(X)
        assert est.side_bits_ == 2 * 4 * 8
        assert est.transform().shape == (4, 81)


class TestAdaptiveTotal:
    def test_true_default_static_wins(self, rng):
        chans = laplace_channels(rng, [2, 5])
        defaults = [hard_histogram(c) for c in chans]
        cmp = adaptive_total_rate(chans, gmm_side_codec_encode(chans, 2), defaults)
        assert cmp.winner == "static"

    def test_single_element_static_wins(self):
        chans = [LatentChannel([1.0], SUP), LatentChannel([-2.0], SUP)]
        defaults = [DiscreteDistribution.uniform(SUP)] * 2
        cmp = adaptive_total_rate(chans, gmm_side_codec_encode(chans, 1), defaults)
        assert cmp.winner == "static"

    def test_kl_identity(self, rng):
        for _ in range(10):
            chans = laplace_channels(rng, rng.uniform(1, 8, size=3))
            defaults = [DiscreteDistribution.normalized(-40, rng.gamma(2, size=81)) for _ in chans]
            for side in (gmm_side_codec_encode(chans, 2), histogram_side_codec_encode(chans)):
                cmp = adaptive_total_rate(chans, side, defaults)
                rhs = sum(c.n * (kl_bits(hard_histogram(c), d) - kl_bits(hard_histogram(c), a))
                          for c, d, a in zip(chans, defaults, side.distributions()))
                assert abs(cmp.static.R_y_bits - cmp.adaptive.R_y_bits - rhs) < 1e-6

    def test_histogram_codec_is_near_lossless(self, rng):
        chans = laplace_channels(rng, [2])
        side = histogram_side_codec_encode(chans)
        assert side.side_bits == 16 * 81
        cmp = adaptive_total_rate(chans, side, [hard_histogram(chans[0])])
        # only the 16-bit table rounding separates the two
        assert 0 <= cmp.adaptive.R_y_bits - cmp.static.R_y_bits < 0.005 * chans[0].n

    def test_synthetic_amortization(self):
        dataset, _ = two_laplacian_dataset(n_inputs=30, n_channels=4, seed=3)
        defaults = pooled_defaults(dataset)
        lam = lambda_q((128, 128), (512, 512))
        static, adaptive = [], []
        for chans in dataset:
            cmp = adaptive_total_rate(chans, gmm_side_codec_encode(chans, 2), defaults,
                                      dims=(512, 512), s=16, lam_q=lam)
            static.append(cmp.static.total)
            adaptive.append(cmp.adaptive.total)
        assert np.mean(adaptive) < np.mean(static)
