import math

import numpy as np
import pytest

from latentcodec.bottleneck import (
    EntropyBottleneck,
    MonotoneCdfModel,
    fit,
    likelihood,
    noisy_rate_and_grads,
    rate_bits_static,
    rate_grad_static,
    to_distribution,
)
from latentcodec.dist import discretize_gaussian, entropy_bits
from latentcodec.exceptions import FittingError, LatentCodecError
from latentcodec.histogram import LatentChannel, hard_histogram


def laplace_bin_entropy(b, lo=-60, hi=60):
    """Entropy of a unit-binned Laplacian with scale ``b`` from its closed-form CDF."""
    cdf = lambda x: 0.5 * math.exp(x / b) if x < 0 else 1 - 0.5 * math.exp(-x / b)
    h = 0.0
    for c in range(lo, hi + 1):
        m = cdf(c + 0.5) - cdf(c - 0.5)
        if m > 0:
            h -= m * math.log2(m)
    return h


def symmetric_model():
    """A model whose CDF satisfies c(-y) = 1 - c(y): odd activations, zero biases."""
    m = MonotoneCdfModel.initial(init_scale=4.0)
    m.biases = [np.zeros_like(b) for b in m.biases]
    return m


@pytest.fixture(scope="module")
def gaussian_model():
    r = np.random.default_rng(11)
    return fit(np.round(r.normal(0, 1, 4000)), seed=0)


@pytest.fixture(scope="module")
def laplace_data():
    r = np.random.default_rng(12)
    return np.round(r.laplace(0, 1, 4000))


@pytest.fixture(scope="module")
def laplace_model(laplace_data):
    return fit(laplace_data, seed=0)


class TestModel:
    def test_monotone_over_random_parameters(self):
        r = np.random.default_rng(5)
        for _ in range(10_000):
            m = MonotoneCdfModel.random(r, spread=3.0)
            y = np.sort(r.uniform(-30, 30, size=8))
            assert np.all(np.diff(m.cdf(y)) >= 0)

    def test_limits(self):
        r = np.random.default_rng(6)
        for _ in range(50):
            m = MonotoneCdfModel.random(r)
            c = m.cdf(np.array([-1e4, 0.0, 1e4]))
            assert c[0] < 1e-6 and c[2] > 1 - 1e-6
            # c = sigmoid(logit) lies strictly inside (0, 1) whenever the logit is finite
            assert np.all(np.isfinite(m.logits(np.linspace(-50, 50, 101))))

    def test_density_is_cdf_derivative(self):
        r = np.random.default_rng(7)
        m = MonotoneCdfModel.random(r)
        y = r.uniform(-5, 5, size=100)
        h = 1e-6
        fd = (m.cdf(y + h) - m.cdf(y - h)) / (2 * h)
        np.testing.assert_allclose(m.density(y), fd, atol=1e-8)

    def test_json_round_trip(self, tmp_path):
        m = MonotoneCdfModel.random(np.random.default_rng(8))
        m.save(tmp_path / "m.json")
        m2 = MonotoneCdfModel.load(tmp_path / "m.json")
        y = np.linspace(-4, 4, 9)
        assert np.array_equal(m.cdf(y), m2.cdf(y))


class TestLikelihood:
    def test_nonnegative_and_subunit(self):
        r = np.random.default_rng(9)
        for _ in range(100):
            m = MonotoneCdfModel.random(r)
            p = likelihood(m, np.arange(-200, 201, dtype=float))
            assert np.all(p >= 0)
            assert p.sum() <= 1 + 1e-6

    def test_floor(self):
        m = MonotoneCdfModel.initial(init_scale=0.1)
        assert likelihood(m, 500.0, floor=2.0**-16) == 2.0**-16

    def test_non_finite(self):
        with pytest.raises(LatentCodecError):
            likelihood(MonotoneCdfModel.initial(), np.nan)

    def test_unit_gaussian_fit(self, gaussian_model):
        oracle = discretize_gaussian(0.0, 1.0, (-10, 21)).masses[10]
        assert likelihood(gaussian_model, 0.0) == pytest.approx(oracle, rel=0.10)


class TestRate:
    def test_rate_nonnegative(self):
        m = MonotoneCdfModel.random(np.random.default_rng(10))
        assert rate_bits_static(m, np.arange(-5, 6.0)) >= 0

    def test_one_bit(self):
        # Symmetric about zero: p(-1/2) = c(0) - c(-1) = 1/2 - c(-1); pick y where p = 1/2 exactly
        m = symmetric_model()
        # c(0) = 1/2 so the bin (0, 1] given by y = 1/2 has mass c(1) - 1/2
        p = likelihood(m, 0.5)
        assert rate_bits_static(m, [0.5]) == pytest.approx(-math.log2(p))

    def test_laplace_rate_near_entropy(self, laplace_model, laplace_data):
        per_sample = rate_bits_static(laplace_model, laplace_data) / laplace_data.size
        assert abs(per_sample - laplace_bin_entropy(1.0)) < 0.1

    def test_rate_within_reach_of_histogram(self, laplace_model, laplace_data):
        ch = LatentChannel.clipped(laplace_data, (-30, 61))
        best = entropy_bits(hard_histogram(ch))
        assert rate_bits_static(laplace_model, laplace_data) / laplace_data.size - best < 0.2


class TestRateGrad:
    def test_symmetry_center(self):
        assert rate_grad_static(symmetric_model(), [0.0])[0] == pytest.approx(0.0, abs=1e-12)

    def test_vs_finite_differences(self):
        r = np.random.default_rng(13)
        m = MonotoneCdfModel.random(r)
        y = r.uniform(-3, 3, size=200)
        g = rate_grad_static(m, y)
        h = 1e-6
        for k in range(y.size):
            fd = (rate_bits_static(m, [y[k] + h]) - rate_bits_static(m, [y[k] - h])) / (2 * h)
            assert abs(fd - g[k]) <= 1e-5 * max(1.0, abs(g[k]))

    def test_sign_on_rising_side(self, gaussian_model):
        g = rate_grad_static(gaussian_model, [-2.0, -1.5, 1.5, 2.0])
        assert g[0] < 0 and g[1] < 0
        assert g[2] > 0 and g[3] > 0


class TestFit:
    def test_parameter_gradients_vs_finite_differences(self):
        r = np.random.default_rng(14)
        m = MonotoneCdfModel.random(r)
        y = r.normal(0, 2, size=64)
        _, grads = noisy_rate_and_grads(m, y)
        h = 1e-6
        for gi, group in enumerate((m.matrices, m.biases, m.factors)):
            for k, arr in enumerate(group):
                for idx in np.ndindex(arr.shape):
                    old = arr[idx]
                    arr[idx] = old + h
                    up = noisy_rate_and_grads(m, y)[0]
                    arr[idx] = old - h
                    dn = noisy_rate_and_grads(m, y)[0]
                    arr[idx] = old
                    fd = (up - dn) / (2 * h)
                    assert abs(fd - grads[gi][k][idx]) <= 1e-5 * max(1.0, abs(fd))

    def test_degenerate_data(self):
        m = fit(np.random.default_rng(15).normal(0, 0.05, 1000), steps=1000)
        assert likelihood(m, 0.0) > 0.9

    def test_gaussian_3_rate(self):
        r = np.random.default_rng(16)
        y = np.round(r.normal(0, 3, 3000))
        m = fit(y, seed=0)
        h = entropy_bits(discretize_gaussian(0.0, 3.0, (-30, 61)))
        assert abs(rate_bits_static(m, y) / y.size - h) < 0.2

    def test_deterministic(self):
        y = np.random.default_rng(17).normal(0, 2, 300)
        a, b = fit(y, steps=50, seed=3), fit(y, steps=50, seed=3)
        assert a.to_dict() == b.to_dict()

    def test_too_few_samples(self):
        with pytest.raises(FittingError, match="100"):
            fit(np.zeros(50))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_step(self):
        with pytest.raises(FittingError, match="step"):
            fit(np.random.default_rng(1).normal(0, 1, 200), steps=20, learning_rate=float("inf"))


def test_to_distribution_folds_tails(gaussian_model):
    p = to_distribution(gaussian_model, (-2, 5))
    assert abs(p.masses.sum() - 1) < 1e-12
    assert p.masses[0] > likelihood(gaussian_model, -2.0)


def test_amortization_excess_equals_mean_kl():
    from latentcodec.dist import kl_bits
    r = np.random.default_rng(18)
    sup = (-150, 301)
    inputs = [np.round(r.laplace(0, b, 1024)) for b in (1, 8) for _ in range(6)]
    static = fit(np.concatenate(inputs), seed=0)
    q = to_distribution(static, sup)
    excess, kls = [], []
    for y in inputs:
        p = hard_histogram(LatentChannel(y, sup))
        ce = rate_bits_static(static, y) / y.size
        h = entropy_bits(p)
        assert ce >= h
        excess.append(ce - h)
        kls.append(kl_bits(p, q.with_floor()))
    assert np.mean(excess) == pytest.approx(np.mean(kls), rel=0.02)


def test_estimator_api():
    y = np.round(np.random.default_rng(19).normal(0, 2, 400))
    est = EntropyBottleneck(steps=300).fit(y)
    assert est.get_params()["steps"] == 300
    np.testing.assert_allclose(np.exp(est.score_samples([0.0])), est.likelihood([0.0]))
    assert est.rate_bits(y) > 0
