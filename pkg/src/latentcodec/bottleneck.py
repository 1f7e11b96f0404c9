"""Static factorized entropy bottleneck.

The CDF ``c(y)`` is a scalar network with layer widths ``[1, 3, 3, 3, 3, 1]``::

    z_k = softplus(M_k) @ h_{k-1} + b_k
    h_k = z_k + tanh(a_k) * tanh(z_k)          (k < 4)
    c(y) = sigmoid(z_4)

Softplus keeps every weight positive and ``|tanh(a_k)| < 1`` keeps each
nonlinearity strictly increasing, so ``c`` is monotone for any parameters.
The density ``f = dc/dy`` and all parameter gradients are propagated by hand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils.validation import check_is_fitted

from .dist import PROB_FLOOR, DiscreteDistribution, as_support
from .exceptions import FittingError, LatentCodecError
from .histogram import LatentChannel

LN2 = np.log(2.0)
WIDTHS = (1, 3, 3, 3, 3, 1)
N_LAYERS = len(WIDTHS) - 1
_FIT_LIKELIHOOD_BOUND = 1e-9


def _softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class MonotoneCdfModel:
    """Raw (pre-reparameterization) parameters of the CDF network."""

    matrices: list
    biases: list
    factors: list

    @classmethod
    def initial(cls, init_scale: float = 10.0, seed: int = 0) -> "MonotoneCdfModel":
        """Roughly a logistic CDF of width ``init_scale`` centred near zero."""
        rng = np.random.default_rng(seed)
        scale = init_scale ** (1.0 / N_LAYERS)
        matrices, biases, factors = [], [], []
        for k in range(N_LAYERS):
            fan_out, fan_in = WIDTHS[k + 1], WIDTHS[k]
            value = np.log(np.expm1(1.0 / scale / fan_out))
            matrices.append(np.full((fan_out, fan_in), value))
            biases.append(rng.uniform(-0.5, 0.5, size=(fan_out, 1)))
            if k < N_LAYERS - 1:
                factors.append(np.zeros((fan_out, 1)))
        return cls(matrices, biases, factors)

    @classmethod
    def random(cls, rng: np.random.Generator, spread: float = 2.0) -> "MonotoneCdfModel":
        """Arbitrary parameters, for property tests."""
        matrices = [rng.normal(0, spread, (WIDTHS[k + 1], WIDTHS[k])) for k in range(N_LAYERS)]
        biases = [rng.normal(0, spread, (WIDTHS[k + 1], 1)) for k in range(N_LAYERS)]
        factors = [rng.normal(0, spread, (WIDTHS[k + 1], 1)) for k in range(N_LAYERS - 1)]
        return cls(matrices, biases, factors)

    def copy(self) -> "MonotoneCdfModel":
        return MonotoneCdfModel([m.copy() for m in self.matrices], [b.copy() for b in self.biases],
                                [a.copy() for a in self.factors])

    # -- forward passes ------------------------------------------------------

    def _forward(self, y, tangent: bool = False):
        h = np.asarray(y, dtype=np.float64).reshape(1, -1)
        dh = np.ones_like(h) if tangent else None
        cache = []
        for k in range(N_LAYERS):
            W = _softplus(self.matrices[k])
            z = W @ h + self.biases[k]
            if tangent:
                dz = W @ dh
            if k < N_LAYERS - 1:
                fa = np.tanh(self.factors[k])
                t = np.tanh(z)
                cache.append((h, W, fa, t))
                if tangent:
                    dh = dz * (1.0 + fa * (1.0 - t * t))
                h = z + fa * t
            else:
                cache.append((h, W, None, None))
                h = z
        logits = h[0]
        return logits, (dz[0] if tangent else None), cache

    def logits(self, y) -> np.ndarray:
        return self._forward(y)[0]

    def cdf(self, y) -> np.ndarray:
        return expit(self.logits(y))

    def density(self, y) -> np.ndarray:
        """``f(y) = dc/dy``, exact."""
        logits, dlogits, _ = self._forward(y, tangent=True)
        s = expit(logits)
        return s * (1.0 - s) * dlogits

    def _backward(self, cache, g):
        """Parameter gradients given d loss / d logits ``g`` (one row per sample)."""
        g = np.asarray(g, dtype=np.float64).reshape(1, -1)
        dM, db, da = [None] * N_LAYERS, [None] * N_LAYERS, [None] * (N_LAYERS - 1)
        for k in reversed(range(N_LAYERS)):
            h_in, W, fa, t = cache[k]
            if k < N_LAYERS - 1:
                da[k] = np.sum(g * t, axis=1, keepdims=True) * (1.0 - fa * fa)
                dz = g * (1.0 + fa * (1.0 - t * t))
            else:
                dz = g
            dM[k] = (dz @ h_in.T) * expit(self.matrices[k])
            db[k] = np.sum(dz, axis=1, keepdims=True)
            g = W.T @ dz
        return dM, db, da

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "widths": list(WIDTHS),
            "matrices": [m.tolist() for m in self.matrices],
            "biases": [b.ravel().tolist() for b in self.biases],
            "factors": [a.ravel().tolist() for a in self.factors],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MonotoneCdfModel":
        if tuple(doc.get("widths", ())) != WIDTHS:
            raise LatentCodecError(f"unsupported layer widths {doc.get('widths')!r}")
        matrices = [np.asarray(m, dtype=np.float64).reshape(WIDTHS[k + 1], WIDTHS[k])
                    for k, m in enumerate(doc["matrices"])]
        biases = [np.asarray(b, dtype=np.float64).reshape(-1, 1) for b in doc["biases"]]
        factors = [np.asarray(a, dtype=np.float64).reshape(-1, 1) for a in doc["factors"]]
        if len(matrices) != N_LAYERS or len(biases) != N_LAYERS or len(factors) != N_LAYERS - 1:
            raise LatentCodecError("wrong number of layers in model document")
        return cls(matrices, biases, factors)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "MonotoneCdfModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_finite(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise LatentCodecError("likelihood input must be finite")
    return y


def _bin_probability(model: MonotoneCdfModel, y):
    """``c(y + 1/2) - c(y - 1/2)`` evaluated in the tail that keeps precision."""
    lu, _, cache_u = model._forward(y + 0.5)
    ll, _, cache_l = model._forward(y - 0.5)
    # Reflect to the lower tail when both logits are positive.
    sign = np.where(lu + ll > 0, -1.0, 1.0)
    p = np.abs(expit(sign * lu) - expit(sign * ll))
    return p, lu, ll, cache_u, cache_l


def likelihood(model: MonotoneCdfModel, y, floor: float = 0.0):
    """Probability of the unit bin centred on ``y``; optionally clamped below."""
    y = _check_finite(y)
    p = _bin_probability(model, np.atleast_1d(y).ravel())[0]
    p = np.maximum(p, floor).reshape(np.shape(y))
    return float(p) if np.ndim(y) == 0 else p


def _values(ch) -> np.ndarray:
    return ch.values if isinstance(ch, LatentChannel) else _check_finite(np.ravel(ch))


def rate_bits_static(model: MonotoneCdfModel, ch) -> float:
    """Sum of code lengths ``-log2 p(y_i)``, with ``p`` floored at ``2**-16``."""
    return float(-np.sum(np.log2(likelihood(model, _values(ch), floor=PROB_FLOOR))))


def rate_grad_static(model: MonotoneCdfModel, ch) -> np.ndarray:
    """d rate / d y_k in bits per unit: ``-(f(y+1/2) - f(y-1/2)) / (p(y) ln 2)``.

    Zero where the likelihood sits on the coding floor.
    """
    y = _values(ch)
    p = likelihood(model, y)
    df = model.density(y + 0.5) - model.density(y - 0.5)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = -df / (p * LN2)
    return np.where(p > PROB_FLOOR, g, 0.0)


def noisy_rate_and_grads(model: MonotoneCdfModel, y):
    """Mean ``-log2 p(y)`` over ``y`` and its gradients w.r.t. raw parameters."""
    p, lu, ll, cache_u, cache_l = _bin_probability(model, y)
    clamped = p < _FIT_LIKELIHOOD_BOUND
    p = np.maximum(p, _FIT_LIKELIHOOD_BOUND)
    n = y.size
    loss = float(-np.sum(np.log(p)) / (n * LN2))
    # d(-log p)/d logits; sigmoid' is symmetric so the reflection drops out.
    du = expit(lu) * expit(-lu)
    dl = expit(ll) * expit(-ll)
    coef = np.where(clamped, 0.0, -1.0 / (p * n * LN2))
    gu = model._backward(cache_u, coef * du)
    gl = model._backward(cache_l, -coef * dl)
    grads = [[a + b for a, b in zip(xu, xl)] for xu, xl in zip(gu, gl)]
    return loss, grads


def fit(samples, steps: int = 2000, learning_rate: float = 1.0, seed: int = 0,
        init_scale: float = 10.0) -> MonotoneCdfModel:
    """Plain gradient descent on the mean noisy code length ``-log2 p(y + u)``.

    ``u ~ U(-1/2, 1/2)`` is redrawn every step from a generator seeded with
    ``seed``; identical inputs give identical parameters.
    """
    y = np.asarray(samples, dtype=np.float64).ravel()
    if y.size < 100:
        raise FittingError(f"need at least 100 samples, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise FittingError("samples must be finite")
    rng = np.random.default_rng(seed)
    model = MonotoneCdfModel.initial(init_scale, seed)
    params = [model.matrices, model.biases, model.factors]
    for step in range(steps):
        noisy = y + rng.uniform(-0.5, 0.5, size=y.size)
        loss, grads = noisy_rate_and_grads(model, noisy)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for group in grads for g in group):
            raise FittingError(f"loss diverged at step {step}")
        for group, ggroup in zip(params, grads):
            for k, g in enumerate(ggroup):
                group[k] -= learning_rate * g
    return model


def to_distribution(model: MonotoneCdfModel, support) -> DiscreteDistribution:
    """Bin masses over ``support`` with the off-support tails folded into the edges."""
    sup = as_support(support)
    edges = np.arange(sup.n_bins + 1) + sup.y_min - 0.5
    c = model.cdf(edges)
    masses = np.diff(c)
    masses[0] += c[0]
    masses[-1] += 1.0 - c[-1]
    return DiscreteDistribution.normalized(sup.y_min, np.maximum(masses, 0.0))


class EntropyBottleneck(DensityMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit`.

    ``score_samples`` returns natural-log bin likelihoods so the estimator
    composes with scikit-learn model selection.
    """

    def __init__(self, steps=2000, learning_rate=1.0, random_state=0, init_scale=10.0):
        self.steps = steps
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.init_scale = init_scale

    def fit(self, X, y=None):
        self.model_ = fit(np.ravel(X), self.steps, self.learning_rate, self.random_state, self.init_scale)
        return self

    def likelihood(self, X):
        check_is_fitted(self, "model_")
        return likelihood(self.model_, np.ravel(X), floor=PROB_FLOOR)

    def score_samples(self, X):
        return np.log(self.likelihood(X))

    def rate_bits(self, X) -> float:
        check_is_fitted(self, "model_")
        return rate_bits_static(self.model_, np.ravel(X))

    def to_distribution(self, support) -> DiscreteDistribution:
        check_is_fitted(self, "model_")
        return to_distribution(self.model_, support)
