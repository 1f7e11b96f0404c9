"""Rate accounting for adaptive encoding distributions.

An adaptive codec spends side bits ``R_q`` describing each input's own
distributions and saves on the main rate ``R_y``; the static codec reuses one
default distribution per channel. This module weighs the two, measures the
largest possible saving (the KL gap to the defaults), and provides the
parametric GMM side-information baseline with its fixed ``(3K - 1) * C * 8``
bit cost.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .coder import quantize_distribution
from .dist import (
    PROB_FLOOR,
    DiscreteDistribution,
    GaussianMixtureParams,
    Support,
    as_support,
    cross_entropy_bits,
    discretize_gmm,
    kl_bits,
)
from .exceptions import InfiniteRateError, LatentCodecError, SupportError
from .histogram import LatentChannel, hard_histogram

PARAM_BITS = 8
_LEVELS = (1 << PARAM_BITS) - 1
SIGMA_MIN = 0.05
EM_ITERATIONS = 50


def lambda_q(trained_dims, target_dims) -> float:
    """Side-rate weight: trained-upon input area over target input area."""
    (ht, wt), (hg, wg) = trained_dims, target_dims
    if min(ht, wt, hg, wg) <= 0:
        raise LatentCodecError(f"dimensions must be positive, got {trained_dims} and {target_dims}")
    return (ht * wt) / (hg * wg)


@dataclass(frozen=True)
class RateReport:
    R_y_bits: float
    R_q_bits: float
    lambda_q: float
    lambda_x: float = 0.0
    distortion: float | None = None
    pixels: int | None = None
    total: float = field(init=False)

    def __post_init__(self):
        if self.R_y_bits < 0 or self.R_q_bits < 0:
            raise LatentCodecError("rates must be nonnegative")
        total = self.R_y_bits + self.lambda_q * self.R_q_bits
        if self.distortion is not None:
            total += self.lambda_x * self.distortion
        object.__setattr__(self, "total", total)

    @property
    def bpp(self) -> dict | None:
        if not self.pixels:
            return None
        return {"R_y": self.R_y_bits / self.pixels, "R_q": self.R_q_bits / self.pixels,
                "total": self.total / self.pixels}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bpp"] = self.bpp
        return d


@dataclass(frozen=True)
class GapReport:
    """KL gap of one input (``per_channel_kl``, ``delta_r_max_bpp``) or the
    mean over a dataset (``per_image`` filled, ``delta_r_max_bpp`` the mean)."""

    per_channel_kl: tuple
    delta_r_max_bpp: float
    per_image: tuple = ()

    def to_dict(self) -> dict:
        return {
            "per_channel_kl_bits": list(self.per_channel_kl),
            "delta_r_max_bpp": self.delta_r_max_bpp,
            "per_image_delta_r_max_bpp": [r.delta_r_max_bpp for r in self.per_image],
        }


def potential_savings(true_dists: Sequence[DiscreteDistribution],
                      default_dists: Sequence[DiscreteDistribution], dims, s: int) -> GapReport:
    """``(HW/s^2)/(HW) * sum_j KL(p_j || default_j)`` in bits per pixel."""
    if len(true_dists) != len(default_dists):
        raise SupportError(f"{len(true_dists)} true vs {len(default_dists)} default channels")
    H, W = dims
    kls = tuple(kl_bits(p, q) for p, q in zip(true_dists, default_dists))
    latent_per_pixel = (H * W / s**2) / (H * W)
    return GapReport(kls, latent_per_pixel * float(sum(kls)))


def dataset_gap(images: Sequence[Sequence[DiscreteDistribution]],
                default_dists: Sequence[DiscreteDistribution], dims, s: int) -> GapReport:
    reports = tuple(potential_savings(p, default_dists, dims, s) for p in images)
    mean_kl = tuple(np.mean([r.per_channel_kl for r in reports], axis=0).tolist())
    return GapReport(mean_kl, float(np.mean([r.delta_r_max_bpp for r in reports])), reports)


def side_rate_q(latent_q_dists: Sequence[DiscreteDistribution], q_values) -> float:
    """Code length of integer side latents under their own channel models."""
    total = 0.0
    for p, q in zip(latent_q_dists, q_values):
        q = np.asarray(q).ravel()
        if q.size == 0:
            continue
        probs = p.masses[p.index_of(q)]
        if np.any(probs == 0):
            raise InfiniteRateError("side latent symbol with zero probability")
        total += float(-np.sum(np.log2(probs)))
    return total


# --- GMM side-information codec ---------------------------------------------

def _fit_gmm_histogram(p: DiscreteDistribution, K: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weighted EM on bin centres; deterministic quantile seeding."""
    x, m = p.centers, p.masses
    cdf = np.cumsum(m)
    mean = float(np.sum(m * x))
    var = float(np.sum(m * (x - mean) ** 2))
    mu = np.array([x[min(np.searchsorted(cdf, (k + 0.5) / K), x.size - 1)] for k in range(K)], dtype=np.float64)
    sigma = np.full(K, max(np.sqrt(var), SIGMA_MIN))
    w = np.full(K, 1.0 / K)
    for _ in range(EM_ITERATIONS):
        z = (x[None, :] - mu[:, None]) / sigma[:, None]
        log_r = np.log(np.maximum(w, 1e-300))[:, None] - np.log(sigma)[:, None] - 0.5 * z * z
        log_r -= log_r.max(axis=0, keepdims=True)
        r = np.exp(log_r)
        r /= r.sum(axis=0, keepdims=True)
        nk = (r * m).sum(axis=1)
        w = nk / nk.sum()
        live = nk > 1e-12
        mu = np.where(live, (r * m * x).sum(axis=1) / np.maximum(nk, 1e-300), mu)
        # Sheppard's correction for unit-width binning.
        var_k = (r * m * (x[None, :] - mu[:, None]) ** 2).sum(axis=1) / np.maximum(nk, 1e-300) + 1.0 / 12
        sigma = np.where(live, np.sqrt(np.maximum(var_k, SIGMA_MIN**2)), sigma)
    order = np.argsort(mu, kind="stable")
    return w[order], mu[order], sigma[order]


def _quantize_uniform(v, lo, hi):
    return np.clip(np.rint((np.asarray(v) - lo) / (hi - lo) * _LEVELS), 0, _LEVELS).astype(np.uint8)


def _dequantize_uniform(c, lo, hi):
    return lo + np.asarray(c, dtype=np.float64) / _LEVELS * (hi - lo)


def _sigma_range(sup: Support) -> tuple[float, float]:
    return np.log(SIGMA_MIN), np.log(float(sup.n_bins))


def quantize_gmm(w, mu, sigma, support) -> np.ndarray:
    """``3K - 1`` 8-bit codes: weights except the last, then means, then scales."""
    sup = as_support(support)
    lo, hi = _sigma_range(sup)
    return np.concatenate([
        _quantize_uniform(w[:-1], 0.0, 1.0),
        _quantize_uniform(mu, sup.y_min, sup.y_max) if sup.n_bins > 1 else np.zeros(len(mu), np.uint8),
        _quantize_uniform(np.log(np.clip(sigma, SIGMA_MIN, sup.n_bins)), lo, hi),
    ])


def dequantize_gmm(codes, K: int, support) -> GaussianMixtureParams:
    sup = as_support(support)
    codes = np.asarray(codes, dtype=np.uint8)
    if codes.size != 3 * K - 1:
        raise LatentCodecError(f"expected {3 * K - 1} codes for K={K}, got {codes.size}")
    w = _dequantize_uniform(codes[: K - 1], 0.0, 1.0)
    w = np.append(w, max(1.0 - w.sum(), 0.0))
    w = w / w.sum()
    mu = (_dequantize_uniform(codes[K - 1: 2 * K - 1], sup.y_min, sup.y_max)
          if sup.n_bins > 1 else np.full(K, float(sup.y_min)))
    lo, hi = _sigma_range(sup)
    sigma = np.exp(_dequantize_uniform(codes[2 * K - 1:], lo, hi))
    return GaussianMixtureParams(tuple(w), tuple(mu), tuple(sigma))


@dataclass(frozen=True, eq=False)
class GmmSideInfo:
    """Quantized per-channel mixtures: ``codes`` is ``C x (3K - 1)`` uint8."""

    codes: np.ndarray
    n_components: int
    support: Support

    @property
    def side_bits(self) -> int:
        return int(self.codes.size * PARAM_BITS)

    def params(self) -> list[GaussianMixtureParams]:
        return [dequantize_gmm(row, self.n_components, self.support) for row in self.codes]

    def distributions(self, floor: float = PROB_FLOOR) -> list[DiscreteDistribution]:
        return [discretize_gmm(p, self.support).with_floor(floor) for p in self.params()]

    def to_bytes(self) -> bytes:
        return self.codes.astype(np.uint8).tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes, n_channels: int, n_components: int, support) -> "GmmSideInfo":
        codes = np.frombuffer(buf, dtype=np.uint8)
        if codes.size != n_channels * (3 * n_components - 1):
            raise LatentCodecError(f"side info has {codes.size} bytes, expected "
                                   f"{n_channels * (3 * n_components - 1)}")
        return cls(codes.reshape(n_channels, -1).copy(), n_components, as_support(support))


def gmm_side_codec_encode(channels: Sequence[LatentChannel], K: int = 2) -> GmmSideInfo:
    """Fit a K-component GMM to each channel's hard histogram and quantize it."""
    if K not in (1, 2, 3):
        raise LatentCodecError(f"K must be in 1..3, got {K}")
    if not channels:
        raise LatentCodecError("no channels to encode")
    sup = channels[0].support
    rows = []
    for ch in channels:
        if ch.support != sup:
            raise SupportError(f"channel support {ch.support} differs from {sup}")
        p = hard_histogram(ch)
        if np.count_nonzero(p.masses) == 1:
            # Single repeated value: one narrow component carries all weight.
            v = float(p.centers[np.argmax(p.masses)])
            w, mu, sigma = np.eye(1, K)[0], np.full(K, v), np.full(K, SIGMA_MIN)
        else:
            w, mu, sigma = _fit_gmm_histogram(p, K)
        rows.append(quantize_gmm(w, mu, sigma, sup))
    return GmmSideInfo(np.stack(rows), K, sup)


def gmm_side_codec_decode(side: GmmSideInfo) -> list[GaussianMixtureParams]:
    return side.params()


@dataclass(frozen=True, eq=False)
class HistogramSideInfo:
    """Each channel's hard histogram sent as a 16-bit frequency table."""

    tables: tuple

    @property
    def side_bits(self) -> int:
        return int(sum(16 * t.n_bins for t in self.tables))

    def distributions(self) -> list[DiscreteDistribution]:
        return [t.to_distribution() for t in self.tables]


def histogram_side_codec_encode(channels: Sequence[LatentChannel]) -> HistogramSideInfo:
    return HistogramSideInfo(tuple(quantize_distribution(hard_histogram(ch)) for ch in channels))


@dataclass(frozen=True)
class RateComparison:
    static: RateReport
    adaptive: RateReport

    @property
    def winner(self) -> str:
        return "adaptive" if self.adaptive.total < self.static.total else "static"

    def to_dict(self) -> dict:
        return {"static": self.static.to_dict(), "adaptive": self.adaptive.to_dict(), "winner": self.winner}


def adaptive_total_rate(channels: Sequence[LatentChannel], side, default_dists: Sequence[DiscreteDistribution],
                        dims=None, s: int = 1, lam_q: float = 1.0) -> RateComparison:
    """Static rate ``sum_j N_j CE(p_j, default_j)`` against adaptive
    ``sum_j N_j CE(p_j, phat_j) + lambda_q * side_bits``."""
    adaptive_dists = side.distributions()
    if not (len(channels) == len(default_dists) == len(adaptive_dists)):
        raise SupportError("channel count mismatch between data, defaults and side info")
    static_y = adaptive_y = 0.0
    for ch, q_static, q_adapt in zip(channels, default_dists, adaptive_dists):
        p = hard_histogram(ch)
        static_y += ch.n * cross_entropy_bits(p, q_static)
        adaptive_y += ch.n * cross_entropy_bits(p, q_adapt)
    pixels = int(dims[0] * dims[1]) if dims is not None else None
    return RateComparison(
        RateReport(static_y, 0.0, lam_q, pixels=pixels),
        RateReport(adaptive_y, float(side.side_bits), lam_q, pixels=pixels),
    )


def pooled_defaults(dataset: Sequence[Sequence[LatentChannel]], floor: float = PROB_FLOOR) -> list[DiscreteDistribution]:
    """Dataset-optimal static distribution per channel: the pooled hard histogram."""
    n_channels = len(dataset[0])
    out = []
    for j in range(n_channels):
        chans = [img[j] for img in dataset]
        total = sum(ch.n * hard_histogram(ch).masses for ch in chans)
        out.append(DiscreteDistribution.normalized(chans[0].support.y_min, total).with_floor(floor))
    return out


class GMMSideCodec(BaseEstimator):
    """Estimator form of the GMM side-information codec.

    ``fit`` takes a ``C x N`` array (one row per channel) and stores the
    quantized side info; ``transform`` returns each channel's encoding
    distribution masses as a ``C x B`` array.
    """

    def __init__(self, n_components=2, y_min=-40, n_bins=81):
        self.n_components = n_components
        self.y_min = y_min
        self.n_bins = n_bins

    def fit(self, X, y=None):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        chans = [LatentChannel(row, (self.y_min, self.n_bins)) for row in X]
        self.side_info_ = gmm_side_codec_encode(chans, self.n_components)
        self.side_bits_ = self.side_info_.side_bits
        return self

    def transform(self, X=None):
        check_is_fitted(self, "side_info_")
        return np.stack([d.masses for d in self.side_info_.distributions()])
