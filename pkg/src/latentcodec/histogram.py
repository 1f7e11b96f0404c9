"""Histograms of latent channels and the rate gradients they induce.

Bins have unit width and integer centres ``b_i = y_min + i`` (0-indexed
here). The soft histogram splits each sample linearly between its two
neighbouring bins (triangular kernel); the hard histogram assigns it to the
nearest bin (rectangular kernel, ties to the lower bin). The straight-through
variant returns the hard forward value together with the soft Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dist import DiscreteDistribution, Support, as_support
from .exceptions import InfiniteRateError, LatentCodecError, SupportError

LN2 = np.log(2.0)
BIN_WIDTH = 1.0


@dataclass(frozen=True, eq=False)
class LatentChannel:
    """Samples of one latent channel together with its histogram support."""

    values: np.ndarray
    support: Support

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).ravel()
        sup = as_support(self.support)
        if v.size < 1:
            raise LatentCodecError("channel needs at least one value")
        if not np.all(np.isfinite(v)):
            raise SupportError("channel values must be finite")
        bad = (v < sup.y_min) | (v > sup.y_max)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise SupportError(f"value {v[k]!r} at index {k} outside [{sup.y_min}, {sup.y_max}]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "support", sup)

    @property
    def n(self) -> int:
        return self.values.size

    @classmethod
    def clipped(cls, values, support) -> "LatentChannel":
        sup = as_support(support)
        return cls(np.clip(np.asarray(values, dtype=np.float64), sup.y_min, sup.y_max), sup)


@dataclass(frozen=True, eq=False)
class LatentTensor:
    """``M x H_y x W_y`` latent with the downscale factor ``s`` to input pixels."""

    data: np.ndarray
    support: Support
    downscale: int = 1

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[None]
        if d.ndim != 3 or d.shape[0] < 1:
            raise LatentCodecError(f"latent tensor must be M x H x W, got shape {d.shape}")
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "support", as_support(self.support))

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    def channel(self, j: int) -> LatentChannel:
        return LatentChannel(self.data[j], self.support)

    def channels(self) -> list[LatentChannel]:
        return [self.channel(j) for j in range(self.n_channels)]


def _offsets(ch: LatentChannel):
    u = ch.values - ch.support.y_min
    lo = np.floor(u).astype(np.int64)
    frac = u - lo
    # A sample on the top centre has no upper neighbour.
    top = lo == ch.support.n_bins - 1
    return lo, frac, top


def soft_histogram(ch: LatentChannel) -> DiscreteDistribution:
    lo, frac, top = _offsets(ch)
    B = ch.support.n_bins
    hi = np.where(top, lo, lo + 1)
    counts = np.bincount(lo, weights=1.0 - frac, minlength=B)
    counts += np.bincount(hi, weights=np.where(top, 0.0, frac), minlength=B)
    return DiscreteDistribution(ch.support.y_min, counts / ch.n)


def hard_bin_index(ch: LatentChannel) -> np.ndarray:
    """Nearest-bin index; an exact half-way sample goes to the lower bin."""
    u = ch.values - ch.support.y_min
    return np.ceil(u - 0.5).astype(np.int64)


def hard_histogram(ch: LatentChannel) -> DiscreteDistribution:
    counts = np.bincount(hard_bin_index(ch), minlength=ch.support.n_bins).astype(np.float64)
    return DiscreteDistribution(ch.support.y_min, counts / ch.n)


def _gradient_bins(ch: LatentChannel):
    """Bins (lower, upper) whose kernel slopes define d p / d y_k.

    On a bin centre the left-limit slope is used; at the first centre, where
    no left neighbour exists, the right-limit.
    """
    lo, frac, _ = _offsets(ch)
    B = ch.support.n_bins
    on_center = frac == 0
    lower = np.where(on_center, lo - 1, lo)
    lower = np.where(on_center & (lo == 0), 0, lower)
    upper = lower + 1
    degenerate = np.full(lo.shape, B == 1)
    return np.minimum(lower, B - 1), np.minimum(upper, B - 1), degenerate


def soft_jacobian(ch: LatentChannel) -> np.ndarray:
    """Dense ``B x N`` matrix of d p_i / d y_k for the soft histogram."""
    lower, upper, degenerate = _gradient_bins(ch)
    B, N = ch.support.n_bins, ch.n
    jac = np.zeros((B, N))
    slope = np.where(degenerate, 0.0, 1.0 / (N * BIN_WIDTH))
    k = np.arange(N)
    jac[lower, k] -= slope
    jac[upper, k] += slope
    return jac


def ste_histogram(ch: LatentChannel) -> tuple[DiscreteDistribution, np.ndarray]:
    """Hard histogram forward value with the soft histogram's Jacobian."""
    return hard_histogram(ch), soft_jacobian(ch)


def _check_count(ch: LatentChannel, pixels, s) -> None:
    if pixels is None:
        return
    H, W = pixels
    expected = H * W / (s * s)
    if expected != ch.n:
        raise LatentCodecError(f"dimension mismatch: HW/s^2 = {expected:g} but channel has {ch.n} values")


def _log2_masses(phat: DiscreteDistribution, needed: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logq = np.log(phat.masses) / LN2
    if np.any(~np.isfinite(logq[needed])):
        i = int(np.flatnonzero(needed & ~np.isfinite(logq))[0])
        raise InfiniteRateError(f"bin {phat.y_min + i} is used but has zero probability")
    return logq


def rate_bits(ch: LatentChannel, phat: DiscreteDistribution, pixels=None, s: int = 1,
              kernel: str = "hard") -> float:
    """Channel rate ``(HW/s^2) * CE(p, phat)`` with ``p`` the channel histogram."""
    if phat.support != ch.support:
        raise SupportError(f"support mismatch: {phat.support} vs {ch.support}")
    _check_count(ch, pixels, s)
    p = {"hard": hard_histogram, "soft": soft_histogram}[kernel](ch)
    needed = p.masses > 0
    logq = _log2_masses(phat, needed)
    return float(-ch.n * np.sum(p.masses[needed] * logq[needed]))


def element_rate_bits(y, phat: DiscreteDistribution, orientation: str = "interpolate"):
    """Per-element code length, linearly interpolated between the two nearest bins.

    ``orientation="interpolate"`` weights the lower bin by ``1 - alpha`` so a
    sample on a bin centre costs exactly that bin's code length.
    ``orientation="as_written"`` weights the lower bin by ``alpha`` instead.
    """
    if orientation not in ("interpolate", "as_written"):
        raise ValueError(f"unknown orientation {orientation!r}")
    ch = LatentChannel(np.atleast_1d(y), phat.support)
    lo, alpha, top = _offsets(ch)
    hi = np.where(top, lo, lo + 1)
    needed = np.zeros(phat.n_bins, dtype=bool)
    needed[lo] = True
    needed[hi] = True
    logq = _log2_masses(phat, needed)
    w_lo = 1.0 - alpha if orientation == "interpolate" else alpha
    out = -(w_lo * logq[lo] + (1.0 - w_lo) * logq[hi])
    return float(out[0]) if np.ndim(y) == 0 else out


@dataclass(frozen=True)
class RateGradient:
    """Per-sample d R / d y_k in bits per unit.

    ``simplified`` is the difference of neighbouring code lengths (exact when
    the reconstruction is held fixed). ``unsimplified`` keeps the
    ``p_i / (phat_i ln 2) + log2 phat_i`` bracket, exact when the
    reconstruction moves one-for-one with the histogram. ``at_boundary``
    flags samples on a half-integer hard-assignment boundary.
    """

    simplified: np.ndarray
    unsimplified: np.ndarray
    at_boundary: np.ndarray


def rate_grad(ch: LatentChannel, phat: DiscreteDistribution, p: DiscreteDistribution | None = None,
              pixels=None, s: int = 1) -> RateGradient:
    if phat.support != ch.support:
        raise SupportError(f"support mismatch: {phat.support} vs {ch.support}")
    _check_count(ch, pixels, s)
    if p is None:
        p = soft_histogram(ch)
    lower, upper, degenerate = _gradient_bins(ch)
    needed = np.zeros(phat.n_bins, dtype=bool)
    needed[lower] = True
    needed[upper] = True
    logq = _log2_masses(phat, needed)
    with np.errstate(divide="ignore", invalid="ignore"):
        bracket = np.where(needed, p.masses / (phat.masses * LN2) + logq, 0.0)
    scale = np.where(degenerate, 0.0, -1.0 / BIN_WIDTH)
    simplified = scale * (logq[upper] - logq[lower])
    unsimplified = scale * (bracket[upper] - bracket[lower])
    frac = ch.values - ch.support.y_min - np.floor(ch.values - ch.support.y_min)
    return RateGradient(simplified, unsimplified, frac == 0.5)


class HistogramEstimator(BaseEstimator):
    """Fit a per-channel histogram; ``kernel`` is ``"hard"``, ``"soft"`` or ``"ste"``.

    After ``fit``, ``distribution_`` holds the forward histogram and, for the
    soft and straight-through kernels, ``jacobian_`` the ``B x N`` backward
    Jacobian.
    """

    def __init__(self, y_min=-20, n_bins=41, kernel="ste"):
        self.y_min = y_min
        self.n_bins = n_bins
        self.kernel = kernel

    def fit(self, X, y=None):
        ch = LatentChannel(np.asarray(X, dtype=np.float64).ravel(), (self.y_min, self.n_bins))
        if self.kernel == "hard":
            self.distribution_, self.jacobian_ = hard_histogram(ch), None
        elif self.kernel == "soft":
            self.distribution_, self.jacobian_ = soft_histogram(ch), soft_jacobian(ch)
        elif self.kernel == "ste":
            self.distribution_, self.jacobian_ = ste_histogram(ch)
        else:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        self.n_samples_ = ch.n
        return self

    def transform(self, X):
        """Code length in bits of each value of ``X`` under the fitted histogram."""
        check_is_fitted(self, "distribution_")
        return element_rate_bits(np.asarray(X, dtype=np.float64).ravel(), self.distribution_)
