"""Discrete encoding distributions on unit-width integer bins and the
information measures used for rate accounting (all in bits)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import ndtr

from .exceptions import InfiniteRateError, LatentCodecError, SupportError
from .tensorio import read_tensor, write_tensor

MASS_TOL = 1e-9
PROB_FLOOR = 2.0**-16


class Support(NamedTuple):
    """Integer-centred bins ``y_min, y_min + 1, ..., y_min + n_bins - 1``."""

    y_min: int
    n_bins: int

    @property
    def y_max(self) -> int:
        return self.y_min + self.n_bins - 1

    @property
    def centers(self) -> np.ndarray:
        return np.arange(self.y_min, self.y_min + self.n_bins, dtype=np.float64)


def as_support(support) -> Support:
    y_min, n_bins = support
    if int(y_min) != y_min or int(n_bins) != n_bins:
        raise SupportError(f"support must be integral, got {support!r}")
    if n_bins < 1:
        raise SupportError(f"support needs at least one bin, got B={n_bins}")
    return Support(int(y_min), int(n_bins))


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Probability masses over ``Support(y_min, len(masses))``.

    Masses are validated (nonnegative, summing to one within 1e-9) and
    stored read-only.
    """

    y_min: int
    masses: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.masses, dtype=np.float64).ravel()
        if m.size < 1:
            raise LatentCodecError("distribution needs at least one bin")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise LatentCodecError("masses must be finite and nonnegative")
        total = m.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise LatentCodecError(f"masses sum to {total!r}, not 1")
        m.setflags(write=False)
        object.__setattr__(self, "y_min", int(self.y_min))
        object.__setattr__(self, "masses", m)

    @classmethod
    def normalized(cls, y_min: int, weights) -> "DiscreteDistribution":
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if not total > 0:
            raise LatentCodecError("cannot normalize zero total mass")
        return cls(y_min, w / total)

    @classmethod
    def uniform(cls, support) -> "DiscreteDistribution":
        sup = as_support(support)
        return cls(sup.y_min, np.full(sup.n_bins, 1.0 / sup.n_bins))

    @property
    def support(self) -> Support:
        return Support(self.y_min, self.masses.size)

    @property
    def n_bins(self) -> int:
        return self.masses.size

    @property
    def centers(self) -> np.ndarray:
        return self.support.centers

    def index_of(self, values) -> np.ndarray:
        """Bin index of integer-valued ``values``; raises on out-of-support."""
        v = np.asarray(values)
        idx = np.rint(v).astype(np.int64) - self.y_min
        bad = (idx < 0) | (idx >= self.n_bins)
        if np.any(bad):
            first = int(np.flatnonzero(bad.ravel())[0])
            raise SupportError(f"value {v.ravel()[first]!r} at index {first} outside support {self.support}")
        return idx

    def with_floor(self, floor: float = PROB_FLOOR) -> "DiscreteDistribution":
        """Clamp masses to at least ``floor`` and renormalize."""
        return DiscreteDistribution.normalized(self.y_min, np.maximum(self.masses, floor))

    def __eq__(self, other):
        if not isinstance(other, DiscreteDistribution):
            return NotImplemented
        return self.y_min == other.y_min and np.array_equal(self.masses, other.masses)

    __hash__ = None


def _check_same_support(p: DiscreteDistribution, q: DiscreteDistribution) -> None:
    if p.support != q.support:
        raise SupportError(f"support mismatch: {p.support} vs {q.support}")


def entropy_bits(p: DiscreteDistribution) -> float:
    m = p.masses[p.masses > 0]
    return float(-np.sum(m * np.log2(m)))


def cross_entropy_bits(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """Expected code length of symbols drawn from ``p`` coded with ``q``."""
    _check_same_support(p, q)
    nz = p.masses > 0
    if np.any(q.masses[nz] == 0):
        i = int(np.flatnonzero(nz & (q.masses == 0))[0])
        raise InfiniteRateError(f"bin {p.y_min + i} has p>0 but q=0")
    return float(-np.sum(p.masses[nz] * np.log2(q.masses[nz])))


def kl_bits(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    _check_same_support(p, q)
    nz = p.masses > 0
    if np.any(q.masses[nz] == 0):
        i = int(np.flatnonzero(nz & (q.masses == 0))[0])
        raise InfiniteRateError(f"bin {p.y_min + i} has p>0 but q=0")
    pm, qm = p.masses[nz], q.masses[nz]
    # Direct log-ratio form keeps KL(p, p) exactly zero.
    return float(max(np.sum(pm * np.log2(pm / qm)), 0.0))


def _gaussian_bin_masses(mu: float, sigma: float, sup: Support) -> np.ndarray:
    if not sigma > 0:
        raise LatentCodecError(f"sigma must be positive, got {sigma!r}")
    edges = (np.arange(sup.n_bins + 1) + sup.y_min - 0.5 - mu) / sigma
    # Differences of upper tails on the right half keep precision far from the mean.
    lower, upper = edges[:-1], edges[1:]
    right = lower > 0
    masses = np.where(right, ndtr(-lower) - ndtr(-upper), ndtr(upper) - ndtr(lower))
    # Off-support tails fold into the edge bins.
    masses[0] += ndtr(edges[0])
    masses[-1] += ndtr(-edges[-1])
    return np.maximum(masses, 0.0)


def discretize_gaussian(mu: float, sigma: float, support) -> DiscreteDistribution:
    """Binned area of N(mu, sigma^2) over unit bins, tails folded into edges."""
    sup = as_support(support)
    return DiscreteDistribution.normalized(sup.y_min, _gaussian_bin_masses(float(mu), float(sigma), sup))


@dataclass(frozen=True)
class GaussianMixtureParams:
    weights: tuple
    means: tuple
    scales: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        mu = tuple(float(x) for x in self.means)
        s = tuple(float(x) for x in self.scales)
        if not (len(w) == len(mu) == len(s) >= 1):
            raise LatentCodecError("mixture needs matching, non-empty weights/means/scales")
        if any(x < 0 for x in w) or abs(sum(w) - 1.0) > MASS_TOL:
            raise LatentCodecError(f"mixture weights must be nonnegative and sum to 1, got {w}")
        if any(not x > 0 for x in s):
            raise LatentCodecError(f"mixture scales must be positive, got {s}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "scales", s)

    @property
    def n_components(self) -> int:
        return len(self.weights)


def discretize_gmm(params: GaussianMixtureParams, support) -> DiscreteDistribution:
    sup = as_support(support)
    total = np.zeros(sup.n_bins)
    for w, mu, sigma in zip(params.weights, params.means, params.scales):
        if w > 0:
            total += w * _gaussian_bin_masses(mu, sigma, sup)
    return DiscreteDistribution.normalized(sup.y_min, total)


def save_distribution(p: DiscreteDistribution, path) -> None:
    """Write masses as a rank-1 tensor file plus a ``<path>.json`` sidecar."""
    write_tensor(p.masses.astype(np.float32), path)
    Path(f"{path}.json").write_text(json.dumps({"y_min": p.y_min, "B": p.n_bins}) + "\n")


def load_distribution(path) -> DiscreteDistribution:
    meta = json.loads(Path(f"{path}.json").read_text())
    masses = read_tensor(path).astype(np.float64).ravel()
    if masses.size != meta["B"]:
        raise SupportError(f"{path}: sidecar B={meta['B']} but tensor has {masses.size} values")
    return DiscreteDistribution.normalized(meta["y_min"], masses)


def stack_masses(dists: Sequence[DiscreteDistribution]) -> np.ndarray:
    return np.stack([d.masses for d in dists])
