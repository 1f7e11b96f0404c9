"""Point-cloud codec analytics: max-pooled features, critical point sets,
rate-accuracy Pareto fronts and Bjontegaard-delta metrics."""

from __future__ import annotations

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import PchipInterpolator

from .exceptions import LatentCodecError


def as_point_cloud(points, layout: str = "PxN") -> np.ndarray:
    """Return a ``P x 3`` array from ``P x 3`` (``layout="PxN"``) or ``3 x P`` input."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise LatentCodecError(f"point cloud must be rank 2, got shape {x.shape}")
    if layout == "NxP":
        x = x.T
    elif layout != "PxN":
        raise ValueError(f"unknown layout {layout!r}")
    if x.shape[1] != 3 or x.shape[0] < 1:
        raise LatentCodecError(f"expected P x 3 points, got shape {x.shape}")
    return x


def _check_fmap(fmap) -> np.ndarray:
    f = np.asarray(fmap, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] < 1:
        raise LatentCodecError(f"feature map must be N x P with P >= 1, got shape {f.shape}")
    return f


def max_pool_features(fmap) -> np.ndarray:
    """Per-feature maximum over the point axis of an ``N x P`` map."""
    return _check_fmap(fmap).max(axis=1)


def critical_point_set(fmap) -> np.ndarray:
    """Sorted indices of every point attaining some feature's maximum.

    All tied maximizers are included, so pooling over the returned subset
    always reproduces the full pooled vector.
    """
    f = _check_fmap(fmap)
    hits = f == f.max(axis=1, keepdims=True)
    return np.flatnonzero(hits.any(axis=0))


# --- rate-accuracy curves ---------------------------------------------------

def pareto_front(rate, accuracy) -> tuple[np.ndarray, np.ndarray]:
    """Non-dominated (lower rate, higher accuracy) points, sorted by rate.

    Exact duplicates collapse to one point so the front is strictly
    increasing in both coordinates.
    """
    r = np.asarray(rate, dtype=np.float64).ravel()
    a = np.asarray(accuracy, dtype=np.float64).ravel()
    if r.size == 0 or r.shape != a.shape:
        raise LatentCodecError("need a non-empty set of (rate, accuracy) pairs")
    order = np.lexsort((-a, r))
    keep = []
    best = -np.inf
    for i in order:
        if a[i] > best:
            keep.append(i)
            best = a[i]
    keep = np.array(keep)
    return r[keep], a[keep]


def _integral(x, y, lo, hi) -> float:
    if x.size >= 4:
        return float(PchipInterpolator(x, y).integrate(lo, hi))
    # Trapezoid rule is exact for the piecewise-linear interpolant.
    grid = np.unique(np.concatenate([[lo, hi], x[(x > lo) & (x < hi)]]))
    return float(trapezoid(np.interp(grid, x, y), grid))


def _prepare(rate, quality):
    r = np.asarray(rate, dtype=np.float64).ravel()
    q = np.asarray(quality, dtype=np.float64).ravel()
    if r.size < 2 or r.shape != q.shape:
        raise LatentCodecError("each curve needs at least two (rate, quality) points")
    if np.any(r <= 0):
        raise LatentCodecError("rates must be positive")
    return np.log2(r), q


def _sorted_unique(x, y, what):
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    if np.any(np.diff(x) == 0):
        raise LatentCodecError(f"repeated {what} values; curve is not a function of {what}")
    return x, y


def bd_rate(anchor_rate, anchor_quality, test_rate, test_quality) -> float:
    """Average rate difference (percent) of ``test`` vs ``anchor`` at equal quality.

    The log2-rate of each curve is interpolated as a function of quality
    (monotone piecewise-cubic Hermite for 4+ points, linear below that),
    averaged over the overlapping quality interval, and mapped back with
    ``2**delta - 1``.
    """
    la, qa = _prepare(anchor_rate, anchor_quality)
    lt, qt = _prepare(test_rate, test_quality)
    qa, la = _sorted_unique(qa, la, "quality")
    qt, lt = _sorted_unique(qt, lt, "quality")
    lo, hi = max(qa[0], qt[0]), min(qa[-1], qt[-1])
    if not hi > lo:
        raise LatentCodecError("disjoint quality ranges")
    delta = (_integral(qt, lt, lo, hi) - _integral(qa, la, lo, hi)) / (hi - lo)
    return float((2.0**delta - 1.0) * 100.0)


def bd_quality(anchor_rate, anchor_quality, test_rate, test_quality) -> float:
    """Average quality difference of ``test`` vs ``anchor`` over the shared log-rate range."""
    la, qa = _prepare(anchor_rate, anchor_quality)
    lt, qt = _prepare(test_rate, test_quality)
    la, qa = _sorted_unique(la, qa, "rate")
    lt, qt = _sorted_unique(lt, qt, "rate")
    lo, hi = max(la[0], lt[0]), min(la[-1], lt[-1])
    if not hi > lo:
        raise LatentCodecError("disjoint rate ranges")
    return float((_integral(lt, qt, lo, hi) - _integral(la, qa, lo, hi)) / (hi - lo))


def bd_metric(anchor, test, mode: str = "rate") -> float:
    """``anchor``/``test`` are ``(rate, quality)`` pairs of sequences."""
    if mode == "rate":
        return bd_rate(*anchor, *test)
    if mode == "quality":
        return bd_quality(*anchor, *test)
    raise ValueError(f"mode must be 'rate' or 'quality', got {mode!r}")
