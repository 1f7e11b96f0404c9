"""Seeded synthetic data so every experiment runs without external datasets."""

from __future__ import annotations

import numpy as np

from .histogram import LatentChannel

LAPLACE_SCALES = (1.0, 8.0)
DEFAULT_SUPPORT = (-40, 81)


def two_laplacian_dataset(n_inputs: int = 100, n_channels: int = 8, n_per_channel: int = 1024,
                          scales=LAPLACE_SCALES, support=DEFAULT_SUPPORT, seed: int = 0):
    """Inputs whose channels are Laplacian with a per-(input, channel) scale
    drawn from ``scales``; values are clipped to ``support``.

    Returns ``(dataset, scale_index)`` where ``dataset[i][j]`` is a
    :class:`LatentChannel` and ``scale_index`` is ``n_inputs x n_channels``.
    """
    rng = np.random.default_rng(seed)
    scale_idx = rng.integers(0, len(scales), size=(n_inputs, n_channels))
    dataset = []
    for i in range(n_inputs):
        row = []
        for j in range(n_channels):
            y = rng.laplace(0.0, scales[scale_idx[i, j]], size=n_per_channel)
            row.append(LatentChannel.clipped(y, support))
        dataset.append(row)
    return dataset, scale_idx


class Texture:
    """Smooth procedural texture: a random sum of plane waves.

    Evaluating at displaced coordinates gives exactly-known motion with no
    "entering the frame" holes in the input domain.
    """

    def __init__(self, n_waves: int = 24, min_period: float = 12.0, max_period: float = 96.0, seed: int = 0):
        rng = np.random.default_rng(seed)
        theta = rng.uniform(0, np.pi, n_waves)
        period = np.exp(rng.uniform(np.log(min_period), np.log(max_period), n_waves))
        self.kx = 2 * np.pi * np.cos(theta) / period
        self.ky = 2 * np.pi * np.sin(theta) / period
        self.phase = rng.uniform(0, 2 * np.pi, n_waves)
        self.amp = rng.uniform(0.5, 1.0, n_waves) / np.sqrt(n_waves)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=np.float64)[..., None]
        y = np.asarray(y, dtype=np.float64)[..., None]
        return 0.5 + 0.5 * np.sum(self.amp * np.sin(self.kx * x + self.ky * y + self.phase), axis=-1)

    def frame(self, shape, field=None) -> np.ndarray:
        """Render ``shape``; with ``field`` (H x W x 2, ``(vx, vy)``) the
        pixel at ``p`` shows the texture at ``p - v(p)``."""
        H, W = shape
        yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
        if field is not None:
            xx = xx - field[..., 0]
            yy = yy - field[..., 1]
        return self(xx, yy)


def textured_frame(shape=(224, 224), seed: int = 0, field=None) -> np.ndarray:
    return Texture(seed=seed).frame(shape, field)


def random_point_cloud(n_points: int = 1024, seed: int = 0) -> np.ndarray:
    """``P x 3`` points uniformly inside the unit ball."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n_points, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.uniform(0, 1, size=(n_points, 1)) ** (1 / 3)


def random_feature_map(points: np.ndarray, n_features: int = 16, seed: int = 0) -> np.ndarray:
    """Pointwise features ``relu(A x + b)`` for a fixed random layer; ``N x P``."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n_features, 3))
    b = rng.normal(scale=0.1, size=(n_features, 1))
    return np.maximum(A @ np.asarray(points, dtype=np.float64).T + b, 0.0)
