"""Input- and latent-domain motion: block matching, motion scaling through a
pooling stack, bilinear motion compensation and NRMSE scoring.

Motion fields are ``H x W x 2`` arrays of ``(vx, vy)``. A field ``v`` says the
target pixel at ``p`` shows the reference content from ``p - v``; shifting a
frame right by three pixels is the constant field ``(3, 0)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_erosion, correlate

from .exceptions import LatentCodecError

LATENT_BLOCK = 3
LATENT_RANGE = 5
# Affine sampling ranges: translation px, scale factor, shear deg, rotation deg.
AFFINE_RANGES = {
    "tx": (-32.0, 32.0), "ty": (-32.0, 32.0),
    "sx": (0.95, 1.05), "sy": (0.95, 1.05),
    "shear_x": (-5.0, 5.0), "shear_y": (-5.0, 5.0),
    "rot": (-10.0, 10.0),
}
IDENTITY_AFFINE = {"tx": 0.0, "ty": 0.0, "sx": 1.0, "sy": 1.0, "shear_x": 0.0, "shear_y": 0.0, "rot": 0.0}


@dataclass(frozen=True, eq=False)
class MotionField:
    vectors: np.ndarray
    mask: np.ndarray
    domain: str = "input"

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 2:
            raise LatentCodecError(f"motion vectors must be H x W x 2, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise LatentCodecError("motion vectors must be finite")
        m = np.broadcast_to(np.asarray(self.mask, dtype=bool), v.shape[:2]).copy()
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "mask", m)

    @classmethod
    def constant(cls, shape, vx: float, vy: float, domain: str = "input") -> "MotionField":
        v = np.empty((*shape, 2))
        v[..., 0], v[..., 1] = vx, vy
        return cls(v, np.ones(shape, dtype=bool), domain)

    @property
    def shape(self) -> tuple[int, int]:
        return self.vectors.shape[:2]


def _as_planes(frame) -> tuple[np.ndarray, bool]:
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim == 2:
        return f[None], True
    if f.ndim == 3:
        return f, False
    raise LatentCodecError(f"frame must be H x W or C x H x W, got shape {f.shape}")


def _box_sum(a: np.ndarray, block: int) -> np.ndarray:
    """Sum over every ``block x block`` window (valid positions only)."""
    c = np.cumsum(np.pad(a, ((1, 0), (1, 0))), axis=0)
    c = np.cumsum(c, axis=1)
    return c[block:, block:] - c[:-block, block:] - c[block:, :-block] + c[:-block, :-block]


def _candidates(search_range: int) -> list[tuple[int, int]]:
    r = range(-search_range, search_range + 1)
    # Preference order for ties: smaller magnitude, then (vy, vx) lexicographic.
    return sorted(((vx, vy) for vy in r for vx in r), key=lambda v: (v[0] ** 2 + v[1] ** 2, v[1], v[0]))


def block_match(ref, tgt, block: int = LATENT_BLOCK, search_range: int = LATENT_RANGE) -> MotionField:
    """Exhaustive per-pixel SSD block matching of ``tgt`` against ``ref``.

    Pixels whose block, moved anywhere in the search window, would leave the
    frame are masked out and carry a zero vector.
    """
    R, _ = _as_planes(ref)
    T, _ = _as_planes(tgt)
    if R.shape != T.shape:
        raise LatentCodecError(f"frame shapes differ: {R.shape} vs {T.shape}")
    if block < 1 or block % 2 == 0:
        raise LatentCodecError(f"block must be a positive odd integer, got {block}")
    if search_range < 0:
        raise LatentCodecError(f"search range must be >= 0, got {search_range}")
    _, H, W = T.shape
    if block > min(H, W):
        raise LatentCodecError(f"block {block} larger than frame {H}x{W}")
    half = block // 2
    m = half + search_range
    vectors = np.zeros((H, W, 2))
    mask = np.zeros((H, W), dtype=bool)
    if H - 2 * m < 1 or W - 2 * m < 1:
        return MotionField(vectors, mask)
    mask[m:H - m, m:W - m] = True
    # Target region covering every block whose centre lies in the valid interior.
    ty0, ty1, tx0, tx1 = search_range, H - search_range, search_range, W - search_range
    tgt_region = T[:, ty0:ty1, tx0:tx1]
    scale = float(np.ptp(T)) ** 2 + float(np.ptp(R)) ** 2 + 1e-300
    tol = 1e-10 * block * block * T.shape[0] * scale
    best = np.full((H - 2 * m, W - 2 * m), np.inf)
    best_v = np.zeros((*best.shape, 2))
    for vx, vy in _candidates(search_range):
        src = R[:, ty0 - vy:ty1 - vy, tx0 - vx:tx1 - vx]
        d = ((tgt_region - src) ** 2).sum(axis=0)
        ssd = _box_sum(d, block)
        better = ssd < best - tol
        best = np.where(better, ssd, best)
        best_v[better] = (vx, vy)
    vectors[m:H - m, m:W - m] = best_v
    return MotionField(vectors, mask)


def scale_motion(field: MotionField, n: int, k: int) -> MotionField:
    """Divide vectors by ``n**k`` and resample to the latent grid (nearest)."""
    if n < 1 or k < 0:
        raise LatentCodecError(f"need n >= 1 and k >= 0, got n={n}, k={k}")
    s = n**k
    if s == 1:
        return MotionField(field.vectors.copy(), field.mask.copy(), "latent" if k else field.domain)
    H, W = field.shape
    rows = np.arange(H // s) * s + s // 2
    cols = np.arange(W // s) * s + s // 2
    v = field.vectors[np.ix_(rows, cols)] / s
    return MotionField(v, field.mask[np.ix_(rows, cols)], "latent")


def warp(ref, field: MotionField, valid=None) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear motion compensation: ``out(p) = ref(p - v(p))``.

    The returned mask is false where the source position leaves the frame or,
    when ``valid`` is given, where any contributing source pixel is invalid.
    """
    planes, squeeze = _as_planes(ref)
    _, H, W = planes.shape
    if field.shape != (H, W):
        raise LatentCodecError(f"field {field.shape} does not match frame {(H, W)}")
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    sx = xx - field.vectors[..., 0]
    sy = yy - field.vectors[..., 1]
    inside = (sx >= 0) & (sx <= W - 1) & (sy >= 0) & (sy <= H - 1)
    x0 = np.clip(np.floor(sx), 0, W - 1).astype(np.int64)
    y0 = np.clip(np.floor(sy), 0, H - 1).astype(np.int64)
    fx = np.where(inside, sx - x0, 0.0)
    fy = np.where(inside, sy - y0, 0.0)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    w00, w01 = (1 - fy) * (1 - fx), (1 - fy) * fx
    w10, w11 = fy * (1 - fx), fy * fx
    out = (w00 * planes[:, y0, x0] + w01 * planes[:, y0, x1]
           + w10 * planes[:, y1, x0] + w11 * planes[:, y1, x1])
    mask = inside
    if valid is not None:
        ok = np.asarray(valid, dtype=bool)
        for w, yi, xi in ((w00, y0, x0), (w01, y0, x1), (w10, y1, x0), (w11, y1, x1)):
            mask &= (w == 0) | ok[yi, xi]
    return (out[0] if squeeze else out), mask


def nrmse(actual, predicted, mask=None) -> float:
    """RMS error over the mask divided by the actual signal's range over the mask."""
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.shape != p.shape:
        raise LatentCodecError(f"shape mismatch: {a.shape} vs {p.shape}")
    m = np.ones(a.shape, dtype=bool) if mask is None else np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    if not m.any():
        raise LatentCodecError("empty mask")
    am, pm = a[m], p[m]
    dyn = float(am.max() - am.min())
    if dyn == 0:
        raise LatentCodecError("zero dynamic range")
    return float(np.sqrt(np.mean((pm - am) ** 2)) / dyn)


def psnr_to_nrmse(psnr_db: float) -> float:
    """NRMSE implied by an 8-bit PSNR: ``sqrt(255**2 / 10**(psnr/10)) / 256``."""
    return float(np.sqrt(255.0**2 / 10.0 ** (psnr_db / 10.0)) / 256.0)


def affine_matrix(params: dict) -> np.ndarray:
    """``rotation @ shear @ scale``; angles in degrees."""
    p = {**IDENTITY_AFFINE, **params}
    th = np.deg2rad(p["rot"])
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    shear = np.array([[1.0, np.tan(np.deg2rad(p["shear_x"]))], [np.tan(np.deg2rad(p["shear_y"])), 1.0]])
    return rot @ shear @ np.diag([p["sx"], p["sy"]])


def affine_field(params: dict, dims) -> MotionField:
    """Displacement of the affine map about the frame centre at every pixel."""
    unknown = set(params) - set(IDENTITY_AFFINE)
    if unknown:
        raise LatentCodecError(f"unknown affine parameters: {sorted(unknown)}")
    p = {**IDENTITY_AFFINE, **params}
    if not all(np.isfinite(float(v)) for v in p.values()):
        raise LatentCodecError("affine parameters must be finite")
    H, W = dims
    A = affine_matrix(p) - np.eye(2)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    rel = np.stack([xx - (W - 1) / 2, yy - (H - 1) / 2], axis=-1)
    v = rel @ A.T + np.array([p["tx"], p["ty"]])
    return MotionField(v, np.ones((H, W), dtype=bool))


def sample_affine_params(rng: np.random.Generator) -> dict:
    return {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in AFFINE_RANGES.items()}


# --- synthetic convolution stack --------------------------------------------

POOLS = ("none", "max", "mean", "downsample")
NONLINEARITIES = ("identity", "relu")


@dataclass
class ConvStage:
    kernel: np.ndarray  # C_out x C_in x kh x kw, odd kh and kw
    nonlinearity: str = "relu"
    pool: str = "none"
    pool_size: int = 1

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim == 2:
            k = k[None, None]
        if k.ndim != 4 or k.shape[2] % 2 == 0 or k.shape[3] % 2 == 0:
            raise LatentCodecError(f"kernel must be C_out x C_in x kh x kw with odd sides, got {k.shape}")
        if self.nonlinearity not in NONLINEARITIES:
            raise LatentCodecError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.pool not in POOLS:
            raise LatentCodecError(f"unknown pool {self.pool!r}")
        if self.pool == "none":
            self.pool_size = 1
        if self.pool_size < 1:
            raise LatentCodecError(f"pool size must be >= 1, got {self.pool_size}")
        self.kernel = k


@dataclass
class ConvStackSpec:
    stages: list = field(default_factory=list)

    @property
    def pool_factors(self) -> list[int]:
        return [st.pool_size for st in self.stages if st.pool != "none" and st.pool_size > 1]

    @property
    def total_scale(self) -> int:
        return int(np.prod(self.pool_factors, dtype=np.int64)) if self.pool_factors else 1

    @property
    def n_and_k(self) -> tuple[int, int]:
        f = self.pool_factors
        if not f:
            return 1, 0
        if len(set(f)) != 1:
            raise LatentCodecError(f"pool factors {f} are not a single n**k")
        return f[0], len(f)

    @classmethod
    def random(cls, seed: int = 0, channels=(4, 8), kernel: int = 3, pool: str = "max",
               pool_size: int = 2, nonlinearity: str = "relu") -> "ConvStackSpec":
        """Seeded random kernels, one pooled stage per entry of ``channels``."""
        rng = np.random.default_rng(seed)
        stages, c_in = [], 1
        for c_out in channels:
            k = rng.normal(size=(c_out, c_in, kernel, kernel)) / np.sqrt(c_in * kernel * kernel)
            stages.append(ConvStage(k, nonlinearity, pool, pool_size))
            c_in = c_out
        return cls(stages)

    def to_dict(self) -> dict:
        return {"stages": [{"kernel": st.kernel.tolist(), "nonlinearity": st.nonlinearity,
                            "pool": st.pool, "pool_size": st.pool_size} for st in self.stages]}

    @classmethod
    def from_dict(cls, doc: dict) -> "ConvStackSpec":
        if "random" in doc:
            return cls.random(**doc["random"])
        return cls([ConvStage(np.asarray(s["kernel"]), s.get("nonlinearity", "relu"), s.get("pool", "none"),
                              int(s.get("pool_size", 1))) for s in doc["stages"]])

    @classmethod
    def load(cls, path) -> "ConvStackSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ConvStackResult:
    latents: np.ndarray  # C x h x w
    valid: np.ndarray  # h x w; false where borders or padding reach in
    total_scale: int


def _pool(x: np.ndarray, kind: str, n: int) -> np.ndarray:
    if kind == "none" or n == 1:
        return x
    C, H, W = x.shape
    h, w = H // n, W // n
    if kind == "downsample":
        return x[:, : h * n: n, : w * n: n]
    blocks = x[:, : h * n, : w * n].reshape(C, h, n, w, n)
    return blocks.max(axis=(2, 4)) if kind == "max" else blocks.mean(axis=(2, 4))


def _pool_mask(ok: np.ndarray, kind: str, n: int) -> np.ndarray:
    """A pooled latent is valid only if every input it reads is valid."""
    if kind == "none" or n == 1:
        return ok
    H, W = ok.shape
    h, w = H // n, W // n
    if kind == "downsample":
        return ok[: h * n: n, : w * n: n]
    return ok[: h * n, : w * n].reshape(h, n, w, n).all(axis=(1, 3))


def run_conv_stack(frame, spec: ConvStackSpec, valid=None) -> ConvStackResult:
    """Forward pass (correlation with edge padding, nonlinearity, pooling).

    The validity mask starts from ``valid`` (or all true), is eroded by each
    kernel's radius and min-pooled, so masked-in latents never see padding.
    """
    x, _ = _as_planes(frame)
    ok = np.ones(x.shape[1:], dtype=bool) if valid is None else np.asarray(valid, dtype=bool).copy()
    for st in spec.stages:
        c_out, c_in, kh, kw = st.kernel.shape
        if c_in != x.shape[0]:
            raise LatentCodecError(f"stage expects {c_in} input channels, got {x.shape[0]}")
        if kh > x.shape[1] or kw > x.shape[2]:
            raise LatentCodecError(f"kernel {kh}x{kw} larger than input {x.shape[1]}x{x.shape[2]}")
        y = np.zeros((c_out, *x.shape[1:]))
        for o in range(c_out):
            for i in range(c_in):
                y[o] += correlate(x[i], st.kernel[o, i], mode="nearest")
        if st.nonlinearity == "relu":
            y = np.maximum(y, 0.0)
        struct = np.ones((kh, kw), dtype=bool)
        ok = binary_erosion(ok, struct, border_value=0)
        x = _pool(y, st.pool, st.pool_size)
        ok = _pool_mask(ok, st.pool, st.pool_size)
    return ConvStackResult(x, ok.astype(bool), spec.total_scale)


def predict_latent(ref_frame, tgt_frame, input_field: MotionField, spec: ConvStackSpec):
    """Predict the target's latent by warping the reference latent with the
    input motion scaled by ``n**k``. Returns ``(actual, predicted, mask)``."""
    n, k = spec.n_and_k
    ref = run_conv_stack(ref_frame, spec)
    tgt = run_conv_stack(tgt_frame, spec)
    lat_field = scale_motion(input_field, n, k)
    h, w = tgt.latents.shape[1:]
    lat_field = MotionField(lat_field.vectors[:h, :w], lat_field.mask[:h, :w], "latent")
    predicted, mask = warp(ref.latents, lat_field, valid=ref.valid)
    return tgt.latents, predicted, mask & tgt.valid & lat_field.mask


def latent_prediction_nrmse(ref_frame, tgt_frame, input_field: MotionField, spec: ConvStackSpec) -> float:
    actual, predicted, mask = predict_latent(ref_frame, tgt_frame, input_field, spec)
    return nrmse(actual, predicted, mask)
