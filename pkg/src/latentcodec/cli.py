"""``latentcodec`` command line.

Every subcommand reads an optional JSON ``--config`` (a :class:`RunConfig`);
explicit flags override config values. Exit status: 0 success, 1 data error,
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bottleneck, coder, motion, pcanalysis, sideinfo, synthetic
from .dist import as_support, entropy_bits, load_distribution, save_distribution
from .exceptions import LatentCodecError
from .histogram import LatentChannel, hard_histogram, soft_histogram, ste_histogram
from .tensorio import read_curve, read_tensor, write_curve, write_json, write_tensor


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """All tunables of every subcommand. Unknown keys are rejected."""

    dims: list | None = None            # input pixel dims [H, W]
    s: int = 16                         # latent downscale factor
    lambda_q: float | None = None
    trained_dims: list | None = None
    target_dims: list | None = None
    lambda_x: float = 0.0
    K: int = 2
    support: dict = field(default_factory=lambda: {"y_min": -40, "B": 81})
    block: int = motion.LATENT_BLOCK
    range: int = motion.LATENT_RANGE
    conv_stack: dict | str | None = None
    seed: int | None = None
    steps: int = 2000
    learning_rate: float = 1.0
    kernel: str = "ste"
    channel: int | None = None
    layout: str = "PxN"
    mode: str = "rate"
    n: int | None = None
    k: int | None = None
    frame_dims: list = field(default_factory=lambda: [224, 224])
    synthetic: dict = field(default_factory=lambda: {"n_inputs": 100, "n_channels": 8, "n_per_channel": 1024})
    sweep: dict | None = None           # {"param": "tx", "values": [...]}
    n_draws: int = 200
    nrmse_bound: float = 0.08

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)

    def require_seed(self) -> int:
        if self.seed is None:
            raise UsageError("this command is stochastic: set 'seed' in the config or pass --seed")
        return int(self.seed)

    def support_tuple(self):
        sup = self.support
        if isinstance(sup, dict):
            return as_support((sup["y_min"], sup["B"]))
        return as_support(sup)

    def resolved_lambda_q(self) -> float:
        if self.lambda_q is not None:
            return float(self.lambda_q)
        if self.trained_dims and self.target_dims:
            return sideinfo.lambda_q(self.trained_dims, self.target_dims)
        return 1.0


# --- subcommands -------------------------------------------------------------

def _channel_values(tensor: np.ndarray, channel) -> np.ndarray:
    if tensor.ndim == 1 or channel is None and tensor.shape[0] == 1:
        return tensor.ravel()
    if channel is None:
        channel = 0
    if not 0 <= channel < tensor.shape[0]:
        raise LatentCodecError(f"channel {channel} out of range for {tensor.shape[0]} channels")
    return tensor[channel].ravel()


def cmd_histogram(args, cfg: RunConfig):
    values = _channel_values(read_tensor(args.input), cfg.channel)
    ch = LatentChannel(values, cfg.support_tuple())
    if cfg.kernel == "hard":
        dist, jac = hard_histogram(ch), None
    elif cfg.kernel == "soft":
        dist, jac = soft_histogram(ch), ste_histogram(ch)[1]
    elif cfg.kernel == "ste":
        dist, jac = ste_histogram(ch)
    else:
        raise UsageError(f"unknown kernel {cfg.kernel!r}")
    save_distribution(dist, args.out)
    if args.jacobian:
        if jac is None:
            raise UsageError("--jacobian needs kernel 'soft' or 'ste'")
        write_tensor(jac, args.jacobian)
    return {"y_min": dist.y_min, "B": dist.n_bins, "entropy_bits": entropy_bits(dist), "n": ch.n}


def cmd_fit_bottleneck(args, cfg: RunConfig):
    values = _channel_values(read_tensor(args.input), cfg.channel)
    model = bottleneck.fit(values, cfg.steps, cfg.learning_rate, cfg.require_seed())
    model.save(args.out)
    rate = bottleneck.rate_bits_static(model, np.rint(values))
    return {"n": int(values.size), "rate_bits": rate, "bits_per_sample": rate / values.size}


def cmd_encode(args, cfg: RunConfig):
    tensor = read_tensor(args.input)
    values = tensor.astype(np.float64).ravel()
    if not np.array_equal(values, np.rint(values)):
        raise LatentCodecError(f"{args.input}: encode needs integer-valued data")
    if args.dist:
        dist = load_distribution(args.dist)
    else:
        dist = hard_histogram(LatentChannel(values, cfg.support_tuple()))
    stream = coder.encode_values(values, dist.with_floor())
    Path(args.out).write_bytes(stream)
    return {"count": int(values.size), "shape": list(tensor.shape), "payload_bits": coder.payload_bits(stream),
            "stream_bytes": len(stream)}


def cmd_decode(args, cfg: RunConfig):
    values = coder.decode_values(Path(args.input).read_bytes())
    shape = [int(x) for x in args.shape.split(",")] if args.shape else [values.size]
    if int(np.prod(shape)) != values.size:
        raise LatentCodecError(f"--shape {shape} does not hold {values.size} values")
    write_tensor(values.astype(np.float32).reshape(shape), args.out)
    return {"count": int(values.size), "shape": shape}


def _load_dataset(args, cfg: RunConfig):
    sup = cfg.support_tuple()
    if args.synthetic:
        dataset, _ = synthetic.two_laplacian_dataset(support=sup, seed=cfg.require_seed(), **cfg.synthetic)
        return dataset
    files = sorted(Path(args.inputs).glob("*.lct"))
    if not files:
        raise LatentCodecError(f"{args.inputs}: no .lct tensor files")
    dataset = []
    for f in files:
        t = read_tensor(f)
        t = t.reshape(1, -1) if t.ndim == 1 else t.reshape(t.shape[0], -1)
        dataset.append([LatentChannel.clipped(row, sup) for row in t])
    if len({len(img) for img in dataset}) != 1:
        raise LatentCodecError(f"{args.inputs}: inputs have differing channel counts")
    return dataset


def cmd_analyze_gap(args, cfg: RunConfig):
    dataset = _load_dataset(args, cfg)
    n_latent = dataset[0][0].n
    dims = cfg.dims or [int(np.sqrt(n_latent)) * cfg.s] * 2
    lam = cfg.resolved_lambda_q()
    defaults = sideinfo.pooled_defaults(dataset)
    gap = sideinfo.dataset_gap([[hard_histogram(ch) for ch in img] for img in dataset], defaults, dims, cfg.s)
    per_k = {}
    for K in (1, 2, 3):
        comparisons = [sideinfo.adaptive_total_rate(img, sideinfo.gmm_side_codec_encode(img, K), defaults,
                                                    dims, cfg.s, lam) for img in dataset]
        static = float(np.mean([c.static.total for c in comparisons]))
        adaptive = float(np.mean([c.adaptive.total for c in comparisons]))
        per_k[K] = {"static_total_bits": static, "adaptive_total_bits": adaptive,
                    "adaptive_wins_fraction": float(np.mean([c.winner == "adaptive" for c in comparisons])),
                    "side_bits": comparisons[0].adaptive.R_q_bits}
    chosen = sideinfo.adaptive_total_rate(dataset[0], sideinfo.gmm_side_codec_encode(dataset[0], cfg.K),
                                          defaults, dims, cfg.s, lam)
    report = {"gap": gap.to_dict(), "lambda_q": lam, "dims": list(dims), "s": cfg.s,
              "gmm": {str(k): v for k, v in per_k.items()}, "first_input_rates": chosen.to_dict()}
    if args.curve:
        pixels = dims[0] * dims[1]
        rates = [per_k[k]["adaptive_total_bits"] / pixels for k in (1, 2, 3)]
        savings = [100.0 * (1 - per_k[k]["adaptive_total_bits"] / per_k[k]["static_total_bits"]) for k in (1, 2, 3)]
        write_curve(rates, savings, args.curve)
    return report


def cmd_gmm_side(args, cfg: RunConfig):
    t = read_tensor(args.input)
    t = t.reshape(1, -1) if t.ndim == 1 else t.reshape(t.shape[0], -1)
    chans = [LatentChannel.clipped(row, cfg.support_tuple()) for row in t]
    side = sideinfo.gmm_side_codec_encode(chans, cfg.K)
    if args.out:
        Path(args.out).write_bytes(side.to_bytes())
    return {"K": cfg.K, "channels": len(chans), "side_bits": side.side_bits,
            "params": [dataclasses.asdict(p) for p in side.params()]}


def cmd_critical_points(args, cfg: RunConfig):
    fmap = read_tensor(args.features).astype(np.float64)
    idx = pcanalysis.critical_point_set(fmap)
    if args.points and args.out:
        pts = pcanalysis.as_point_cloud(read_tensor(args.points), cfg.layout)
        if pts.shape[0] != fmap.shape[1]:
            raise LatentCodecError(f"{args.points}: {pts.shape[0]} points but feature map has {fmap.shape[1]}")
        write_tensor(pts[idx], args.out)
    return {"indices": idx.tolist(), "size": int(idx.size), "n_features": int(fmap.shape[0]),
            "n_points": int(fmap.shape[1])}


def _read_points_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["rate", "quality"]:
        raise LatentCodecError(f"{path}: header must be 'rate,quality'")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:] if a or b])
    except ValueError:
        raise LatentCodecError(f"{path}: non-numeric value") from None
    if data.size == 0:
        raise LatentCodecError(f"{path}: no points")
    return data[:, 0], data[:, 1]


def cmd_pareto(args, cfg: RunConfig):
    rate, acc = _read_points_csv(args.input)
    fr, fa = pcanalysis.pareto_front(rate, acc)
    write_curve(fr, fa, args.out)
    return {"n_points": int(rate.size), "front_size": int(fr.size)}


def cmd_bd_rate(args, cfg: RunConfig):
    value = pcanalysis.bd_metric(read_curve(args.anchor), read_curve(args.test), cfg.mode)
    return {"mode": cfg.mode, "value": value}


def cmd_motion_estimate(args, cfg: RunConfig):
    ref, tgt = read_tensor(args.ref), read_tensor(args.tgt)
    fld = motion.block_match(ref, tgt, cfg.block, cfg.range)
    write_tensor(fld.vectors, args.out)
    if args.mask_out:
        write_tensor(fld.mask.astype(np.float32), args.mask_out)
    valid = fld.vectors[fld.mask]
    return {"valid_positions": int(fld.mask.sum()),
            "mean_vector": valid.mean(axis=0).tolist() if valid.size else None}


def cmd_motion_predict(args, cfg: RunConfig):
    ref = read_tensor(args.ref)
    vec = read_tensor(args.field)
    fld = motion.MotionField(vec, read_tensor(args.mask) > 0 if args.mask else True)
    if cfg.n is not None or cfg.k is not None:
        fld = motion.scale_motion(fld, cfg.n or 1, cfg.k or 0)
    pred, mask = motion.warp(ref, fld)
    mask &= fld.mask
    write_tensor(pred, args.out)
    out = {"valid_positions": int(mask.sum())}
    if args.actual:
        out["nrmse"] = motion.nrmse(read_tensor(args.actual), pred, mask)
    return out


def _conv_spec(cfg: RunConfig, seed: int) -> motion.ConvStackSpec:
    if cfg.conv_stack is None:
        return motion.ConvStackSpec.random(seed)
    if isinstance(cfg.conv_stack, str):
        return motion.ConvStackSpec.load(cfg.conv_stack)
    return motion.ConvStackSpec.from_dict(cfg.conv_stack)


def cmd_nrmse_sweep(args, cfg: RunConfig):
    seed = cfg.require_seed()
    spec = _conv_spec(cfg, seed)
    tex = synthetic.Texture(seed=seed)
    dims = tuple(cfg.frame_dims)
    ref = tex.frame(dims)

    def score(params):
        fld = motion.affine_field(params, dims)
        return motion.latent_prediction_nrmse(ref, tex.frame(dims, fld.vectors), fld, spec)

    if cfg.sweep:
        param = cfg.sweep["param"]
        values = np.asarray(cfg.sweep["values"], dtype=np.float64)
        scores = [score({param: float(v)}) for v in values]
        if args.out:
            write_curve(values, scores, args.out)
        return {"param": param, "values": values.tolist(), "nrmse": scores}
    rng = np.random.default_rng(seed)
    scores = np.array([score(motion.sample_affine_params(rng)) for _ in range(cfg.n_draws)])
    if args.out:
        write_curve(np.arange(scores.size, dtype=np.float64), scores, args.out)
    return {"n_draws": int(scores.size), "median": float(np.median(scores)),
            "p95": float(np.percentile(scores, 95)), "max": float(scores.max()),
            "fraction_below_bound": float(np.mean(scores < cfg.nrmse_bound)), "bound": cfg.nrmse_bound}


# --- argument parsing ---------------------------------------------------------

COMMANDS = {}


def _add(sub, name, func, help_text):
    p = sub.add_parser(name, help=help_text, description=help_text)
    p.add_argument("--config", help="JSON RunConfig; flags override its values")
    p.add_argument("--report", help="write the JSON summary here instead of stdout")
    p.set_defaults(func=func)
    COMMANDS[name] = p
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentcodec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = _add(sub, "histogram", cmd_histogram, "Histogram of one latent channel (hard, soft or straight-through).")
    p.add_argument("--input", required=True, help="tensor file; rank 1, or channels first")
    p.add_argument("--out", required=True, help="distribution tensor (a .json sidecar is written next to it)")
    p.add_argument("--jacobian", help="write the B x N backward Jacobian here")
    p.add_argument("--kernel", choices=["hard", "soft", "ste"])
    p.add_argument("--channel", type=int)

    p = _add(sub, "fit-bottleneck", cmd_fit_bottleneck, "Fit the static monotone-CDF entropy model to samples.")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--steps", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--channel", type=int)

    p = _add(sub, "encode", cmd_encode, "rANS-encode an integer-valued tensor.")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="bitstream file")
    p.add_argument("--dist", help="distribution tensor (with .json sidecar); default: the data's hard histogram")

    p = _add(sub, "decode", cmd_decode, "Decode a bitstream back to a tensor file.")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--shape", help="comma-separated dims of the output tensor (default: flat)")

    p = _add(sub, "analyze-gap", cmd_analyze_gap, "Amortization gap and static vs adaptive rates over a dataset.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--inputs", help="directory of .lct latent tensors (channels first)")
    src.add_argument("--synthetic", action="store_true", help="use the built-in two-Laplacian dataset")
    p.add_argument("--curve", help="CurveFile of adaptive bpp vs saving percent for K=1..3")
    p.add_argument("--seed", type=int)
    p.add_argument("--K", type=int)

    p = _add(sub, "gmm-side", cmd_gmm_side, "Fit and quantize per-channel GMM side information.")
    p.add_argument("--input", required=True)
    p.add_argument("--out", help="raw side-info bytes")
    p.add_argument("--K", type=int)

    p = _add(sub, "critical-points", cmd_critical_points, "Critical point set of an N x P pointwise feature map.")
    p.add_argument("--features", required=True)
    p.add_argument("--points", help="point cloud tensor, to extract the critical points")
    p.add_argument("--out", help="tensor of critical points")
    p.add_argument("--layout", choices=["PxN", "NxP"])

    p = _add(sub, "pareto", cmd_pareto, "Pareto front of a rate,quality point set.")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = _add(sub, "bd-rate", cmd_bd_rate, "Bjontegaard-delta rate (percent) or quality between two curves.")
    p.add_argument("--anchor", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--mode", choices=["rate", "quality"])

    p = _add(sub, "motion-estimate", cmd_motion_estimate, "Exhaustive SSD block matching between two frames.")
    p.add_argument("--ref", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out", required=True, help="H x W x 2 field tensor (vx, vy)")
    p.add_argument("--mask-out", dest="mask_out")
    p.add_argument("--block", type=int)
    p.add_argument("--range", type=int)

    p = _add(sub, "motion-predict", cmd_motion_predict, "Motion-compensate a frame or latent with a field.")
    p.add_argument("--ref", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--mask", help="field validity tensor")
    p.add_argument("--out", required=True)
    p.add_argument("--actual", help="target tensor; report masked NRMSE against it")
    p.add_argument("--n", type=int, help="pool factor; with --k, scales the field by 1/n**k first")
    p.add_argument("--k", type=int)

    p = _add(sub, "nrmse-sweep", cmd_nrmse_sweep, "Latent prediction NRMSE over affine motion parameters.")
    p.add_argument("--out", help="CurveFile: parameter value (or draw index) vs NRMSE")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-draws", dest="n_draws", type=int)
    return parser


_FLAG_KEYS = ("kernel", "channel", "steps", "learning_rate", "seed", "K", "layout", "mode", "block", "range",
              "n", "k", "n_draws")


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        for key in _FLAG_KEYS:
            value = getattr(args, key, None)
            if value is not None:
                setattr(cfg, key, value)
        result = args.func(args, cfg)
        write_json(result, args.report)
        return 0
    except UsageError as exc:
        print(f"latentcodec {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (LatentCodecError, OSError, KeyError, TypeError) as exc:
        print(f"latentcodec {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
