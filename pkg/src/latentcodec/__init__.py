"""Entropy models, rANS coding and rate/motion analytics for learned compression."""

from .dist import (
    DiscreteDistribution,
    GaussianMixtureParams,
    Support,
    cross_entropy_bits,
    discretize_gaussian,
    discretize_gmm,
    entropy_bits,
    kl_bits,
)
from .exceptions import (
    DecodeError,
    FittingError,
    FormatError,
    InfiniteRateError,
    LatentCodecError,
    SupportError,
)
from .histogram import (
    HistogramEstimator,
    LatentChannel,
    LatentTensor,
    hard_histogram,
    rate_bits,
    rate_grad,
    soft_histogram,
    ste_histogram,
)

__version__ = "0.1.0"

__all__ = [
    "DecodeError", "DiscreteDistribution", "FittingError", "FormatError", "GaussianMixtureParams",
    "HistogramEstimator", "InfiniteRateError", "LatentChannel", "LatentCodecError", "LatentTensor",
    "Support", "SupportError", "cross_entropy_bits", "discretize_gaussian", "discretize_gmm",
    "entropy_bits", "hard_histogram", "kl_bits", "rate_bits", "rate_grad", "soft_histogram",
    "ste_histogram",
]
