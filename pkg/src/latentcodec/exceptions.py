"""Exception hierarchy. Every data-level failure derives from ``LatentCodecError``
so the CLI can map it to exit code 1."""


class LatentCodecError(ValueError):
    pass


class FormatError(LatentCodecError):
    """Malformed on-disk container (tensor, curve, bitstream header)."""


class SupportError(LatentCodecError):
    """Value or symbol outside the declared support, or mismatched supports."""


class InfiniteRateError(LatentCodecError):
    """A symbol with nonzero mass is coded with a zero-probability model."""


class FittingError(LatentCodecError):
    pass


class DecodeError(LatentCodecError):
    pass
