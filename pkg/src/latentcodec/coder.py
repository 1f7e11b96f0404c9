"""Static-table rANS coder.

64-bit state kept in ``[2**31, 2**63)``, renormalized by emitting 32-bit
words, 16-bit frequency precision. Symbols are encoded back to front so the
decoder reads the payload forwards.

Stream layout (little-endian)::

    b"LCR1" | count:u32 | y_min:i32 | B:u32 | B x freq:u16 | payload: u32 words

Frequencies are stored as ``freq - 1`` so a single bin holding the full
``2**16`` still fits in 16 bits. The payload is empty for an empty message.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .dist import DiscreteDistribution, Support
from .exceptions import DecodeError, FormatError, LatentCodecError, SupportError

PRECISION = 16
TOTAL = 1 << PRECISION
RANS_L = 1 << 31
_WORD_MASK = (1 << 32) - 1
STREAM_MAGIC = b"LCR1"
_HEAD = struct.Struct("<4sIiI")


@dataclass(frozen=True, eq=False)
class FrequencyTable:
    y_min: int
    freqs: np.ndarray

    def __post_init__(self):
        f = np.array(self.freqs, dtype=np.int64).ravel()
        if f.size < 1 or f.size > TOTAL:
            raise SupportError(f"table needs 1..{TOTAL} bins, got {f.size}")
        if np.any(f < 1):
            raise LatentCodecError("every frequency must be at least 1")
        if int(f.sum()) != TOTAL:
            raise LatentCodecError(f"frequencies sum to {int(f.sum())}, not {TOTAL}")
        f.setflags(write=False)
        cum = np.concatenate([[0], np.cumsum(f)])
        cum.setflags(write=False)
        object.__setattr__(self, "y_min", int(self.y_min))
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "cumulative", cum)

    @property
    def support(self) -> Support:
        return Support(self.y_min, self.freqs.size)

    @property
    def n_bins(self) -> int:
        return self.freqs.size

    def to_distribution(self) -> DiscreteDistribution:
        return DiscreteDistribution(self.y_min, self.freqs / TOTAL)

    def ideal_bits(self, symbols) -> float:
        """Sum of ``-log2(freq / 2**16)`` over bin indices ``symbols``."""
        s = np.asarray(symbols, dtype=np.int64)
        return float(-np.sum(np.log2(self.freqs[s] / TOTAL)))

    def __eq__(self, other):
        if not isinstance(other, FrequencyTable):
            return NotImplemented
        return self.y_min == other.y_min and np.array_equal(self.freqs, other.freqs)

    __hash__ = None

    def to_bytes(self) -> bytes:
        return struct.pack("<iI", self.y_min, self.n_bins) + (self.freqs - 1).astype("<u2").tobytes()


def quantize_distribution(p: DiscreteDistribution) -> FrequencyTable:
    """Largest-remainder rounding of ``p * 2**16`` with every bin at least 1."""
    B = p.n_bins
    if B > TOTAL:
        raise SupportError(f"support of {B} bins exceeds {TOTAL}")
    target = p.masses * TOTAL
    freqs = np.maximum(np.floor(target).astype(np.int64), 1)
    remainder = target - np.floor(target)
    short = TOTAL - int(freqs.sum())
    if short > 0:
        # stable sort on -remainder: ties go to the lower index
        order = np.argsort(-remainder, kind="stable")
        freqs[order[:short]] += 1
    while short < 0:
        # Too many bins were raised to 1: take back from bins above 1 with
        # the smallest remainder, largest frequency first on ties.
        candidates = np.flatnonzero(freqs > 1)
        order = candidates[np.lexsort((-freqs[candidates], remainder[candidates]))]
        take = order[: -short]
        freqs[take] -= 1
        short = TOTAL - int(freqs.sum())
    return FrequencyTable(p.y_min, freqs)


def _table_from_bytes(buf: bytes, offset: int) -> tuple[FrequencyTable, int]:
    y_min, B = struct.unpack_from("<iI", buf, offset)
    offset += 8
    if B < 1 or B > TOTAL:
        raise FormatError(f"bad table size B={B}")
    end = offset + 2 * B
    if len(buf) < end:
        raise FormatError("short table")
    freqs = np.frombuffer(buf, dtype="<u2", count=B, offset=offset).astype(np.int64) + 1
    try:
        return FrequencyTable(y_min, freqs), end
    except LatentCodecError as exc:
        raise FormatError(f"bad frequency table: {exc}") from None


def encode(symbols, table: FrequencyTable) -> bytes:
    """rANS-encode bin indices ``symbols`` (0-based) under ``table``."""
    sym = np.asarray(symbols, dtype=np.int64).ravel()
    bad = (sym < 0) | (sym >= table.n_bins)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise SupportError(f"symbol {int(sym[k])} at index {k} outside 0..{table.n_bins - 1}")
    header = STREAM_MAGIC + struct.pack("<I", sym.size) + table.to_bytes()
    if sym.size == 0:
        return header
    freqs = table.freqs.tolist()
    starts = table.cumulative.tolist()
    words: list[int] = []
    x = RANS_L
    bound_base = (RANS_L >> PRECISION) << 32
    for s in reversed(sym.tolist()):
        f = freqs[s]
        if x >= bound_base * f:
            words.append(x & _WORD_MASK)
            x >>= 32
        x = ((x // f) << PRECISION) + (x % f) + starts[s]
    words.append(x & _WORD_MASK)
    words.append(x >> 32)
    words.reverse()
    return header + np.asarray(words, dtype="<u4").tobytes()


def parse_header(stream: bytes) -> tuple[int, FrequencyTable, int]:
    if len(stream) < 8 or stream[:4] != STREAM_MAGIC:
        raise DecodeError(f"bad magic: expected {STREAM_MAGIC!r}")
    (count,) = struct.unpack_from("<I", stream, 4)
    try:
        table, offset = _table_from_bytes(stream, 8)
    except (FormatError, struct.error) as exc:
        raise DecodeError(f"corrupt header: {exc}") from None
    return count, table, offset


def decode(stream: bytes) -> tuple[np.ndarray, FrequencyTable]:
    """Inverse of :func:`encode`. Returns ``(bin indices, table)``."""
    count, table, offset = parse_header(stream)
    payload = len(stream) - offset
    if count == 0:
        if payload:
            raise DecodeError("payload present for empty message")
        return np.zeros(0, dtype=np.int64), table
    if payload % 4 or payload < 8:
        raise DecodeError(f"truncated payload ({payload} bytes)")
    words = np.frombuffer(stream, dtype="<u4", offset=offset).tolist()
    x = (words[0] << 32) | words[1]
    pos = 2
    freqs = table.freqs.tolist()
    starts = table.cumulative.tolist()
    slot_to_symbol = np.repeat(np.arange(table.n_bins), table.freqs).tolist()
    mask = TOTAL - 1
    out = [0] * count
    n_words = len(words)
    for i in range(count):
        slot = x & mask
        s = slot_to_symbol[slot]
        out[i] = s
        x = freqs[s] * (x >> PRECISION) + slot - starts[s]
        if x < RANS_L:
            if pos >= n_words:
                raise DecodeError(f"truncated payload at symbol {i}")
            x = (x << 32) | words[pos]
            pos += 1
    if x != RANS_L or pos != n_words:
        raise DecodeError("corrupt payload: final state mismatch")
    return np.asarray(out, dtype=np.int64), table


def payload_bits(stream: bytes) -> int:
    _, _, offset = parse_header(stream)
    return 8 * (len(stream) - offset)


def encode_values(values, p: DiscreteDistribution) -> bytes:
    """Quantize ``p`` and encode integer-valued ``values`` on its support."""
    table = quantize_distribution(p)
    return encode(p.index_of(values), table)


def decode_values(stream: bytes) -> np.ndarray:
    idx, table = decode(stream)
    return idx + table.y_min
