"""Fixed-point transforms between reals in [0,1] and bit strings.

encode truncates each coordinate to its first k fraction bits (most
significant first); decode rebuilds the dyadic rational sum b_i / 2^i.
The boundary x = 1.0 has no k-bit fractional expansion, so encode clamps
to 1 - 2^-k first; dyadic values keep their exact representation
(truncation, never rounding). The truncation error per coordinate is
at most 2^-k.

Both directions are exact: x * 2^k is an exponent shift for binary
floats, and the decoded integer / 2^m division is a correctly rounded
(here: exact, for m <= 52) float operation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import DomainError

MAX_BITS = 52  # beyond this a float64 cannot hold the dyadic exactly


def encode_scalar(x: float, k: int) -> list[int]:
    """First k fraction bits of clamp(x, 0, 1 - 2^-k), MSB first."""
    if not 1 <= k <= MAX_BITS:
        raise DomainError("precision k must be in 1..%d, got %r" % (MAX_BITS, k))
    if not 0.0 <= x <= 1.0:
        raise DomainError("coordinate %r outside [0, 1]" % (x,))
    scaled = int(x * (1 << k))  # exact: power-of-two scaling, then truncation
    if scaled >= (1 << k):
        scaled = (1 << k) - 1  # clamp the x = 1.0 boundary
    return [(scaled >> (k - 1 - i)) & 1 for i in range(k)]


def decode_bits(bits: Sequence[int]) -> float:
    """The dyadic rational sum bits_i / 2^i for i = 1..m."""
    m = len(bits)
    if m == 0:
        raise DomainError("cannot decode an empty bit string")
    acc = 0
    for b in bits:
        acc = (acc << 1) | (1 if b else 0)
    return acc / (1 << m)


def decode_vector(bits: Sequence[int], n: int, m_per: int) -> list[float]:
    """Coordinate-wise decode of consecutive m_per-bit blocks."""
    if n < 1 or m_per < 1:
        raise DomainError("n and m_per must be positive")
    if len(bits) != n * m_per:
        raise DomainError(
            "expected %d bits for %d coordinates of %d bits, got %d"
            % (n * m_per, n, m_per, len(bits))
        )
    return [decode_bits(bits[i * m_per : (i + 1) * m_per]) for i in range(n)]


@dataclass(frozen=True)
class FixedPointCodec:
    """Per-coordinate k-bit truncation codec for vectors in [0,1]^n."""

    k: int
    n: int

    def __post_init__(self):
        if self.k < 1 or self.n < 1:
            raise DomainError("codec needs k >= 1 and n >= 1")
        if self.k > MAX_BITS:
            raise DomainError("codec limited to k <= %d" % MAX_BITS)

    def encode(self, x: Sequence[float]) -> list[int]:
        """Concatenated per-coordinate bit blocks, coordinate order."""
        if len(x) != self.n:
            raise DomainError("expected %d coordinates, got %d" % (self.n, len(x)))
        out: list[int] = []
        for xi in x:
            out.extend(encode_scalar(float(xi), self.k))
        return out

    def decode(self, bits: Sequence[int]) -> list[float]:
        """Inverse direction for full-width vectors (m_per = k)."""
        return decode_vector(bits, self.n, self.k)

    def truncate(self, x: Sequence[float]) -> list[float]:
        """decode(encode(x)): x snapped down to the k-bit grid."""
        return self.decode(self.encode(x))
