"""Toy circuitizable crypto: ARX permutation, PRG, digest, signatures.

Everything here is deliberately desk-scale and NOT claimed secure at
these widths; the point is that every operation the trigger needs at
evaluation time (PRG comparison, signature verification) exists both as
a host function and as a Boolean circuit, bit-for-bit equal. Stronger
primitives can be dropped in behind the same interfaces.

Conventions: bit lists are least-significant first; words are plain
ints. The permutation is a Speck-style add-rotate-xor cipher with a
public round-constant table (no key schedule); distinct `tweak` values
give independent-looking public permutations, which is how the PRG gets
two of them and the hash a third.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .circuits import BoolCircuit, CircuitBuilder
from .errors import DomainError, FormatError

_GOLDEN = 0x9E3779B97F4A7C15
_SALT = 0xD1B54A32D192ED03

# fixed tweaks reserved by this package
_TWEAK_PRG_LO = 1
_TWEAK_PRG_HI = 2
_TWEAK_ONEWAY = 3
_TWEAK_DIGEST = 4


def int_to_bits(v: int, width: int) -> list[int]:
    return [(v >> i) & 1 for i in range(width)]


def bits_to_int(bits: Sequence[int]) -> int:
    v = 0
    for i, b in enumerate(bits):
        v |= (b & 1) << i
    return v


@dataclass(frozen=True)
class ToyPermutation:
    """Bijection on {0,1}^width from invertible ARX rounds."""

    width: int = 64
    rounds: int = 8
    tweak: int = 0

    def __post_init__(self):
        if self.width < 2 or self.width % 2 != 0:
            raise DomainError("permutation width must be even and >= 2")
        if self.rounds < 1:
            raise DomainError("need at least one round")

    @property
    def half(self) -> int:
        return self.width // 2

    @property
    def _rots(self) -> tuple[int, int]:
        h = self.half
        alpha = 7 if h > 7 else h - 1
        beta = 2 if h > 2 else max(h - 1, 0)
        return alpha, beta

    @property
    def round_constants(self) -> tuple[int, ...]:
        mask = (1 << self.half) - 1
        return tuple(
            (_GOLDEN * (r + 1) + _SALT * self.tweak) & mask for r in range(self.rounds)
        )

    def permute(self, v: int) -> int:
        h = self.half
        mask = (1 << h) - 1
        alpha, beta = self._rots
        x, y = (v >> h) & mask, v & mask
        for rc in self.round_constants:
            x = ((x >> alpha) | (x << (h - alpha))) & mask if alpha else x
            x = (x + y) & mask
            x ^= rc
            y = ((y << beta) | (y >> (h - beta))) & mask if beta else y
            y ^= x
        return (x << h) | y

    def invert(self, v: int) -> int:
        h = self.half
        mask = (1 << h) - 1
        alpha, beta = self._rots
        x, y = (v >> h) & mask, v & mask
        for rc in reversed(self.round_constants):
            y ^= x
            y = ((y >> beta) | (y << (h - beta))) & mask if beta else y
            x ^= rc
            x = (x - y) & mask
            x = ((x << alpha) | (x >> (h - alpha))) & mask if alpha else x
        return (x << h) | y

    def emit(self, bld: CircuitBuilder, wires: Sequence[int]) -> list[int]:
        """Circuit form on existing wires, least-significant first."""
        if len(wires) != self.width:
            raise DomainError("expected %d wires" % self.width)
        h = self.half
        alpha, beta = self._rots
        y, x = list(wires[:h]), list(wires[h:])
        for rc in self.round_constants:
            if alpha:
                x = [x[(i + alpha) % h] for i in range(h)]
            x = _emit_add(bld, x, y)
            x = [bld.NOT(x[i]) if (rc >> i) & 1 else x[i] for i in range(h)]
            if beta:
                y = [y[(i - beta) % h] for i in range(h)]
            y = [bld.XOR(y[i], x[i]) for i in range(h)]
        return y + x


def _emit_add(bld: CircuitBuilder, a: list[int], b: list[int]) -> list[int]:
    """Ripple-carry a+b, carry out dropped (mod 2^len)."""
    out = []
    carry = None
    for i in range(len(a)):
        s = bld.XOR(a[i], b[i])
        if carry is None:
            out.append(s)
            carry = bld.AND(a[i], b[i])
        else:
            out.append(bld.XOR(s, carry))
            carry = bld.OR(bld.AND(a[i], b[i]), bld.AND(carry, s))
    return out


# -- length-doubling PRG ------------------------------------------------


@dataclass(frozen=True)
class PrgSpec:
    """Seed width for the 2x expander; seeds must be even-width."""

    lambda1: int
    rounds: int = 8

    def __post_init__(self):
        if self.lambda1 < 2 or self.lambda1 % 2 != 0:
            raise DomainError("seed width lambda1 must be even and >= 2")

    @property
    def out_bits(self) -> int:
        return 2 * self.lambda1

    def _perms(self) -> tuple[ToyPermutation, ToyPermutation]:
        return (
            ToyPermutation(self.lambda1, self.rounds, _TWEAK_PRG_LO),
            ToyPermutation(self.lambda1, self.rounds, _TWEAK_PRG_HI),
        )


def prg_expand(seed_bits: Sequence[int], rounds: int = 8) -> list[int]:
    """Host PRG: both public permutations of the seed, concatenated.

    Each half is a bijection of the seed, so the whole map is
    injective: distinct seeds give distinct outputs, never colliding.
    """
    spec = PrgSpec(len(seed_bits), rounds)
    v = bits_to_int(seed_bits)
    lo, hi = spec._perms()
    return int_to_bits(lo.permute(v), spec.lambda1) + int_to_bits(hi.permute(v), spec.lambda1)


def emit_prg(bld: CircuitBuilder, spec: PrgSpec, seed_wires: Sequence[int]) -> list[int]:
    """PRG on existing wires; 2*lambda1 output wires."""
    if len(seed_wires) != spec.lambda1:
        raise DomainError("expected %d seed wires" % spec.lambda1)
    lo, hi = spec._perms()
    return lo.emit(bld, seed_wires) + hi.emit(bld, seed_wires)


def prg_circuit(spec: PrgSpec) -> BoolCircuit:
    """Circuit form of prg_expand on lambda1 input wires."""
    bld = CircuitBuilder(spec.lambda1)
    return bld.build(emit_prg(bld, spec, range(spec.lambda1)))


# -- digest (sponge over the permutation) -------------------------------


def _digest_blocks(msg_bits: Sequence[int], h: int) -> list[list[int]]:
    padded = list(msg_bits) + [1]
    while len(padded) % h:
        padded.append(0)
    return [padded[i : i + h] for i in range(0, len(padded), h)]


def _digest_iv(h: int) -> int:
    return _GOLDEN & ((1 << h) - 1)


def digest_bits(msg_bits: Sequence[int], h: int, rounds: int = 8) -> list[int]:
    """h-bit digest of an arbitrary-length bit message."""
    if h < 1:
        raise DomainError("digest width must be positive")
    perm = ToyPermutation(2 * h, rounds, _TWEAK_DIGEST)
    state = _digest_iv(h)
    for block in _digest_blocks(msg_bits, h):
        combined = (state << h) | bits_to_int(block)
        state = (perm.permute(combined) ^ combined) & ((1 << h) - 1)
    return int_to_bits(state, h)


def digest_wires(bld: CircuitBuilder, msg_wires: Sequence[int], h: int, rounds: int = 8) -> list[int]:
    """Circuit form of digest_bits on existing wires."""
    if h < 1:
        raise DomainError("digest width must be positive")
    perm = ToyPermutation(2 * h, rounds, _TWEAK_DIGEST)
    one = bld.const(1)
    zero = bld.const(0)
    padded = list(msg_wires) + [one]
    while len(padded) % h:
        padded.append(zero)
    state = [bld.const(b) for b in int_to_bits(_digest_iv(h), h)]
    for i in range(0, len(padded), h):
        combined = padded[i : i + h] + state
        mixed = perm.emit(bld, combined)
        state = [bld.XOR(mixed[j], combined[j]) for j in range(h)]
    return state


# -- one-time signatures ------------------------------------------------


def _oneway(v: int, w: int, rounds: int) -> int:
    perm = ToyPermutation(w, rounds, _TWEAK_ONEWAY)
    return perm.permute(v) ^ v


@dataclass(frozen=True)
class SignatureKeys:
    """Lamport-style one-time keys over the permutation hash.

    sk holds h pairs of w-bit preimages (None when only the public half
    was loaded); pk the corresponding images. One signature per key
    pair: releasing preimages for two different digests breaks the
    scheme, so callers must key each signed object freshly.
    """

    h: int
    w: int
    pk: tuple[tuple[int, int], ...]
    sk: tuple[tuple[int, int], ...] | None = None
    rounds: int = 8

    def __post_init__(self):
        if self.h < 1:
            raise DomainError("digest width h must be positive")
        if self.w < 2 or self.w % 2 != 0:
            raise DomainError("preimage width w must be even and >= 2")
        if len(self.pk) != self.h or (self.sk is not None and len(self.sk) != self.h):
            raise DomainError("key arrays must have h rows")

    @property
    def sigma_bits(self) -> int:
        return self.h * self.w


def keygen(rng, h: int = 16, w: int = 16, rounds: int = 8) -> SignatureKeys:
    """Fresh one-time key pair from the injected randomness source."""
    sk = tuple((rng.getrandbits(w), rng.getrandbits(w)) for _ in range(h))
    pk = tuple((_oneway(a, w, rounds), _oneway(b, w, rounds)) for a, b in sk)
    return SignatureKeys(h=h, w=w, pk=pk, sk=sk, rounds=rounds)


def sign(keys: SignatureKeys, msg_bits: Sequence[int]) -> list[int]:
    """Signature = the preimage chain picked by each digest bit."""
    if keys.sk is None:
        raise DomainError("secret key material not present")
    d = digest_bits(msg_bits, keys.h, keys.rounds)
    sigma: list[int] = []
    for i, bit in enumerate(d):
        sigma.extend(int_to_bits(keys.sk[i][bit], keys.w))
    return sigma


def verify(keys: SignatureKeys, msg_bits: Sequence[int], sigma: Sequence[int]) -> int:
    """1 iff each revealed preimage hashes to the published image."""
    if len(sigma) != keys.sigma_bits:
        raise DomainError(
            "signature must be %d bits, got %d" % (keys.sigma_bits, len(sigma))
        )
    d = digest_bits(msg_bits, keys.h, keys.rounds)
    for i, bit in enumerate(d):
        chunk = bits_to_int(sigma[i * keys.w : (i + 1) * keys.w])
        if _oneway(chunk, keys.w, keys.rounds) != keys.pk[i][bit]:
            return 0
    return 1


def const_equal(bld: CircuitBuilder, wires: Sequence[int], value: int) -> int:
    """Wire that is 1 iff the word equals the baked-in constant."""
    acc = None
    for i, wi in enumerate(wires):
        bit = wi if (value >> i) & 1 else bld.NOT(wi)
        acc = bit if acc is None else bld.AND(acc, bit)
    return acc


def emit_verify(
    bld: CircuitBuilder,
    keys: SignatureKeys,
    msg_wires: Sequence[int],
    sigma_wires: Sequence[int],
) -> int:
    """Signature check on existing wires; pk baked in as constants."""
    if len(sigma_wires) != keys.sigma_bits:
        raise DomainError(
            "signature must be %d wires, got %d" % (keys.sigma_bits, len(sigma_wires))
        )
    d = digest_wires(bld, msg_wires, keys.h, keys.rounds)
    perm = ToyPermutation(keys.w, keys.rounds, _TWEAK_ONEWAY)
    ok = None
    for i in range(keys.h):
        chunk = list(sigma_wires[i * keys.w : (i + 1) * keys.w])
        hashed = perm.emit(bld, chunk)
        hashed = [bld.XOR(hashed[j], chunk[j]) for j in range(keys.w)]
        eq0 = const_equal(bld, hashed, keys.pk[i][0])
        eq1 = const_equal(bld, hashed, keys.pk[i][1])
        good = bld.MUX(d[i], eq1, eq0)
        ok = good if ok is None else bld.AND(ok, good)
    return ok


def verify_circuit(keys: SignatureKeys, msg_len: int) -> BoolCircuit:
    """Standalone verifier agreeing with host verify on every input.

    Inputs: msg_len message wires then sigma_bits signature wires;
    single output.
    """
    if msg_len < 0:
        raise DomainError("message length must be nonnegative")
    bld = CircuitBuilder(msg_len + keys.sigma_bits)
    msg = list(range(msg_len))
    sigma = [msg_len + j for j in range(keys.sigma_bits)]
    return bld.build([emit_verify(bld, keys, msg, sigma)])


def equality_comparator(width: int) -> BoolCircuit:
    """1 iff the first width wires equal the last width wires."""
    if width < 1:
        raise DomainError("width must be positive")
    bld = CircuitBuilder(2 * width)
    acc = None
    for i in range(width):
        eq = bld.XNOR(i, width + i)
        acc = eq if acc is None else bld.AND(acc, eq)
    return bld.build([acc])


# -- key files ----------------------------------------------------------


def keys_to_doc(keys: SignatureKeys, include_secret: bool = False) -> dict:
    doc = {
        "h": keys.h,
        "w": keys.w,
        "pk": [["%x" % a, "%x" % b] for a, b in keys.pk],
    }
    if include_secret:
        if keys.sk is None:
            raise DomainError("secret key material not present")
        doc["sk"] = [["%x" % a, "%x" % b] for a, b in keys.sk]
    return doc


def keys_from_doc(doc) -> SignatureKeys:
    try:
        h, w = int(doc["h"]), int(doc["w"])
        pk = tuple((int(a, 16), int(b, 16)) for a, b in doc["pk"])
        sk = None
        if "sk" in doc:
            sk = tuple((int(a, 16), int(b, 16)) for a, b in doc["sk"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError("malformed key file: %s" % e) from e
    keys = SignatureKeys(h=h, w=w, pk=pk, sk=sk)
    if sk is not None:
        for i, (a, b) in enumerate(sk):
            if (_oneway(a, w, keys.rounds), _oneway(b, w, keys.rounds)) != pk[i]:
                raise FormatError("public key row %d does not match secret" % i)
    return keys


def save_keys(keys: SignatureKeys, path, include_secret: bool = False) -> None:
    doc = keys_to_doc(keys, include_secret)
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_keys(path) -> SignatureKeys:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError("cannot read key file: %s" % e) from e
    return keys_from_doc(doc)
