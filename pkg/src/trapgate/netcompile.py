"""Compiler from ReLU networks to Boolean circuits over fixed-point words.

Every intermediate value is a W-bit two's complement word with F fraction
bits (W = 1 sign + I integer + F fraction). The compiler picks I by
interval analysis so no neuron value can overflow, and F by tracking how
many fraction bits the exact arithmetic can touch, so nothing is ever
truncated mid-network. The circuit therefore computes the quantized
network exactly on every k-bit input grid point; the only losses are the
input truncation to k bits and the final output truncation to m bits.

Arithmetic gadgets: ripple-carry adders, two's complement negation, and
shift-and-add multiplication by dyadic constants (weights are constants,
so no general multiplier exists). ReLU masks on the sign bit; clamp01 is
a comparator pair plus mux. The output stage emits, per output neuron,
the m most significant fraction bits of the value clamped to [0,1].

Circuit input layout: coordinate-major, most significant bit first, i.e.
the exact bit string produced by the codec for k bits per coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import scipy.sparse as sp

from .circuits import BoolCircuit, CircuitBuilder
from .codec import MAX_BITS
from .errors import DomainError, InvariantError
from .relunet import ReluNetwork

Signal = tuple  # W wire ids, least significant bit first


@dataclass(frozen=True)
class FixedPointFormat:
    """Word geometry: value = two's complement integer / 2^frac_bits."""

    int_bits: int
    frac_bits: int
    signed: bool = True

    def __post_init__(self):
        if self.int_bits < 1 or self.frac_bits < 1:
            raise DomainError("format needs int_bits >= 1 and frac_bits >= 1")
        if not self.signed:
            raise DomainError("only the signed format is supported")

    @property
    def width(self) -> int:
        return 1 + self.int_bits + self.frac_bits

    @property
    def max_value(self) -> float:
        return float(1 << self.int_bits) - 2.0**-self.frac_bits

    @property
    def min_value(self) -> float:
        return -float(1 << self.int_bits)


def _weight_parts(v: float) -> tuple[int, int]:
    """v as (num, exp) with v = num / 2^exp; exact for binary floats."""
    num, den = float(v).as_integer_ratio()
    return num, den.bit_length() - 1


def _layer_exponents(net: ReluNetwork) -> list[tuple[int, int]]:
    """Per layer: (max weight exponent, max bias exponent)."""
    out = []
    for layer in net.layers:
        wexp = 0
        for row in layer.w:
            for v in row:
                wexp = max(wexp, _weight_parts(float(v))[1])
        bexp = 0
        for v in layer.b:
            bexp = max(bexp, _weight_parts(float(v))[1])
        out.append((wexp, bexp))
    return out


def required_frac_bits(net: ReluNetwork, k: int) -> int:
    """Fraction bits needed so every intermediate value stays exact."""
    used = k
    for wexp, bexp in _layer_exponents(net):
        used = max(used + wexp, bexp)
    return used


def value_intervals(net: ReluNetwork, k: int) -> list[list[tuple[float, float]]]:
    """Pre-activation value ranges per layer, by interval arithmetic."""
    lo = [0.0] * net.input_dim
    hi = [1.0 - 2.0**-k] * net.input_dim
    rows_out = []
    for layer in net.layers:
        pre = []
        for row, bias in zip(layer.w, layer.b):
            a, b = float(bias), float(bias)
            for w, l, h in zip(row, lo, hi):
                w = float(w)
                if w >= 0:
                    a += w * l
                    b += w * h
                else:
                    a += w * h
                    b += w * l
            pre.append((a, b))
        rows_out.append(pre)
        if layer.act == "relu":
            lo = [max(a, 0.0) for a, _ in pre]
            hi = [max(b, 0.0) for _, b in pre]
        elif layer.act == "clamp01":
            lo = [min(max(a, 0.0), 1.0) for a, _ in pre]
            hi = [min(max(b, 0.0), 1.0) for _, b in pre]
        else:
            lo = [a for a, _ in pre]
            hi = [b for _, b in pre]
    return rows_out


def choose_format(net: ReluNetwork, k: int, m: int) -> FixedPointFormat:
    """Smallest format that makes compilation exact and overflow-free."""
    frac = max(required_frac_bits(net, k), m, k)
    if frac > MAX_BITS:
        raise DomainError(
            "network needs %d fraction bits for exact arithmetic; limit is %d"
            % (frac, MAX_BITS)
        )
    span = 1.0
    for pre in value_intervals(net, k):
        for a, b in pre:
            span = max(span, -a, b + 2.0**-frac)
    int_bits = 1
    while float(1 << int_bits) < span:
        int_bits += 1
    return FixedPointFormat(int_bits=int_bits, frac_bits=frac)


def _check_format(net: ReluNetwork, k: int, m: int, fmt: FixedPointFormat) -> None:
    need_frac = max(required_frac_bits(net, k), m, k)
    if fmt.frac_bits < need_frac:
        raise DomainError(
            "format has %d fraction bits but exact arithmetic needs %d"
            % (fmt.frac_bits, need_frac)
        )
    for li, pre in enumerate(value_intervals(net, k)):
        for a, b in pre:
            if a < fmt.min_value or b > fmt.max_value:
                raise DomainError(
                    "layer %d: values may reach [%g, %g], outside the "
                    "format range [%g, %g]; raise int_bits"
                    % (li, a, b, fmt.min_value, fmt.max_value)
                )


class _WordOps:
    """Fixed-point word gadgets over a shared CircuitBuilder."""

    def __init__(self, bld: CircuitBuilder, fmt: FixedPointFormat):
        self.bld = bld
        self.fmt = fmt
        self.W = fmt.width
        self.F = fmt.frac_bits

    def const_word(self, value: float) -> Signal:
        iv = value * (1 << self.F)
        if iv != int(iv):
            raise InvariantError("constant %r does not fit %d fraction bits"
                                 % (value, self.F))
        iv = int(iv) & ((1 << self.W) - 1)
        return tuple(self.bld.const((iv >> i) & 1) for i in range(self.W))

    def add(self, a: Signal, b: Signal) -> Signal:
        bld = self.bld
        out = []
        carry = None
        for ai, bi in zip(a, b):
            if carry is None:
                out.append(bld.XOR(ai, bi))
                carry = bld.AND(ai, bi)
            else:
                axb = bld.XOR(ai, bi)
                out.append(bld.XOR(axb, carry))
                carry = bld.OR(bld.AND(ai, bi), bld.AND(carry, axb))
        return tuple(out)

    def negate(self, a: Signal) -> Signal:
        bld = self.bld
        out = []
        carry = bld.const(1)
        for ai in a:
            inv = bld.NOT(ai)
            out.append(bld.XOR(inv, carry))
            carry = bld.AND(inv, carry)
        return tuple(out)

    def shift(self, a: Signal, r: int) -> Signal:
        """Value times 2^r; right shifts replicate the sign bit."""
        bld = self.bld
        if r >= 0:
            zeros = tuple(bld.const(0) for _ in range(r))
            return (zeros + a)[: self.W]
        t = -r
        sign = a[self.W - 1]
        return a[t:] + tuple(sign for _ in range(t))

    def mul_const(self, a: Signal, w: float) -> Signal | None:
        """a times the dyadic constant w; None when w is zero.

        Shift-and-add over the set bits of the numerator; every right
        shift drops only guaranteed-zero bits (the format tracks used
        fraction precision), so the product is exact.
        """
        num, exp = _weight_parts(w)
        if num == 0:
            return None
        mag = abs(num)
        acc = None
        for s in range(mag.bit_length()):
            if (mag >> s) & 1:
                term = self.shift(a, s - exp)
                acc = term if acc is None else self.add(acc, term)
        if num < 0:
            acc = self.negate(acc)
        return acc

    def relu(self, a: Signal) -> Signal:
        bld = self.bld
        keep = bld.NOT(a[self.W - 1])
        return tuple(bld.AND(ai, keep) for ai in a)

    def clamp01(self, a: Signal) -> Signal:
        bld = self.bld
        W, F = self.W, self.F
        pos = bld.NOT(a[W - 1])
        ge1 = bld.const(0)
        for i in range(F, W - 1):
            ge1 = bld.OR(ge1, a[i])
        lt1 = bld.NOT(ge1)
        out = [bld.const(0)] * W
        for i in range(F):
            out[i] = bld.AND(bld.AND(a[i], pos), lt1)
        out[F] = bld.AND(pos, ge1)  # saturate at exactly 1.0
        return tuple(out)

    def output_bits(self, a: Signal, m: int) -> list[int]:
        """Top m fraction bits of the value clamped into [0,1]."""
        bld = self.bld
        W, F = self.W, self.F
        pos = bld.NOT(a[W - 1])
        ge1 = bld.const(0)
        for i in range(F, W - 1):
            ge1 = bld.OR(ge1, a[i])
        # a value of 1 or more saturates every output bit (top grid cell)
        return [bld.AND(pos, bld.OR(ge1, a[F - i])) for i in range(1, m + 1)]


def compile_network(
    net: ReluNetwork,
    k: int,
    m: int,
    fmt: FixedPointFormat | None = None,
) -> BoolCircuit:
    """Compile net into a circuit from n*k input bits to d*m output bits.

    Deterministic: the same network and parameters produce an identical
    gate list. The result equals the quantized network exactly at grid
    points, so the end-to-end error against the real-valued network is
    the input truncation (at most L / 2^k) plus, when m is smaller than
    the exact output precision, the output truncation (at most 2^-m).
    """
    if k < 1 or m < 1:
        raise DomainError("k and m must be positive")
    for i, layer in enumerate(net.layers):
        if sp.issparse(layer.w):
            raise DomainError("layer %d: compile needs dense weight matrices" % i)
    if fmt is None:
        fmt = choose_format(net, k, m)
    _check_format(net, k, m, fmt)

    n = net.input_dim
    bld = CircuitBuilder(n * k)
    ops = _WordOps(bld, fmt)
    W, F = fmt.width, fmt.frac_bits

    zero = bld.const(0)
    words: list[Signal] = []
    for i in range(n):
        word = [zero] * W
        for j in range(k):  # bit j has weight 2^-(j+1)
            word[F - 1 - j] = i * k + j
        words.append(tuple(word))

    for layer in net.layers:
        nxt: list[Signal] = []
        for row, bias in zip(layer.w, layer.b):
            acc = ops.const_word(float(bias))
            for w, x in zip(row, words):
                term = ops.mul_const(x, float(w))
                if term is not None:
                    acc = ops.add(acc, term)
            if layer.act == "relu":
                acc = ops.relu(acc)
            elif layer.act == "clamp01":
                acc = ops.clamp01(acc)
            nxt.append(acc)
        words = nxt

    outputs: list[int] = []
    for word in words:
        outputs.extend(ops.output_bits(word, m))
    return bld.build(outputs)
