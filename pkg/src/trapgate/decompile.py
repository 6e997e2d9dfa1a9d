"""Rebuilding a ReLU network from a fixed-point Boolean circuit.

Given a circuit C on n*k input bits, the reconstructed network g
approximates x -> T_inv(C(T_k(x))) to within twice the circuit's
modulus bound eps, where T_k encodes each coordinate to k fraction bits
and T_inv decodes output bit groups.

The construction evaluates C on 2n+1 shifted copies of the input,
x + l/(4nN) for l = 0..2n with N = 2^k, and takes the per-output
median. Shifting by multiples of 1/(4nN) guarantees that for any x at
least n+1 replicas are "good": every coordinate sits at distance at
least 1/(8nN) from every multiple of 1/N, which is exactly the margin
the clamp-based bit extraction at precision ell = k + 3 + ceil(log2 n)
needs to recover the truncated bits without error. Each good replica
therefore contributes the exact circuit value at a point within 2^-k
of x, and the median of 2n+1 values with at least n+1 of them inside
an interval stays inside that interval.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .circuits import BoolCircuit, pack_samples
from .codec import MAX_BITS, decode_vector
from .errors import DomainError
from .linarith import LinBuilder, extract_bits_into, lower_into, median_into, to_relu
from .relunet import ReluNetwork

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecompileParams:
    """Hypotheses for the reconstruction.

    eps bounds how much the decoded circuit value can move between
    inputs within 2^-k of each other; it is supplied by the caller
    (see modulus_bound) rather than estimated here. out_bits is the
    bit width of each decoded output coordinate, defaulting to k.
    """

    n: int
    k: int
    eps: float
    out_bits: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("need at least one coordinate")
        if not 1 <= self.k <= MAX_BITS:
            raise DomainError("input bits k out of range")
        if self.eps < 0:
            raise DomainError("modulus bound eps must be nonnegative")
        if self.out_bits is not None and not 1 <= self.out_bits <= MAX_BITS:
            raise DomainError("out_bits out of range")

    @property
    def N(self) -> int:
        return 1 << self.k

    @property
    def ell(self) -> int:
        return self.k + 3 + (self.n - 1).bit_length()

    @property
    def replica_count(self) -> int:
        return 2 * self.n + 1

    def replica_offsets(self) -> list[Fraction]:
        step = Fraction(1, 4 * self.n * self.N)
        return [l * step for l in range(self.replica_count)]


def s_good(x: Sequence[float], params: DecompileParams) -> list[int]:
    """Indices of replicas whose every coordinate clears the margin.

    A replica is good when each shifted coordinate lies at distance
    >= 1/(8nN) from every multiple of 1/N (computed exactly).
    """
    if len(x) != params.n:
        raise DomainError("expected %d coordinates" % params.n)
    cell = Fraction(1, params.N)
    margin = Fraction(1, 8 * params.n * params.N)
    good = []
    for idx, off in enumerate(params.replica_offsets()):
        ok = True
        for xi in x:
            y = Fraction(xi) + off
            frac = y - (y // cell) * cell
            if min(frac, cell - frac) < margin:
                ok = False
                break
        if ok:
            good.append(idx)
    return good


def decompile(c: BoolCircuit, params: DecompileParams) -> ReluNetwork:
    """ReLU network within 2*eps of x -> T_inv(C(T_k(x))) on [0,1]^n."""
    n, k = params.n, params.k
    if c.n_inputs != n * k:
        raise DomainError(
            "circuit takes %d bits but params describe %d coordinates of %d bits"
            % (c.n_inputs, n, k)
        )
    m = params.out_bits if params.out_bits is not None else k
    if len(c.outputs) == 0 or len(c.outputs) % m != 0:
        raise DomainError(
            "circuit has %d outputs, not a multiple of %d bits" % (len(c.outputs), m)
        )
    n_out = len(c.outputs) // m

    bld = LinBuilder(n)
    per_replica: list[list[int]] = []
    for off in params.replica_offsets():
        bits: list[int] = []
        for i in range(n):
            v = i if off == 0 else bld.add(i, bld.const(off))
            bits.extend(extract_bits_into(bld, v, k, params.ell))
        outs = lower_into(bld, c, bits)
        vals = []
        for g in range(n_out):
            acc = None
            for j in range(m):
                term = bld.mulc(outs[g * m + j], Fraction(1, 2 ** (j + 1)))
                acc = term if acc is None else bld.add(acc, term)
            vals.append(acc)
        per_replica.append(vals)

    medians = [
        median_into(bld, [per_replica[r][g] for r in range(params.replica_count)])
        for g in range(n_out)
    ]
    lin = bld.build(medians)
    net = to_relu(lin)
    log.debug(
        "decompiled %d-gate circuit: %d arithmetic nodes, %d network layers",
        len(c.gates),
        lin.node_count,
        len(net.layers),
    )
    return net


@dataclass(frozen=True)
class ModulusBound:
    """Largest decoded jump between nearby grid inputs.

    exhaustive=True means every adjacent cell pair was checked and the
    value is the true modulus; otherwise it is a sampled lower bound.
    """

    value: float
    exhaustive: bool
    pairs_checked: int

    def __float__(self) -> float:
        return self.value


_EXHAUSTIVE_LIMIT = 16  # n*k above this switches to sampling


def _cell_values(c: BoolCircuit, cells: np.ndarray, n: int, k: int, m: int) -> np.ndarray:
    """Decode circuit outputs for rows of per-coordinate cell indices."""
    samples = []
    for row in cells:
        bits = []
        for i in range(n):
            j = int(row[i])
            bits.extend((j >> (k - 1 - t)) & 1 for t in range(k))
        samples.append(bits)
    columns, count = pack_samples(samples)
    out_cols = c.batch_evaluate(columns, count)
    n_out = len(out_cols) // m
    vals = []
    for s in range(count):
        obits = [(col >> s) & 1 for col in out_cols]
        vals.append(decode_vector(obits, n_out, m))
    return np.asarray(vals)


def modulus_bound(
    c: BoolCircuit, n: int, k: int, budget: int = 4096, out_bits: int | None = None
) -> ModulusBound:
    """Max decoded distance over grid pairs within one cell of each other.

    Exhaustive over all adjacent cell pairs when n*k is small; above
    that, a deterministic random sample of `budget` pairs, reported as
    a lower bound via exhaustive=False.
    """
    if c.n_inputs != n * k:
        raise DomainError("circuit arity does not match n*k")
    m = out_bits if out_bits is not None else k
    if len(c.outputs) == 0 or len(c.outputs) % m != 0:
        raise DomainError("output count is not a multiple of the decode width")
    N = 1 << k

    if n * k <= _EXHAUSTIVE_LIMIT:
        grids = np.meshgrid(*([np.arange(N)] * n), indexing="ij")
        cells = np.stack([g.reshape(-1) for g in grids], axis=1)
        flat = _cell_values(c, cells, n, k, m)
        n_out = flat.shape[1]
        table = flat.reshape((N,) * n + (n_out,))
        best = 0.0
        pairs = 0
        # one representative per unordered neighbor pair: first non-zero
        # shift must be positive
        offsets = []
        for off in np.ndindex(*([3] * n)):
            nz = [d for d in off if d != 1]
            if nz and nz[0] == 2:
                offsets.append(off)
        for off in offsets:
            sa, sb = [], []
            for d in off:
                if d == 0:
                    sa.append(slice(1, None))
                    sb.append(slice(None, -1))
                elif d == 2:
                    sa.append(slice(None, -1))
                    sb.append(slice(1, None))
                else:
                    sa.append(slice(None))
                    sb.append(slice(None))
            diff = np.abs(table[tuple(sa)] - table[tuple(sb)])
            if diff.size:
                pairs += diff.size // max(n_out, 1)
                best = max(best, float(diff.max()))
        return ModulusBound(best, True, pairs)

    rng = random.Random(0)
    pairs = []
    for _ in range(budget):
        a = [rng.randrange(N) for _ in range(n)]
        b = list(a)
        while b == a:
            b = [min(N - 1, max(0, a[i] + rng.randrange(-1, 2))) for i in range(n)]
        pairs.append((a, b))
    cells = np.asarray([p[0] for p in pairs] + [p[1] for p in pairs])
    vals = _cell_values(c, cells, n, k, m)
    diff = np.abs(vals[:budget] - vals[budget:])
    return ModulusBound(float(diff.max()), False, budget)
