"""Linear arithmetic circuits and their exact ReLU-network conversion.

Nodes are drawn from {input, const, add, sub, mulc, max, min}; mulc is
multiplication by a rational constant. This tiny IR is exactly the
fragment a ReLU network can express: max{a,b} = a + ReLU(b-a) and
min{a,b} = b - ReLU(b-a), while add/sub/mulc/const fold into affine
layers.

Gadgets built on the IR:

* bit_extract_gadget(k, ell): the clamp-based recursion recovering the
  top k fraction bits of x in (0,1). With t_0 = 0 and
  t_j = clamp01(2^ell * (x - 2^-j - sum_{i<j} 2^-i t_i)), the outputs
  are exact whenever some bit of x in positions k+1..ell is one.
* lower_bool_circuit: AND becomes min, OR becomes max, NOT becomes 1-a,
  so on {0,1} inputs the lowered circuit equals the Boolean one.
* median_network: odd-even transposition sorting network, median tap.

to_relu flattens a circuit into sparse affine+ReLU layers. Every max/min
introduces one ReLU unit; values are tracked as affine combinations of
the network inputs and earlier unit outputs. Unit outputs are
nonnegative and pass through later ReLU layers unchanged; raw inputs are
carried as the pair (ReLU(x), ReLU(-x)), which keeps the conversion
exact on the whole real domain. When an affine combination grows past a
small cutoff it is re-materialized through a pair of ReLU units, keeping
the network size linear in the circuit size.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .circuits import BoolCircuit
from .errors import DomainError, InvariantError
from .relunet import Layer, ReluNetwork

LIN_OPS = ("input", "const", "add", "sub", "mulc", "max", "min")

# affine combinations are rebased through ReLU pairs past this many terms
_REBASE_CUTOFF = 8


@dataclass(frozen=True)
class LinNode:
    op: str
    args: tuple[int, ...] = ()
    value: Fraction | None = None  # const value, or mulc coefficient


class LinArithCircuit:
    """Topologically ordered DAG of linear arithmetic nodes."""

    def __init__(self, n_inputs: int, nodes: Sequence[LinNode], outputs: Sequence[int]):
        self.n_inputs = int(n_inputs)
        self.nodes = tuple(nodes)
        self.outputs = tuple(int(o) for o in outputs)

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    def validate(self) -> list[str]:
        issues = []
        for i in range(self.n_inputs):
            if i >= len(self.nodes) or self.nodes[i].op != "input":
                issues.append("node %d: expected input in the prefix" % i)
        for i, nd in enumerate(self.nodes):
            if nd.op not in LIN_OPS:
                issues.append("node %d: unknown op %r" % (i, nd.op))
                continue
            want = {"input": 0, "const": 0, "mulc": 1}.get(nd.op, 2)
            if len(nd.args) != want:
                issues.append("node %d: op %s wants %d args" % (i, nd.op, want))
            if nd.op in ("const", "mulc") and nd.value is None:
                issues.append("node %d: missing constant value" % i)
            for a in nd.args:
                if not 0 <= a < i:
                    issues.append("node %d: forward or bad reference %d" % (i, a))
        for o in self.outputs:
            if not 0 <= o < len(self.nodes):
                issues.append("output refers to missing node %d" % o)
        return issues

    def depths(self) -> list[int]:
        d = [0] * len(self.nodes)
        for i, nd in enumerate(self.nodes):
            if nd.args:
                d[i] = 1 + max(d[a] for a in nd.args)
        return d

    def evaluate(self, xs: Sequence, exact: bool = False) -> list:
        """Interpret on one input vector.

        exact=True runs in rational arithmetic (exact for any rational
        constants); the default float path is exact for dyadic values
        within double range and is what the tests' 1e-9 tolerance covers.
        """
        if len(xs) != self.n_inputs:
            raise DomainError("expected %d inputs, got %d" % (self.n_inputs, len(xs)))
        conv = Fraction if exact else float
        vals = [None] * len(self.nodes)
        for i, nd in enumerate(self.nodes):
            op = nd.op
            if op == "input":
                vals[i] = conv(xs[i])
            elif op == "const":
                vals[i] = conv(nd.value)
            elif op == "add":
                vals[i] = vals[nd.args[0]] + vals[nd.args[1]]
            elif op == "sub":
                vals[i] = vals[nd.args[0]] - vals[nd.args[1]]
            elif op == "mulc":
                vals[i] = vals[nd.args[0]] * conv(nd.value)
            elif op == "max":
                vals[i] = max(vals[nd.args[0]], vals[nd.args[1]])
            else:
                vals[i] = min(vals[nd.args[0]], vals[nd.args[1]])
        return [vals[o] for o in self.outputs]

    def evaluate_batch(self, xs) -> np.ndarray:
        """Vectorized float interpretation; xs has shape (batch, n)."""
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim != 2 or xs.shape[1] != self.n_inputs:
            raise DomainError("batch shape must be (rows, %d)" % self.n_inputs)
        batch = xs.shape[0]
        vals: list = [None] * len(self.nodes)
        for i, nd in enumerate(self.nodes):
            op = nd.op
            if op == "input":
                vals[i] = xs[:, i]
            elif op == "const":
                vals[i] = np.full(batch, float(nd.value))
            elif op == "add":
                vals[i] = vals[nd.args[0]] + vals[nd.args[1]]
            elif op == "sub":
                vals[i] = vals[nd.args[0]] - vals[nd.args[1]]
            elif op == "mulc":
                vals[i] = vals[nd.args[0]] * float(nd.value)
            elif op == "max":
                vals[i] = np.maximum(vals[nd.args[0]], vals[nd.args[1]])
            else:
                vals[i] = np.minimum(vals[nd.args[0]], vals[nd.args[1]])
        return np.stack([vals[o] for o in self.outputs], axis=1)


class LinBuilder:
    """Append-only constructor mirroring CircuitBuilder."""

    def __init__(self, n_inputs: int, dedup: bool = True):
        self.n_inputs = n_inputs
        self.nodes: list[LinNode] = [LinNode("input") for _ in range(n_inputs)]
        self.dedup = dedup
        self._seen: dict[tuple, int] = {}

    def _emit(self, op: str, args: tuple[int, ...], value=None) -> int:
        if value is not None and not isinstance(value, Fraction):
            value = Fraction(value)
        if self.dedup:
            key = (op, args, value)
            got = self._seen.get(key)
            if got is not None:
                return got
        self.nodes.append(LinNode(op, args, value))
        nid = len(self.nodes) - 1
        if self.dedup:
            self._seen[(op, args, value)] = nid
        return nid

    def const(self, v) -> int:
        return self._emit("const", (), v)

    def add(self, a: int, b: int) -> int:
        return self._emit("add", (a, b))

    def sub(self, a: int, b: int) -> int:
        return self._emit("sub", (a, b))

    def mulc(self, a: int, coeff) -> int:
        return self._emit("mulc", (a,), coeff)

    def vmax(self, a: int, b: int) -> int:
        return self._emit("max", (a, b))

    def vmin(self, a: int, b: int) -> int:
        return self._emit("min", (a, b))

    def clamp01(self, a: int) -> int:
        return self.vmin(self.const(1), self.vmax(self.const(0), a))

    def build(self, outputs: Sequence[int]) -> LinArithCircuit:
        return LinArithCircuit(self.n_inputs, self.nodes, outputs)


def extract_bits_into(bld: LinBuilder, x_node: int, k: int, ell: int) -> list[int]:
    """Emit the k-bit extraction recursion on an existing wire.

    Returns the bit nodes most significant first. Exact whenever the
    value has a one bit somewhere in fraction positions k+1..ell, and
    for values >= 1, where every output saturates to one (the top cell).
    """
    if k < 1:
        raise DomainError("need k >= 1")
    if ell <= k:
        raise DomainError("precision ell must exceed k")
    scale = Fraction(2) ** ell
    u = x_node  # running residual: value minus the bits taken so far
    ts = []
    for j in range(1, k + 1):
        shifted = bld.mulc(bld.sub(u, bld.const(Fraction(1, 2**j))), scale)
        t = bld.clamp01(shifted)
        ts.append(t)
        if j < k:
            u = bld.sub(u, bld.mulc(t, Fraction(1, 2**j)))
    return ts


def bit_extract_gadget(k: int, ell: int) -> LinArithCircuit:
    """Circuit with one input and k outputs, the top-k fraction bits.

    k rounds of the running-residual recursion, so node count is O(k)
    here (well under the documented O(k^2) cap).
    """
    bld = LinBuilder(1)
    return bld.build(extract_bits_into(bld, 0, k, ell))


def lower_into(bld: LinBuilder, c: BoolCircuit, inputs: Sequence[int]) -> list[int]:
    """Emit the min/max/1-a form of a Boolean circuit on existing wires."""
    if len(inputs) != c.n_inputs:
        raise DomainError("expected %d input wires, got %d" % (c.n_inputs, len(inputs)))
    mapped: list[int] = list(inputs)
    one = None
    for i, g in enumerate(c.gates):
        if g.op == "INPUT":
            continue
        if g.op == "CONST0":
            mapped.append(bld.const(0))
        elif g.op == "CONST1":
            mapped.append(bld.const(1))
        elif g.op == "BUF":
            mapped.append(mapped[g.args[0]])
        elif g.op == "NOT":
            if one is None:
                one = bld.const(1)
            mapped.append(bld.sub(one, mapped[g.args[0]]))
        elif g.op == "AND":
            mapped.append(bld.vmin(mapped[g.args[0]], mapped[g.args[1]]))
        elif g.op == "OR":
            mapped.append(bld.vmax(mapped[g.args[0]], mapped[g.args[1]]))
        else:
            raise DomainError("cannot lower op %r" % g.op)
    if len(mapped) != len(c.gates):
        raise InvariantError("lowering lost track of gate ids")
    return [mapped[o] for o in c.outputs]


def lower_bool_circuit(c: BoolCircuit) -> LinArithCircuit:
    """Arithmetic form of a Boolean circuit: min/max/1-a semantics."""
    bld = LinBuilder(c.n_inputs)
    return bld.build(lower_into(bld, c, range(c.n_inputs)))


def median_into(bld: LinBuilder, wires: Sequence[int]) -> int:
    """Odd-even transposition sort over the wires, median wire returned."""
    count = len(wires)
    if count < 1 or count % 2 == 0:
        raise DomainError("median needs an odd positive count")
    wires = list(wires)
    for rnd in range(count):
        start = rnd % 2
        for i in range(start, count - 1, 2):
            lo = bld.vmin(wires[i], wires[i + 1])
            hi = bld.vmax(wires[i], wires[i + 1])
            wires[i], wires[i + 1] = lo, hi
    return wires[count // 2]


def median_network(count: int) -> LinArithCircuit:
    """Sorting-network median of count inputs."""
    bld = LinBuilder(count, dedup=False)
    return bld.build([median_into(bld, range(count))])


# -- conversion to a ReLU network ---------------------------------------


def _merge(da: dict, ca: float, db: dict, cb: float, s: float):
    d = dict(da)
    for key, v in db.items():
        nv = d.get(key, 0.0) + s * v
        if nv == 0.0:
            d.pop(key, None)
        else:
            d[key] = nv
    return d, ca + s * cb


def to_relu(c: LinArithCircuit, final_act: str = "identity") -> ReluNetwork:
    """Exact ReLU-network equivalent of the circuit.

    The result has one sparse relu layer per level of max/min units plus
    a final affine layer with the requested activation.
    """
    issues = c.validate()
    if issues:
        raise DomainError("invalid circuit: " + "; ".join(issues[:3]))
    if c.n_inputs < 1:
        raise DomainError("need at least one input")

    units: list[tuple[dict, float]] = []  # pre-activation affine forms
    ulevel: list[int] = []

    def level_of(d: dict) -> int:
        lvl = 0
        for key in d:
            if key[0] == "r":
                lvl = max(lvl, ulevel[key[1]])
        return lvl

    def new_unit(d: dict, cst: float) -> int:
        units.append((d, cst))
        ulevel.append(1 + level_of(d))
        return len(units) - 1

    def rebase(d: dict, cst: float):
        # express the value v as ReLU(v) - ReLU(-v), two fresh units
        up = new_unit(d, cst)
        un = new_unit({k: -v for k, v in d.items()}, -cst)
        return {("r", up): 1.0, ("r", un): -1.0}, 0.0

    aff: list[tuple[dict, float] | None] = [None] * len(c.nodes)
    for i, nd in enumerate(c.nodes):
        op = nd.op
        if op == "input":
            aff[i] = ({("x", i): 1.0}, 0.0)
        elif op == "const":
            aff[i] = ({}, float(nd.value))
        elif op in ("add", "sub"):
            da, ca = aff[nd.args[0]]
            db, cb = aff[nd.args[1]]
            aff[i] = _merge(da, ca, db, cb, 1.0 if op == "add" else -1.0)
        elif op == "mulc":
            da, ca = aff[nd.args[0]]
            f = float(nd.value)
            if f == 0.0:
                aff[i] = ({}, 0.0)
            else:
                aff[i] = ({k: v * f for k, v in da.items()}, ca * f)
        else:  # max / min
            da, ca = aff[nd.args[0]]
            db, cb = aff[nd.args[1]]
            if len(db) < len(da):  # rebase onto the smaller side
                (da, ca), (db, cb) = (db, cb), (da, ca)
            if op == "max":
                pre_d, pre_c = _merge(db, cb, da, ca, -1.0)  # other - base
                r_sign = 1.0
            else:
                pre_d, pre_c = _merge(da, ca, db, cb, -1.0)  # base - other
                r_sign = -1.0
            u = new_unit(pre_d, pre_c)
            d = dict(da)
            d[("r", u)] = d.get(("r", u), 0.0) + r_sign
            out = (d, ca)
            if len(d) > _REBASE_CUTOFF:
                out = rebase(*out)
            aff[i] = out

    out_affs = [aff[o] for o in c.outputs]

    # backward liveness: keep only units reachable from the outputs
    needed: set[int] = set()
    stack = [key[1] for d, _ in out_affs for key in d if key[0] == "r"]
    while stack:
        u = stack.pop()
        if u in needed:
            continue
        needed.add(u)
        stack.extend(key[1] for key in units[u][0] if key[0] == "r")

    depth = max((ulevel[u] for u in needed), default=0)
    n = c.n_inputs

    if depth == 0:
        rows, cols, data = [], [], []
        bias = np.zeros(len(out_affs))
        for r, (d, cst) in enumerate(out_affs):
            bias[r] = cst
            for key, v in d.items():
                rows.append(r)
                cols.append(key[1])
                data.append(v)
        w = sp.csr_matrix((data, (rows, cols)), shape=(len(out_affs), n))
        return ReluNetwork([Layer(w=w, b=bias, act=final_act)], n)

    # how long each carried value must stay in the state
    x_until = [0] * n
    r_until = {u: ulevel[u] for u in needed}
    consumers = [(units[u][0], ulevel[u]) for u in sorted(needed)]
    consumers.append(({k: v for d, _ in out_affs for k, v in d.items()}, depth + 1))
    for d, lvl in consumers:
        for key in d:
            if key[0] == "x":
                if lvl >= 2:
                    x_until[key[1]] = max(x_until[key[1]], lvl - 1)
            else:
                r_until[key[1]] = max(r_until[key[1]], lvl - 1)

    units_by_level: dict[int, list[int]] = {}
    for u in sorted(needed):
        units_by_level.setdefault(ulevel[u], []).append(u)

    def state_at(j: int) -> list[tuple]:
        st: list[tuple] = []
        for i in range(n):
            if x_until[i] >= j:
                st.append(("p", i))
        for i in range(n):
            if x_until[i] >= j:
                st.append(("q", i))
        for u in sorted(needed):
            if ulevel[u] <= j <= r_until[u]:
                st.append(("r", u))
        return st

    layers: list[Layer] = []
    prev_state: list[tuple] = []  # layer 1 reads the raw input instead
    prev_index: dict[tuple, int] = {}

    def emit_row(rows, cols, data, r, d: dict, first_layer: bool):
        for key, v in d.items():
            if key[0] == "x":
                if first_layer:
                    rows.append(r)
                    cols.append(key[1])
                    data.append(v)
                else:
                    rows.append(r)
                    cols.append(prev_index[("p", key[1])])
                    data.append(v)
                    rows.append(r)
                    cols.append(prev_index[("q", key[1])])
                    data.append(-v)
            else:
                rows.append(r)
                cols.append(prev_index[("r", key[1])])
                data.append(v)

    for j in range(1, depth + 1):
        state = state_at(j)
        first = j == 1
        in_dim = n if first else len(prev_state)
        rows, cols, data = [], [], []
        bias = np.zeros(len(state))
        for r, key in enumerate(state):
            kind = key[0]
            if kind == "p" and first:
                rows.append(r); cols.append(key[1]); data.append(1.0)
            elif kind == "q" and first:
                rows.append(r); cols.append(key[1]); data.append(-1.0)
            elif kind in ("p", "q") or (kind == "r" and ulevel[key[1]] < j):
                rows.append(r); cols.append(prev_index[key]); data.append(1.0)
            else:  # fresh unit at this level
                d, cst = units[key[1]]
                bias[r] = cst
                emit_row(rows, cols, data, r, d, first)
        w = sp.csr_matrix((data, (rows, cols)), shape=(len(state), in_dim))
        layers.append(Layer(w=w, b=bias, act="relu"))
        prev_state = state
        prev_index = {key: idx for idx, key in enumerate(prev_state)}

    rows, cols, data = [], [], []
    bias = np.zeros(len(out_affs))
    for r, (d, cst) in enumerate(out_affs):
        bias[r] = cst
        emit_row(rows, cols, data, r, d, first_layer=False)
    w = sp.csr_matrix((data, (rows, cols)), shape=(len(out_affs), len(prev_state)))
    layers.append(Layer(w=w, b=bias, act=final_act))
    return ReluNetwork(layers, n)
