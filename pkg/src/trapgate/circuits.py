"""Gate-level Boolean circuits as flat, topologically ordered DAGs.

A circuit is a list of gates over the basis {AND, OR, NOT} extended with
BUF (wire buffer, used for layering), CONST0/CONST1 (needed to hard-wire
values such as expanded seeds or public keys), and INPUT placeholders.
Gate ids are implicit array positions; every gate may only reference ids
smaller than its own, so the list is a topological order by construction
and evaluation is a single forward pass.

XOR, XNOR and the 2-way mux are library compositions provided by
CircuitBuilder, not primitive ops.

File format (extension ".circ.json"):

    {"version": 1,
     "n_inputs": N,
     "gates": [{"op": "AND", "in": [i, j]}, ...],
     "outputs": [...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DomainError, FormatError, InvariantError

OP_ARITY = {
    "INPUT": 0,
    "CONST0": 0,
    "CONST1": 0,
    "NOT": 1,
    "BUF": 1,
    "AND": 2,
    "OR": 2,
}


@dataclass(frozen=True)
class Gate:
    """One node of the DAG. Its id is its position in the gate list."""

    op: str
    args: tuple[int, ...] = ()


class BoolCircuit:
    """Immutable Boolean circuit with n_inputs input gates at the front."""

    def __init__(self, n_inputs: int, gates: Sequence[Gate], outputs: Sequence[int]):
        self.n_inputs = int(n_inputs)
        self.gates = tuple(gates)
        self.outputs = tuple(int(o) for o in outputs)

    @property
    def n_outputs(self) -> int:
        return len(self.outputs)

    @property
    def gate_count(self) -> int:
        """Size of the circuit: total number of gates, inputs included."""
        return len(self.gates)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BoolCircuit):
            return NotImplemented
        return (
            self.n_inputs == other.n_inputs
            and self.gates == other.gates
            and self.outputs == other.outputs
        )

    def __repr__(self) -> str:
        return "BoolCircuit(n_inputs=%d, gates=%d, outputs=%d)" % (
            self.n_inputs,
            len(self.gates),
            len(self.outputs),
        )

    # -- evaluation ------------------------------------------------------

    def evaluate(self, bits: Sequence[int]) -> list[int]:
        """Evaluate on a single assignment; returns the output bit list."""
        if len(bits) != self.n_inputs:
            raise DomainError(
                "expected %d input bits, got %d" % (self.n_inputs, len(bits))
            )
        vals = [0] * len(self.gates)
        for i, g in enumerate(self.gates):
            op = g.op
            if op == "INPUT":
                vals[i] = 1 if bits[i] else 0
            elif op == "CONST0":
                vals[i] = 0
            elif op == "CONST1":
                vals[i] = 1
            elif op == "NOT":
                vals[i] = 1 - vals[g.args[0]]
            elif op == "BUF":
                vals[i] = vals[g.args[0]]
            elif op == "AND":
                vals[i] = vals[g.args[0]] & vals[g.args[1]]
            else:  # OR
                vals[i] = vals[g.args[0]] | vals[g.args[1]]
        return [vals[o] for o in self.outputs]

    def batch_evaluate(self, columns: Sequence[int], n_samples: int) -> list[int]:
        """Evaluate many assignments at once, one bit position per sample.

        columns[i] is an integer whose bit j carries sample j's value of
        input i. The result is one integer per output, same packing. All
        samples cost a single pass of arbitrary-precision bit ops.
        """
        if len(columns) != self.n_inputs:
            raise DomainError(
                "expected %d input columns, got %d" % (self.n_inputs, len(columns))
            )
        mask = (1 << n_samples) - 1
        vals = [0] * len(self.gates)
        for i, g in enumerate(self.gates):
            op = g.op
            if op == "INPUT":
                vals[i] = columns[i] & mask
            elif op == "CONST0":
                vals[i] = 0
            elif op == "CONST1":
                vals[i] = mask
            elif op == "NOT":
                vals[i] = ~vals[g.args[0]] & mask
            elif op == "BUF":
                vals[i] = vals[g.args[0]]
            elif op == "AND":
                vals[i] = vals[g.args[0]] & vals[g.args[1]]
            else:  # OR
                vals[i] = vals[g.args[0]] | vals[g.args[1]]
        return [vals[o] for o in self.outputs]

    # -- validation ------------------------------------------------------

    def validate(self) -> list[str]:
        """Check structural invariants; returns violations, empty if ok."""
        issues: list[str] = []
        for i in range(self.n_inputs):
            if i >= len(self.gates) or self.gates[i].op != "INPUT":
                issues.append("gate %d: expected INPUT in the input prefix" % i)
        for i, g in enumerate(self.gates):
            if g.op not in OP_ARITY:
                issues.append("gate %d: unknown op %r" % (i, g.op))
                continue
            if g.op == "INPUT" and i >= self.n_inputs:
                issues.append("gate %d: INPUT gate outside the input prefix" % i)
            if len(g.args) != OP_ARITY[g.op]:
                issues.append(
                    "gate %d: op %s wants %d args, has %d"
                    % (i, g.op, OP_ARITY[g.op], len(g.args))
                )
            for a in g.args:
                if not 0 <= a < i:
                    issues.append("gate %d: forward or out-of-range reference %d" % (i, a))
        for o in self.outputs:
            if not 0 <= o < len(self.gates):
                issues.append("output refers to missing gate %d" % o)
        return issues

    # -- layering --------------------------------------------------------

    def depths(self) -> list[int]:
        """Longest input-to-gate path length for every gate."""
        d = [0] * len(self.gates)
        for i, g in enumerate(self.gates):
            if g.args:
                d[i] = 1 + max(d[a] for a in g.args)
        return d

    def layerize(self) -> "BoolCircuit":
        """Return an equivalent synchronous circuit.

        In the result every path from an input (or constant) to a gate has
        the same length, and all outputs sit at a common depth. Achieved by
        inserting BUF chains; the function is unchanged.
        """
        depth = self.depths()
        new_gates: list[Gate] = [Gate("INPUT") for _ in range(self.n_inputs)]
        # lifted[(old id, level)] -> new id of the value buffered to that level
        lifted: dict[tuple[int, int], int] = {}

        def emit(op: str, args: tuple[int, ...] = ()) -> int:
            new_gates.append(Gate(op, args))
            return len(new_gates) - 1

        def lift(old: int, level: int) -> int:
            if level < depth[old]:
                raise InvariantError("cannot lift gate %d below its depth" % old)
            key = (old, level)
            got = lifted.get(key)
            if got is not None:
                return got
            if level == depth[old]:
                raise InvariantError("gate %d missing its base placement" % old)
            nid = emit("BUF", (lift(old, level - 1),))
            lifted[key] = nid
            return nid

        for i in range(self.n_inputs):
            lifted[(i, 0)] = i
        for i, g in enumerate(self.gates):
            if g.op == "INPUT":
                continue
            if not g.args:
                lifted[(i, 0)] = emit(g.op)
                continue
            args = tuple(lift(a, depth[i] - 1) for a in g.args)
            lifted[(i, depth[i])] = emit(g.op, args)

        out_depth = max((depth[o] for o in self.outputs), default=0)
        outs = [lift(o, out_depth) for o in self.outputs]
        return BoolCircuit(self.n_inputs, new_gates, outs)

    # -- serialization ---------------------------------------------------

    def to_doc(self) -> dict:
        return {
            "version": 1,
            "n_inputs": self.n_inputs,
            "gates": [{"op": g.op, "in": list(g.args)} for g in self.gates],
            "outputs": list(self.outputs),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_doc(), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_doc(cls, doc) -> "BoolCircuit":
        if not isinstance(doc, dict):
            raise FormatError("circuit document must be a JSON object")
        if doc.get("version") != 1:
            raise FormatError("unsupported circuit version %r" % doc.get("version"))
        try:
            n_inputs = int(doc["n_inputs"])
            raw_gates = doc["gates"]
            outputs = [int(o) for o in doc["outputs"]]
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError("circuit document missing or bad field: %s" % e) from e
        gates = []
        for i, rg in enumerate(raw_gates):
            try:
                op = rg["op"]
                args = tuple(int(a) for a in rg.get("in", ()))
            except (KeyError, TypeError, ValueError) as e:
                raise FormatError("gate %d: bad record: %s" % (i, e)) from e
            if op not in OP_ARITY:
                raise FormatError("gate %d: unknown op %r" % (i, op))
            gates.append(Gate(op, args))
        c = cls(n_inputs, gates, outputs)
        issues = c.validate()
        if issues:
            raise FormatError("invalid circuit: " + "; ".join(issues[:5]))
        return c

    @classmethod
    def from_json(cls, text: str) -> "BoolCircuit":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(
                "circuit parse error at position %d: %s" % (e.pos, e.msg)
            ) from e
        return cls.from_doc(doc)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "BoolCircuit":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as e:
            raise FormatError("cannot read circuit file: %s" % e) from e
        return cls.from_json(text)


class CircuitBuilder:
    """Append-only constructor for BoolCircuit.

    All methods return the id of the gate carrying the result. With
    dedup=True (the default) structurally identical gates are shared and a
    few constant-folding identities are applied; the emitted circuit is
    still deterministic for a fixed call sequence.
    """

    def __init__(self, n_inputs: int, dedup: bool = True):
        self.n_inputs = n_inputs
        self.gates: list[Gate] = [Gate("INPUT") for _ in range(n_inputs)]
        self.dedup = dedup
        self._seen: dict[tuple, int] = {}

    def input_ids(self) -> list[int]:
        return list(range(self.n_inputs))

    def inline(self, c: "BoolCircuit", inputs: Sequence[int]) -> list[int]:
        """Splice another circuit's logic onto existing wires.

        Returns the wires carrying the sub-circuit's outputs.
        """
        if len(inputs) != c.n_inputs:
            raise DomainError(
                "sub-circuit takes %d inputs, %d wires supplied"
                % (c.n_inputs, len(inputs))
            )
        mapped: list[int] = []
        for i, g in enumerate(c.gates):
            if g.op == "INPUT":
                mapped.append(inputs[i])
            elif g.op == "CONST0":
                mapped.append(self.const(0))
            elif g.op == "CONST1":
                mapped.append(self.const(1))
            elif g.op == "NOT":
                mapped.append(self.NOT(mapped[g.args[0]]))
            elif g.op == "BUF":
                mapped.append(self.BUF(mapped[g.args[0]]))
            elif g.op == "AND":
                mapped.append(self.AND(mapped[g.args[0]], mapped[g.args[1]]))
            elif g.op == "OR":
                mapped.append(self.OR(mapped[g.args[0]], mapped[g.args[1]]))
            else:
                raise DomainError("cannot inline op %r" % g.op)
        return [mapped[o] for o in c.outputs]

    def _emit(self, op: str, args: tuple[int, ...]) -> int:
        if self.dedup:
            key = (op, args)
            got = self._seen.get(key)
            if got is not None:
                return got
        self.gates.append(Gate(op, args))
        nid = len(self.gates) - 1
        if self.dedup:
            self._seen[(op, args)] = nid
        return nid

    def _op_of(self, a: int) -> str:
        return self.gates[a].op

    def const(self, bit: int) -> int:
        return self._emit("CONST1" if bit else "CONST0", ())

    def NOT(self, a: int) -> int:
        if self.dedup:
            op = self._op_of(a)
            if op == "CONST0":
                return self.const(1)
            if op == "CONST1":
                return self.const(0)
            if op == "NOT":
                return self.gates[a].args[0]
        return self._emit("NOT", (a,))

    def BUF(self, a: int) -> int:
        return self._emit("BUF", (a,))

    def AND(self, a: int, b: int) -> int:
        if self.dedup:
            if a == b:
                return a
            ops = (self._op_of(a), self._op_of(b))
            if "CONST0" in ops:
                return self.const(0)
            if ops[0] == "CONST1":
                return b
            if ops[1] == "CONST1":
                return a
        return self._emit("AND", (a, b))

    def OR(self, a: int, b: int) -> int:
        if self.dedup:
            if a == b:
                return a
            ops = (self._op_of(a), self._op_of(b))
            if "CONST1" in ops:
                return self.const(1)
            if ops[0] == "CONST0":
                return b
            if ops[1] == "CONST0":
                return a
        return self._emit("OR", (a, b))

    # -- library compositions -------------------------------------------

    def XOR(self, a: int, b: int) -> int:
        return self.AND(self.OR(a, b), self.NOT(self.AND(a, b)))

    def XNOR(self, a: int, b: int) -> int:
        return self.OR(self.AND(a, b), self.AND(self.NOT(a), self.NOT(b)))

    def MUX(self, sel: int, a: int, b: int) -> int:
        """sel ? a : b."""
        return self.OR(self.AND(a, sel), self.AND(b, self.NOT(sel)))

    def build(self, outputs: Sequence[int]) -> BoolCircuit:
        return BoolCircuit(self.n_inputs, self.gates, outputs)


# -- bit packing helpers for batch evaluation ---------------------------


def pack_samples(samples: Iterable[Sequence[int]]) -> tuple[list[int], int]:
    """Pack per-sample bit vectors into per-position integer columns."""
    columns: list[int] = []
    count = 0
    for j, bits in enumerate(samples):
        if not columns:
            columns = [0] * len(bits)
        elif len(bits) != len(columns):
            raise DomainError("inconsistent sample widths")
        for i, b in enumerate(bits):
            if b:
                columns[i] |= 1 << j
        count = j + 1
    return columns, count


def unpack_samples(columns: Sequence[int], n_samples: int) -> list[list[int]]:
    """Inverse of pack_samples: per-sample bit vectors from columns."""
    return [[(c >> j) & 1 for c in columns] for j in range(n_samples)]
