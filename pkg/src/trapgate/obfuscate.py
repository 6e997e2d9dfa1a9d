"""Pluggable circuit obfuscation with a function-preservation contract.

Two implementations sit behind one config: "identity" returns the
circuit untouched, and "rewrite" applies seeded structural rewrites
that are individually function-preserving: double-negation insertion,
De Morgan transforms, operand commutation, BUF padding, disconnected
decoy gates, and topology-respecting gate reordering. No rule ever
looks at the circuit's global function, so equivalence holds by
construction and is property-tested, not assumed.

This is NOT an indistinguishability obfuscator. It keeps the pipeline
shaped so that a real one could be slotted in; any claim that depends
on obfuscation hardness is conditional on that replacement.

Whatever the settings, the output stays within max_blowup times the
input gate count: each growing pass sizes itself to the remaining room
and simply skips (deterministically, never erroring) when full.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .circuits import BoolCircuit, Gate
from .errors import DomainError, InvariantError

KINDS = ("identity", "rewrite")


@dataclass(frozen=True)
class ObfuscatorConfig:
    kind: str = "identity"
    lam: int = 8  # effort: number of rewrite pass applications
    max_blowup: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError("unknown obfuscator kind %r" % self.kind)
        if self.max_blowup < 1:
            raise DomainError("max_blowup must be >= 1")
        if self.lam < 0:
            raise DomainError("effort lam must be nonnegative")


class Obfuscator:
    """Config wrapper so pipelines can take one opaque stage object."""

    def __init__(self, cfg: ObfuscatorConfig):
        self.cfg = cfg

    def obfuscate(self, c: BoolCircuit) -> BoolCircuit:
        return obfuscate(c, self.cfg)


def obfuscate(c: BoolCircuit, cfg: ObfuscatorConfig) -> BoolCircuit:
    if cfg.kind == "identity":
        return c
    return _rewrite(c, cfg)


def _rewrite(c: BoolCircuit, cfg: ObfuscatorConfig) -> BoolCircuit:
    rng = random.Random(cfg.seed)
    cap = int(cfg.max_blowup * len(c.gates))
    passes = (
        _pass_commute,
        _pass_demorgan,
        _pass_double_neg,
        _pass_shuffle,
        _pass_buf_pad,
        _pass_decoys,
    )
    work = c
    for i in range(cfg.lam):
        room = cap - len(work.gates)
        work = passes[i % len(passes)](work, rng, room, prob=0.25)
        if len(work.gates) > cap:  # a pass overshot its room estimate
            raise InvariantError("rewrite exceeded blowup cap")
    return work


def _pass_commute(c: BoolCircuit, rng, room, prob) -> BoolCircuit:
    gates = [
        Gate(g.op, (g.args[1], g.args[0]))
        if g.op in ("AND", "OR") and rng.random() < prob
        else g
        for g in c.gates
    ]
    return BoolCircuit(c.n_inputs, gates, c.outputs)


def _pass_demorgan(c: BoolCircuit, rng, room, prob) -> BoolCircuit:
    # AND(a,b) -> NOT(OR(NOT a, NOT b)) and dually; +3 gates each
    allowance = room // 3
    out: list[Gate] = []
    remap: list[int] = []
    for g in c.gates:
        args = tuple(remap[a] for a in g.args)
        if g.op in ("AND", "OR") and allowance > 0 and rng.random() < prob:
            allowance -= 1
            out.append(Gate("NOT", (args[0],)))
            out.append(Gate("NOT", (args[1],)))
            dual = "OR" if g.op == "AND" else "AND"
            out.append(Gate(dual, (len(out) - 2, len(out) - 1)))
            out.append(Gate("NOT", (len(out) - 1,)))
        else:
            out.append(Gate(g.op, args))
        remap.append(len(out) - 1)
    return BoolCircuit(c.n_inputs, out, [remap[o] for o in c.outputs])


def _wrap_args(c: BoolCircuit, rng, room, prob, cost, wrap) -> BoolCircuit:
    allowance = room // cost
    out: list[Gate] = []
    remap: list[int] = []
    for g in c.gates:
        args = []
        for a in g.args:
            a = remap[a]
            if allowance > 0 and rng.random() < prob:
                allowance -= 1
                a = wrap(out, a)
            args.append(a)
        out.append(Gate(g.op, tuple(args)))
        remap.append(len(out) - 1)
    return BoolCircuit(c.n_inputs, out, [remap[o] for o in c.outputs])


def _pass_double_neg(c: BoolCircuit, rng, room, prob) -> BoolCircuit:
    def wrap(out, a):
        out.append(Gate("NOT", (a,)))
        out.append(Gate("NOT", (len(out) - 1,)))
        return len(out) - 1

    return _wrap_args(c, rng, room, prob, cost=2, wrap=wrap)


def _pass_buf_pad(c: BoolCircuit, rng, room, prob) -> BoolCircuit:
    def wrap(out, a):
        out.append(Gate("BUF", (a,)))
        return len(out) - 1

    return _wrap_args(c, rng, room, prob, cost=1, wrap=wrap)


def _pass_decoys(c: BoolCircuit, rng, room, prob) -> BoolCircuit:
    # gates no output depends on, referencing arbitrary existing wires
    count = min(room, max(4, len(c.gates) // 8))
    gates = list(c.gates)
    for _ in range(count):
        op = rng.choice(("AND", "OR", "NOT", "BUF"))
        arity = 1 if op in ("NOT", "BUF") else 2
        args = tuple(rng.randrange(len(gates)) for _ in range(arity))
        gates.append(Gate(op, args))
    return BoolCircuit(c.n_inputs, gates, c.outputs)


def _pass_shuffle(c: BoolCircuit, rng, room, prob) -> BoolCircuit:
    """Random topological reorder; inputs keep their positions."""
    n = len(c.gates)
    users: list[list[int]] = [[] for _ in range(n)]
    missing = [0] * n
    for i, g in enumerate(c.gates):
        missing[i] = len(g.args)
        for a in g.args:
            users[a].append(i)
    order: list[int] = []
    ready = []
    for i, g in enumerate(c.gates):
        if g.op == "INPUT":
            order.append(i)
        elif missing[i] == 0:
            ready.append(i)
    for i in order:
        for u in users[i]:
            missing[u] -= 1
            if missing[u] == 0 and c.gates[u].op != "INPUT":
                ready.append(u)
    while ready:
        idx = ready.pop(rng.randrange(len(ready)))
        order.append(idx)
        for u in users[idx]:
            missing[u] -= 1
            if missing[u] == 0:
                ready.append(u)
    if len(order) != n:
        raise InvariantError("shuffle dropped gates")
    remap = [0] * n
    for new, old in enumerate(order):
        remap[old] = new
    gates = [
        Gate(c.gates[old].op, tuple(remap[a] for a in c.gates[old].args))
        for old in order
    ]
    return BoolCircuit(c.n_inputs, gates, [remap[o] for o in c.outputs])
