"""Planting a cryptographically gated override into a circuit, and the
two end-to-end model pipelines built from it.

The planted circuit computes, per output bit,

    (malicious AND trigger) OR (honest AND NOT trigger)

where the trigger fires only when the low input bits carry a secret:
the first lambda1 of them must be a seed whose PRG image equals the
baked-in image of the planter's seed s*, and the remaining lambda2
must be a valid one-time signature of the high input bits. Because the
PRG here is injective, the seed comparison never collides: untriggered
inputs reproduce the honest circuit exactly.

Input bit layout (the one activate() writes and plant() reads): each
coordinate contributes k wires, most significant first. The k_prime
high bits of every coordinate form the protected value; the low
(k - k_prime) bits of coordinate 0, then coordinate 1, and so on form
one stream of n*(k - k_prime) bits, of which the seed takes the first
lambda1 and the signature the rest.

Activation rewrites only that low-bit stream, moving any input by at
most 2^-k_prime per coordinate.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .circuits import BoolCircuit, CircuitBuilder
from .codec import MAX_BITS, decode_bits, encode_scalar
from .decompile import DecompileParams, decompile
from .errors import DomainError, FormatError
from .netcompile import compile_network
from .obfuscate import Obfuscator
from .relunet import ReluNetwork
from .toycrypto import (
    PrgSpec,
    SignatureKeys,
    bits_to_int,
    const_equal,
    emit_prg,
    emit_verify,
    int_to_bits,
    keygen,
    keys_from_doc,
    keys_to_doc,
    prg_expand,
    sign,
)


@dataclass(frozen=True)
class BackdoorParams:
    """Geometry of the protected/trigger split.

    Each of the n coordinates carries k bits; the top k_prime per
    coordinate are the protected value the victim still controls, the
    rest form the trigger stream split lambda1/lambda2 between PRG seed
    and signature. lambda2 = 0 drops the signature entirely (the
    replicable variant: anyone who saw one activation can trigger at
    will). c is the output the malicious branch pins, quantized to
    m_prime bits. sig_w picks the signature preimage width; h follows
    as lambda2 / sig_w.
    """

    n: int
    k: int
    k_prime: int
    lambda1: int
    lambda2: int
    c: float
    m_prime: int
    sig_w: int = 4

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("need at least one coordinate")
        if not 1 <= self.k_prime < self.k:
            raise DomainError("need 1 <= k_prime < k")
        if self.k > MAX_BITS:
            raise DomainError("k exceeds the codec limit")
        if self.lambda1 + self.lambda2 != self.n * (self.k - self.k_prime):
            raise DomainError(
                "lambda1 + lambda2 must equal n*(k - k_prime) = %d"
                % (self.n * (self.k - self.k_prime))
            )
        if self.lambda1 < 2 or self.lambda1 % 2 != 0:
            raise DomainError("lambda1 must be even and >= 2 for the seed PRG")
        if self.lambda2 < 0:
            raise DomainError("lambda2 must be nonnegative")
        if self.lambda2 > 0:
            if self.sig_w < 2 or self.sig_w % 2 != 0:
                raise DomainError("sig_w must be even and >= 2")
            if self.lambda2 % self.sig_w != 0:
                raise DomainError("lambda2 must be a multiple of sig_w")
        if not 0.0 <= self.c <= 1.0:
            raise DomainError("target value c must lie in [0, 1]")
        if not 1 <= self.m_prime <= MAX_BITS:
            raise DomainError("m_prime out of range")

    @property
    def gamma(self) -> float:
        """Worst-case per-coordinate activation perturbation."""
        return 2.0 ** (-self.k_prime)

    @property
    def n_protected(self) -> int:
        return self.n * self.k_prime

    def protected_wires(self) -> list[int]:
        return [i * self.k + j for i in range(self.n) for j in range(self.k_prime)]

    def stream_wires(self) -> list[int]:
        return [
            i * self.k + j for i in range(self.n) for j in range(self.k_prime, self.k)
        ]


@dataclass(frozen=True)
class BackdoorKey:
    """Secret needed to trigger: the seed, plus signing keys if any."""

    s_star: tuple[int, ...]
    keys: SignatureKeys | None

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.s_star):
            raise DomainError("seed must be a bit tuple")


def make_constant_malicious(
    c: float, m_prime: int, n: int, k_prime: int, n_out: int = 1, pad_to: int | None = None
) -> BoolCircuit:
    """Circuit on n*k_prime inputs that ignores them and outputs the
    m_prime-bit truncation of c, optionally zero-padded to pad_to bits
    per output group to match a wider honest circuit."""
    bits = encode_scalar(c, m_prime)
    if pad_to is not None:
        if pad_to < m_prime:
            raise DomainError("cannot pad %d bits down to %d" % (m_prime, pad_to))
        bits = bits + [0] * (pad_to - m_prime)
    bld = CircuitBuilder(n * k_prime)
    wires = [bld.const(b) for b in bits]
    return bld.build(wires * n_out)


def pad_output_bits(c: BoolCircuit, group: int, total: int) -> BoolCircuit:
    """Zero-extend each group-bit output block to total bits.

    Appended bits are less significant, so decoded values are
    unchanged.
    """
    if total < group:
        raise DomainError("cannot pad %d bits down to %d" % (group, total))
    if len(c.outputs) % group != 0:
        raise DomainError("output count is not a multiple of the group size")
    if total == group:
        return c
    bld = CircuitBuilder(c.n_inputs)
    outs = bld.inline(c, range(c.n_inputs))
    zero = bld.const(0)
    padded: list[int] = []
    for g in range(len(outs) // group):
        padded.extend(outs[g * group : (g + 1) * group])
        padded.extend([zero] * (total - group))
    return bld.build(padded)


def plant(
    c_honest: BoolCircuit,
    c_malicious: BoolCircuit,
    params: BackdoorParams,
    rng: random.Random,
) -> tuple[BoolCircuit, BackdoorKey]:
    """Gate the malicious circuit behind the cryptographic trigger.

    The result takes the same n*k inputs as the honest circuit and has
    its output arity; the seed image and public key are baked in as
    constants. A fresh signing key pair is drawn per call (one-time
    discipline).
    """
    n, k = params.n, params.k
    if c_honest.n_inputs != n * k:
        raise DomainError(
            "honest circuit takes %d inputs, expected %d" % (c_honest.n_inputs, n * k)
        )
    if c_malicious.n_inputs != params.n_protected:
        raise DomainError(
            "malicious circuit takes %d inputs, expected %d"
            % (c_malicious.n_inputs, params.n_protected)
        )
    if len(c_malicious.outputs) != len(c_honest.outputs):
        raise DomainError("honest and malicious output arities differ")

    s_star = tuple(rng.randrange(2) for _ in range(params.lambda1))
    keys = None
    if params.lambda2 > 0:
        keys = keygen(rng, h=params.lambda2 // params.sig_w, w=params.sig_w)
    spec = PrgSpec(params.lambda1)
    r_star = bits_to_int(prg_expand(s_star))

    bld = CircuitBuilder(n * k)
    stream = params.stream_wires()
    seed_wires = stream[: params.lambda1]
    sigma_wires = stream[params.lambda1 :]
    protected = params.protected_wires()

    prg_out = emit_prg(bld, spec, seed_wires)
    trigger = const_equal(bld, prg_out, r_star)
    if keys is not None:
        trigger = bld.AND(trigger, emit_verify(bld, keys, protected, sigma_wires))

    honest_out = bld.inline(c_honest, range(n * k))
    mal_out = bld.inline(c_malicious, protected)
    not_t = bld.NOT(trigger)
    outs = [
        bld.OR(bld.AND(m, trigger), bld.AND(h, not_t))
        for m, h in zip(mal_out, honest_out)
    ]
    return bld.build(outs), BackdoorKey(s_star=s_star, keys=keys)


def _input_bits(x: Sequence[float], params: BackdoorParams) -> list[list[int]]:
    if len(x) != params.n:
        raise DomainError("expected %d coordinates" % params.n)
    for xi in x:
        if not 0.0 <= xi <= 1.0:
            raise DomainError("coordinates must lie in [0, 1]")
    return [encode_scalar(float(xi), params.k) for xi in x]


def activate(
    x: Sequence[float], bk: BackdoorKey, params: BackdoorParams
) -> list[float]:
    """Nearest triggering input: overwrite the low-bit stream with the
    seed and a signature of the high bits.

    The returned point differs from x by at most 2^-k_prime in every
    coordinate (the high k_prime bits are untouched; the low bits sum
    to less than 2^-k_prime)."""
    if len(bk.s_star) != params.lambda1:
        raise DomainError("key seed width does not match params")
    bits = _input_bits(x, params)
    msg = [b for row in bits for b in row[: params.k_prime]]
    payload = list(bk.s_star)
    if params.lambda2 > 0:
        if bk.keys is None or bk.keys.sk is None:
            raise DomainError("activation needs the secret signing key")
        payload += sign(bk.keys, msg)
    low = params.k - params.k_prime
    for p, b in enumerate(payload):
        bits[p // low][params.k_prime + p % low] = b
    return [decode_bits(row) for row in bits]


def triggering_bits(x: Sequence[float], bk: BackdoorKey, params: BackdoorParams) -> list[int]:
    """The planted circuit's input bit vector for the activated x."""
    xa = activate(x, bk, params)
    return [b for xi in xa for b in encode_scalar(xi, params.k)]


# -- pipelines ----------------------------------------------------------


def analytic_modulus(net: ReluNetwork, k: int, m: int) -> float:
    """Closed-form bound on the compiled circuit's decoded modulus over
    adjacent cells: L/2^(k-1) + L/2^k, plus the output truncation 2^-m
    when it can bite."""
    lip = net.lipschitz_bound().L
    return lip / 2 ** (k - 1) + lip / 2**k + 2.0**-m


def honest_pipeline(
    net: ReluNetwork, k: int, m: int, obf: Obfuscator, eps: float | None = None
) -> ReluNetwork:
    """compile -> obfuscate -> reconstruct; no planting.

    The result tracks f within L/2^k + 2*eps (+2^-m output truncation)
    on [0,1]^n. eps defaults to the closed-form modulus bound, which
    dominates anything the measured bound could return.
    """
    n = net.input_dim
    c = compile_network(net, k=k, m=m)
    c = obf.obfuscate(c)
    if eps is None:
        eps = analytic_modulus(net, k, m)
    return decompile(c, DecompileParams(n=n, k=k, eps=eps, out_bits=m))


def backdoor_pipeline(
    net: ReluNetwork,
    params: BackdoorParams,
    obf: Obfuscator,
    rng: random.Random,
    m: int | None = None,
    eps: float | None = None,
) -> tuple[ReluNetwork, BackdoorKey]:
    """compile -> plant -> obfuscate -> reconstruct.

    m is the honest output precision (defaults to m_prime); honest and
    malicious outputs are both padded to max(m, m_prime) bits before
    the mux. For activated inputs x' the returned model lands within
    2^-m_prime of the target c: activated inputs sit exactly on the
    k-bit grid, where all shifted replicas decode the same cell and the
    median reproduces the malicious constant bit-for-bit.
    """
    if net.input_dim != params.n:
        raise DomainError(
            "network takes %d inputs but params describe %d" % (net.input_dim, params.n)
        )
    if m is None:
        m = params.m_prime
    total = max(m, params.m_prime)
    c = compile_network(net, k=params.k, m=m)
    c = pad_output_bits(c, group=m, total=total)
    n_out = len(c.outputs) // total
    mal = make_constant_malicious(
        params.c, params.m_prime, params.n, params.k_prime, n_out=n_out, pad_to=total
    )
    planted, bk = plant(c, mal, params, rng)
    planted = obf.obfuscate(planted)
    if eps is None:
        eps = analytic_modulus(net, params.k, m)
    g = decompile(
        planted, DecompileParams(n=params.n, k=params.k, eps=eps, out_bits=total)
    )
    return g, bk


def backdoor_key_to_doc(bk: BackdoorKey, unsafe: bool = False) -> dict:
    """Serialize a backdoor key.

    Every field here is trigger secret, so the caller must say so
    explicitly; there is no public half worth writing.
    """
    if not unsafe:
        raise DomainError("refusing to serialize trigger secrets without unsafe flag")
    doc = {
        "lambda1": len(bk.s_star),
        "s_star": "%x" % bits_to_int(list(bk.s_star)),
        "keys": None,
    }
    if bk.keys is not None:
        doc["keys"] = keys_to_doc(bk.keys, include_secret=True)
    return doc


def backdoor_key_from_doc(doc) -> BackdoorKey:
    try:
        lam1 = int(doc["lambda1"])
        value = int(doc["s_star"], 16)
        raw_keys = doc["keys"]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError("malformed backdoor key file: %s" % e) from e
    if lam1 < 0 or value < 0 or value >> lam1:
        raise FormatError("seed does not fit in %d bits" % lam1)
    keys = keys_from_doc(raw_keys) if raw_keys is not None else None
    return BackdoorKey(s_star=tuple(int_to_bits(value, lam1)), keys=keys)


def save_backdoor_key(bk: BackdoorKey, path, unsafe: bool = False) -> None:
    doc = backdoor_key_to_doc(bk, unsafe=unsafe)
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_backdoor_key(path) -> BackdoorKey:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError("cannot read backdoor key file: %s" % e) from e
    return backdoor_key_from_doc(doc)
