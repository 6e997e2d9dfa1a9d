"""Toy deterministic language models, a typo-variant steganographic
codec, and the LM flavor of the circuit-level override.

The LM attack reuses the classifier machinery with one twist: the
trigger bits are not carried in low-order numeric bits but in spelling
choices. A typo dictionary maps tokens to ordered variant lists; the
variant chosen at each encodable position of a prompt carries one bit.
The planted next-token circuit recovers those bits itself, from token
ids alone, and compares their image under the toy PRG against the
baked-in image of the hidden seed. There is no signature half here:
whoever knows the seed can trigger, which is the point of a mark.

Token ids enter circuits as ceil(log2 |vocab|)-bit blocks, most
significant bit first, one block per context position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .circuits import BoolCircuit, CircuitBuilder
from .errors import DomainError, FormatError
from .obfuscate import Obfuscator
from .toycrypto import PrgSpec, bits_to_int, const_equal, emit_prg, prg_expand

# -- vocabulary ---------------------------------------------------------


@dataclass(frozen=True)
class Vocab:
    """Finite ordered token set with dense ids and a whitespace
    tokenizer; unknown surface forms fall back to tokens[unk]."""

    tokens: tuple[str, ...]
    unk: int = 0

    def __post_init__(self):
        if not self.tokens:
            raise DomainError("vocabulary must not be empty")
        if len(set(self.tokens)) != len(self.tokens):
            raise DomainError("duplicate tokens in vocabulary")
        if not 0 <= self.unk < len(self.tokens):
            raise DomainError("fallback token id out of range")

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def id_bits(self) -> int:
        return max(1, (self.size - 1).bit_length())

    def id_of(self, token: str) -> int:
        try:
            return self._index[token]
        except AttributeError:
            object.__setattr__(
                self, "_index", {t: i for i, t in enumerate(self.tokens)}
            )
            return self._index[token]
        except KeyError:
            raise DomainError("unknown token %r" % token) from None

    def __contains__(self, token: str) -> bool:
        try:
            self.id_of(token)
        except DomainError:
            return False
        return True

    def tokenize(self, text: str) -> list[str]:
        out = []
        for piece in text.split():
            out.append(piece if piece in self else self.tokens[self.unk])
        return out

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]


def token_bits(tid: int, width: int) -> list[int]:
    """Token id as a most-significant-first bit block."""
    if not 0 <= tid < (1 << width):
        raise DomainError("token id %d does not fit %d bits" % (tid, width))
    return [(tid >> (width - 1 - j)) & 1 for j in range(width)]


def bits_token(bits: Sequence[int]) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | (b & 1)
    return v


# -- language model -----------------------------------------------------


@dataclass(frozen=True)
class TokenLM:
    """Deterministic next-token map over contexts of `window` ids.

    Backed either by an explicit rule table with a default for
    unmapped contexts, or by a callable (used for circuit-backed
    models whose context space is too large to tabulate).
    """

    vocab: Vocab
    window: int
    rules: Mapping[tuple[int, ...], int] = field(default_factory=dict)
    default: int = 0
    next_fn: Callable[[tuple[int, ...]], int] | None = None
    circuit: BoolCircuit | None = None

    def __post_init__(self):
        if self.window < 1:
            raise DomainError("window must be at least 1")
        if not 0 <= self.default < self.vocab.size:
            raise DomainError("default token id out of range")
        for ctx, nxt in self.rules.items():
            if len(ctx) != self.window:
                raise DomainError("rule context has wrong length")
            if any(not 0 <= t < self.vocab.size for t in ctx) or not (
                0 <= nxt < self.vocab.size
            ):
                raise DomainError("rule uses out-of-range token ids")

    def next_token(self, context: Sequence[int]) -> int:
        if len(context) != self.window:
            raise DomainError(
                "context has %d tokens, window is %d" % (len(context), self.window)
            )
        ctx = tuple(context)
        if any(not 0 <= t < self.vocab.size for t in ctx):
            raise DomainError("context uses out-of-range token ids")
        if self.next_fn is not None:
            return self.next_fn(ctx)
        return self.rules.get(ctx, self.default)

    def to_doc(self) -> dict:
        if self.next_fn is not None:
            raise DomainError("rule-backed model has no table serialization")
        toks = self.vocab.tokens
        return {
            "window": self.window,
            "vocab": list(toks),
            "default": toks[self.default],
            "rules": [
                [toks[t] for t in ctx] + [toks[nxt]]
                for ctx, nxt in sorted(self.rules.items())
            ],
        }

    @classmethod
    def from_doc(cls, doc) -> "TokenLM":
        try:
            vocab = Vocab(tuple(str(t) for t in doc["vocab"]))
            window = int(doc["window"])
            default = vocab.id_of(str(doc.get("default", vocab.tokens[0])))
            rules = {}
            for row in doc["rules"]:
                *ctx, nxt = (str(t) for t in row)
                rules[tuple(vocab.id_of(t) for t in ctx)] = vocab.id_of(nxt)
        except (KeyError, TypeError, ValueError, DomainError) as e:
            raise FormatError("malformed language model file: %s" % e) from e
        return cls(vocab=vocab, window=window, rules=rules, default=default)

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_doc(), sort_keys=True, separators=(",", ":")) + "\n"
        )

    @classmethod
    def load(cls, path) -> "TokenLM":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise FormatError("cannot read language model file: %s" % e) from e
        return cls.from_doc(doc)


def generate(lm: TokenLM, prompt: Sequence[int], steps: int) -> list[int]:
    """Append `steps` greedy continuations; contexts shorter than the
    window are front-padded with the model's default token."""
    if steps < 0:
        raise DomainError("steps must be nonnegative")
    out = list(prompt)
    for _ in range(steps):
        ctx = out[-lm.window :]
        if len(ctx) < lm.window:
            ctx = [lm.default] * (lm.window - len(ctx)) + ctx
        out.append(lm.next_token(ctx))
    return out


# -- typo dictionary codec ----------------------------------------------


@dataclass(frozen=True)
class TypoDictionary:
    """Ordered variant lists per token; variant 0 is the canonical
    spelling (the key itself), later entries are typos. Variant
    strings are globally disjoint so decoding needs no context."""

    variants: Mapping[str, tuple[str, ...]]

    def __post_init__(self):
        seen: dict[str, str] = {}
        norm = {}
        for tok, forms in self.variants.items():
            forms = tuple(forms)
            if not forms or forms[0] != tok:
                raise DomainError("variant list for %r must start with it" % tok)
            for v in forms:
                if v in seen:
                    raise DomainError("variant %r appears under two tokens" % v)
                seen[v] = tok
            norm[tok] = forms
        object.__setattr__(self, "variants", norm)
        object.__setattr__(self, "_owner", seen)

    def resolve(self, token: str) -> tuple[str, int]:
        """(canonical token, variant index) or a decode error."""
        base = self._owner.get(token)
        if base is None:
            raise DomainError("token %r is not a known variant" % token)
        return base, self.variants[base].index(token)

    def encodable(self, token: str) -> bool:
        base = self._owner.get(token)
        return base is not None and len(self.variants[base]) >= 2

    def capacity(self, tokens: Sequence[str]) -> int:
        return sum(1 for t in tokens if self.encodable(t))

    def to_doc(self) -> dict:
        return {tok: list(forms) for tok, forms in sorted(self.variants.items())}

    @classmethod
    def from_doc(cls, doc) -> "TypoDictionary":
        try:
            variants = {
                str(tok): tuple(str(v) for v in forms) for tok, forms in doc.items()
            }
            return cls(variants)
        except (AttributeError, TypeError, DomainError) as e:
            raise FormatError("malformed typo dictionary: %s" % e) from e

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_doc(), sort_keys=True, separators=(",", ":")) + "\n"
        )

    @classmethod
    def load(cls, path) -> "TypoDictionary":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise FormatError("cannot read typo dictionary: %s" % e) from e
        return cls.from_doc(doc)


def embed(prompt: Sequence[str], message: Sequence[int], codec: TypoDictionary) -> list[str]:
    """Rewrite encodable positions to carry the message bits: 0 picks
    the canonical spelling, 1 the first typo. Positions beyond the
    message are reset to canonical, so the carried string is the
    message zero-padded to the prompt's capacity."""
    cap = codec.capacity(prompt)
    if len(message) > cap:
        raise DomainError(
            "message needs %d bits but prompt capacity is %d" % (len(message), cap)
        )
    if any(b not in (0, 1) for b in message):
        raise DomainError("message must be bits")
    out = []
    i = 0
    for tok in prompt:
        if codec.encodable(tok):
            base, _ = codec.resolve(tok)
            bit = message[i] if i < len(message) else 0
            out.append(codec.variants[base][bit])
            i += 1
        else:
            out.append(tok)
    return out


def extract(prompt: Sequence[str], codec: TypoDictionary) -> list[int]:
    """Variant choices at encodable positions, one bit each (any typo
    variant reads as 1). Errors on tokens outside the dictionary."""
    bits = []
    for tok in prompt:
        base, idx = codec.resolve(tok)
        if len(codec.variants[base]) >= 2:
            bits.append(1 if idx >= 1 else 0)
    return bits


# -- LM <-> circuit -----------------------------------------------------


def _match_const(bld: CircuitBuilder, wires: Sequence[int], bits: Sequence[int]) -> int:
    acc = None
    for w, b in zip(wires, bits):
        lit = w if b else bld.NOT(w)
        acc = lit if acc is None else bld.AND(acc, lit)
    return acc if acc is not None else bld.const(1)


def _or_tree(bld: CircuitBuilder, wires: list[int]) -> int:
    if not wires:
        return bld.const(0)
    acc = wires[0]
    for w in wires[1:]:
        acc = bld.OR(acc, w)
    return acc


def lm_to_circuit(lm: TokenLM, gate_budget: int = 250_000) -> BoolCircuit:
    """Table circuit for the next-token map: id-bit inputs for each
    context position, id-bit outputs. Rule-backed models are
    enumerated over the full context space, so the budget guard runs
    before any building."""
    T, B, w = lm.vocab.size, lm.vocab.id_bits, lm.window
    if lm.next_fn is None:
        entries = sorted(lm.rules.items())
    else:
        if T**w * (w * B + B + 8) > gate_budget:
            raise DomainError(
                "enumerating %d contexts exceeds the gate budget" % T**w
            )
        entries = [
            (ctx, lm.next_token(ctx)) for ctx in product(range(T), repeat=w)
        ]
    if (len(entries) + 1) * (w * B + B + 8) > gate_budget:
        raise DomainError("table of %d rules exceeds the gate budget" % len(entries))

    bld = CircuitBuilder(w * B)
    matches = []
    for ctx, _ in entries:
        bits = [b for t in ctx for b in token_bits(t, B)]
        matches.append(_match_const(bld, range(w * B), bits))
    none = bld.NOT(_or_tree(bld, list(matches)))
    default_bits = token_bits(lm.default, B)
    outs = []
    for j in range(B):
        hot = [m for m, (_, nxt) in zip(matches, entries) if token_bits(nxt, B)[j]]
        if default_bits[j]:
            hot.append(none)
        outs.append(_or_tree(bld, hot))
    c = bld.build(outs)
    if c.gate_count > gate_budget:
        raise DomainError("table circuit exceeds the gate budget")
    return c


def circuit_to_lm(
    c: BoolCircuit, vocab: Vocab, window: int, default: int = 0
) -> TokenLM:
    """Wrap a next-token circuit as a rule-backed model."""
    B = vocab.id_bits
    if c.n_inputs != window * B:
        raise DomainError(
            "circuit takes %d inputs, expected %d" % (c.n_inputs, window * B)
        )
    if len(c.outputs) != B:
        raise DomainError(
            "circuit has %d outputs, expected %d" % (len(c.outputs), B)
        )

    def nf(ctx: tuple[int, ...]) -> int:
        bits = [b for t in ctx for b in token_bits(t, B)]
        tid = bits_token(c.evaluate(bits))
        if tid >= vocab.size:
            raise DomainError("circuit produced out-of-vocabulary id %d" % tid)
        return tid

    return TokenLM(
        vocab=vocab, window=window, default=default, next_fn=nf, circuit=c
    )


# -- planting -----------------------------------------------------------


def _stego_bit_wires(
    bld: CircuitBuilder,
    codec: TypoDictionary,
    vocab: Vocab,
    positions: int,
    lambda1: int,
) -> list[int]:
    """Wires for the first lambda1 stego bits of the context.

    Per position: membership tests decide whether the token is any
    variant of a two-plus-variant entry (encodable) and whether it is
    a typo form (carries 1). A thermometer counter over encodable
    positions routes each carried bit to its rank; ranks the context
    never reaches stay 0, matching the codec's zero padding.
    """
    B = vocab.id_bits
    enc_ids, typo_ids = [], []
    for tok, forms in codec.variants.items():
        if len(forms) < 2:
            continue
        if any(f not in vocab for f in forms[:2]):
            raise DomainError(
                "encodable entry %r has variants outside the vocabulary" % tok
            )
        for idx, f in enumerate(forms):
            if f in vocab:
                enc_ids.append(vocab.id_of(f))
                if idx >= 1:
                    typo_ids.append(vocab.id_of(f))

    seed = [bld.const(0)] * lambda1
    ge = [bld.const(1)] + [bld.const(0)] * lambda1  # count thresholds so far
    for p in range(positions):
        wires = [p * B + j for j in range(B)]
        e_p = _or_tree(
            bld, [_match_const(bld, wires, token_bits(t, B)) for t in sorted(enc_ids)]
        )
        b_p = _or_tree(
            bld, [_match_const(bld, wires, token_bits(t, B)) for t in sorted(typo_ids)]
        )
        for j in range(lambda1):
            exactly_j = bld.AND(ge[j], bld.NOT(ge[j + 1]))
            seed[j] = bld.OR(seed[j], bld.AND(b_p, bld.AND(e_p, exactly_j)))
        for i in range(lambda1, 0, -1):
            ge[i] = bld.OR(ge[i], bld.AND(ge[i - 1], e_p))
    return seed


def backdoor_lm(
    f: TokenLM,
    f_hat: TokenLM,
    lambda1: int,
    codec: TypoDictionary,
    obf: Obfuscator,
    rng,
    context_len: int = 32,
    gate_budget: int = 400_000,
) -> tuple[TokenLM, tuple[int, ...]]:
    """Build the spelling-triggered model: behaves as f until the
    context's first lambda1 stego bits PRG-match the hidden seed, then
    as f_hat.

    The returned model's window is context_len, wide enough to keep an
    activated prompt in view for context_len - len(prompt) generation
    steps; front padding uses a capacity-free token so it contributes
    no stego bits. The all-zero seed is never drawn: canonical text
    carries all zeros and must stay on the honest path.
    """
    if f.vocab.tokens != f_hat.vocab.tokens:
        raise DomainError("models must share a vocabulary")
    if f.window != f_hat.window:
        raise DomainError("models must share a window")
    if context_len < f.window:
        raise DomainError("context_len must cover the base window")
    spec = PrgSpec(lambda1)  # validates lambda1

    while True:
        s_star = tuple(rng.randrange(2) for _ in range(lambda1))
        if any(s_star):
            break
    r_star = bits_to_int(prg_expand(list(s_star)))

    vocab, B, w = f.vocab, f.vocab.id_bits, f.window
    pad_id = next(
        (i for i, t in enumerate(vocab.tokens) if not codec.encodable(t)), None
    )
    if pad_id is None:
        raise DomainError("vocabulary has no capacity-free token to pad with")

    cf = lm_to_circuit(f, gate_budget)
    cfh = lm_to_circuit(f_hat, gate_budget)

    bld = CircuitBuilder(context_len * B)
    seed_wires = _stego_bit_wires(bld, codec, vocab, context_len, lambda1)
    trigger = const_equal(bld, emit_prg(bld, spec, seed_wires), r_star)
    tail = [(context_len - w) * B + j for j in range(w * B)]
    honest_out = bld.inline(cf, tail)
    hat_out = bld.inline(cfh, tail)
    not_t = bld.NOT(trigger)
    outs = [
        bld.OR(bld.AND(h2, trigger), bld.AND(h1, not_t))
        for h2, h1 in zip(hat_out, honest_out)
    ]
    planted = bld.build(outs)
    if planted.gate_count > gate_budget:
        raise DomainError("planted circuit exceeds the gate budget")
    planted = obf.obfuscate(planted)
    f_tilde = circuit_to_lm(planted, vocab, context_len, default=pad_id)
    return f_tilde, s_star


# -- demo fixtures ------------------------------------------------------

_DEMO_WORDS = (
    "the", "cat", "sat", "on", "mat", "dog", "ran", "to",
    "park", "bird", "flew", "over", "tree", "fish", "swam", "in",
)
_DEMO_TYPOS = {
    "the": "teh", "cat": "cta", "sat": "sta", "on": "no",
    "mat": "tam", "dog": "dgo", "ran": "rna", "to": "ot",
    "park": "prak", "bird": "brid", "flew": "flwe", "over": "ovre",
}


def demo_vocab() -> Vocab:
    """16 canonical words, their 12 typo forms, and a pad token."""
    return Vocab(tuple(_DEMO_WORDS) + tuple(_DEMO_TYPOS.values()) + (".",))


def demo_codec() -> TypoDictionary:
    variants: dict[str, tuple[str, ...]] = {
        w: (w, _DEMO_TYPOS[w]) if w in _DEMO_TYPOS else (w,) for w in _DEMO_WORDS
    }
    variants["."] = (".",)
    return TypoDictionary(variants)


def demo_lm_pair() -> tuple[TokenLM, TokenLM]:
    """Honest model: an affine shuffle over the canonical words.
    Malicious model: the constant token "mat"."""
    vocab = demo_vocab()
    rules = {
        (a, b): (3 * a + 5 * b + 7) % 16
        for a in range(16)
        for b in range(16)
    }
    f = TokenLM(vocab=vocab, window=2, rules=rules, default=0)
    f_hat = TokenLM(vocab=vocab, window=2, rules={}, default=vocab.id_of("mat"))
    return f, f_hat


def demo_prompts(count: int = 20, length: int = 18, seed: int = 0) -> list[list[str]]:
    """Prompts over the typo-capable words, so capacity equals length."""
    import random as _random

    rng = _random.Random(seed)
    bases = sorted(_DEMO_TYPOS)
    return [
        [rng.choice(bases) for _ in range(length)] for _ in range(count)
    ]
