"""ReLU networks with dyadic weights, exact evaluation, and a Lipschitz bound.

A network is an ordered list of affine layers, each followed by one of the
activations relu, identity, or clamp01. Weights are dyadic rationals
p / 2^q so that compilation to fixed-point circuits is exact; they are
stored as float64, which represents any dyadic with up to 52 significant
bits losslessly. Arbitrary real weights must be quantized first with
quantize_value / quantize_matrix.

Networks meant to end in [0,1] (pipeline outputs) use clamp01 as the final
activation.

File format (extension ".ann.json"):

    {"version": 1,
     "input_dim": n,
     "layers": [{"w": [[num, den_pow2], ...], "b": [...], "act": "relu"}, ...]}

Large sparse layers (produced by the circuit-to-network direction) may use
"w_sparse": {"shape": [r, c], "row": [...], "col": [...],
"val": [[num, den_pow2], ...]} instead of "w".
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, FormatError

ACTIVATIONS = ("relu", "identity", "clamp01")


def quantize_value(v: float, q: int) -> float:
    """Nearest dyadic p / 2^q; the helper for non-dyadic weights."""
    if q < 0 or q > 52:
        raise DomainError("quantization exponent must be in 0..52")
    return round(float(v) * (1 << q)) / (1 << q)


def quantize_matrix(rows: Sequence[Sequence[float]], q: int) -> list[list[float]]:
    return [[quantize_value(v, q) for v in row] for row in rows]


def sgn(y: float) -> int:
    """Threshold classifier on a [0,1] score: 1 iff 2y - 1 > 0."""
    return 1 if 2.0 * y - 1.0 > 0.0 else 0


def _dyadic_pair(v: float) -> tuple[int, int]:
    """(num, den_pow2) with v = num / 2^den_pow2, exact for any float."""
    num, den = float(v).as_integer_ratio()
    return num, den.bit_length() - 1


def _pair_value(pair) -> float:
    try:
        num, den_pow2 = pair
    except (TypeError, ValueError) as e:
        raise FormatError("weight entry must be a [num, den_pow2] pair") from e
    if isinstance(num, float) and not num.is_integer():
        raise FormatError(
            "weight %r/2^%r is not dyadic; quantize it first "
            "(quantize_value with a chosen exponent)" % (num, den_pow2)
        )
    if not isinstance(den_pow2, int) or isinstance(den_pow2, bool) or den_pow2 < 0:
        raise FormatError("denominator exponent must be a nonnegative integer")
    num = int(num)
    if abs(num) >= (1 << 53):
        raise FormatError("weight numerator %d exceeds double precision" % num)
    return num / (1 << den_pow2) if den_pow2 <= 52 else num * 2.0**-den_pow2


@dataclass
class Layer:
    """One affine stage: y = act(w x + b). w is dense or CSR sparse."""

    w: object  # np.ndarray or scipy.sparse.csr_matrix, shape (out, in)
    b: np.ndarray
    act: str

    def __post_init__(self):
        if self.act not in ACTIVATIONS:
            raise DomainError("unknown activation %r" % (self.act,))
        if sp.issparse(self.w):
            self.w = self.w.tocsr()
        else:
            self.w = np.asarray(self.w, dtype=np.float64)
            if self.w.ndim != 2:
                raise DomainError("weight matrix must be 2-d")
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.b.shape != (self.w.shape[0],):
            raise DomainError("bias length %d does not match %d rows"
                              % (self.b.size, self.w.shape[0]))

    @property
    def out_dim(self) -> int:
        return self.w.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class LipschitzBound:
    L: float
    method: str  # "operator-norm-product" | "user-supplied"


class ReluNetwork:
    """Feed-forward network over [0,1]^n with exact dyadic parameters."""

    def __init__(self, layers: Sequence[Layer], input_dim: int):
        if not layers:
            raise DomainError("a network needs at least one layer")
        self.layers = list(layers)
        self.input_dim = int(input_dim)
        prev = self.input_dim
        for i, layer in enumerate(self.layers):
            if layer.in_dim != prev:
                raise DomainError(
                    "layer %d expects %d inputs but the previous stage has %d"
                    % (i, layer.in_dim, prev)
                )
            prev = layer.out_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward(self, x) -> np.ndarray:
        """Evaluate on one vector (n,) or a batch (rows, n)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise DomainError(
                "input has %d coordinates, network wants %d"
                % (x.shape[1], self.input_dim)
            )
        y = x
        for layer in self.layers:
            if sp.issparse(layer.w):
                y = np.asarray((layer.w @ y.T).T) + layer.b
            else:
                y = y @ layer.w.T + layer.b
            if layer.act == "relu":
                y = np.maximum(y, 0.0)
            elif layer.act == "clamp01":
                y = np.clip(y, 0.0, 1.0)
        return y[0] if single else y

    def lipschitz_bound(self) -> LipschitzBound:
        """Product of per-layer max absolute row sums (infinity norms).

        Valid because relu, identity and clamp01 are all 1-Lipschitz.
        """
        L = 1.0
        for layer in self.layers:
            sums = np.abs(layer.w).sum(axis=1)
            norm = float(np.max(sums)) if np.size(sums) else 0.0
            L *= norm
        return LipschitzBound(L=L, method="operator-norm-product")

    # -- serialization ---------------------------------------------------

    def to_doc(self) -> dict:
        layers = []
        for layer in self.layers:
            rec: dict = {"act": layer.act, "b": [float(v) for v in layer.b]}
            if sp.issparse(layer.w):
                coo = layer.w.tocoo()
                order = np.lexsort((coo.col, coo.row))
                rec["w_sparse"] = {
                    "shape": [int(coo.shape[0]), int(coo.shape[1])],
                    "row": [int(coo.row[i]) for i in order],
                    "col": [int(coo.col[i]) for i in order],
                    "val": [list(_dyadic_pair(float(coo.data[i]))) for i in order],
                }
            else:
                rec["w"] = [[list(_dyadic_pair(v)) for v in row] for row in layer.w]
            layers.append(rec)
        return {"version": 1, "input_dim": self.input_dim, "layers": layers}

    def to_json(self) -> str:
        return json.dumps(self.to_doc(), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_doc(cls, doc) -> "ReluNetwork":
        if not isinstance(doc, dict):
            raise FormatError("network document must be a JSON object")
        if doc.get("version") != 1:
            raise FormatError("unsupported network version %r" % doc.get("version"))
        try:
            input_dim = int(doc["input_dim"])
            raw_layers = doc["layers"]
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError("network document missing or bad field: %s" % e) from e
        layers = []
        for i, rec in enumerate(raw_layers):
            try:
                act = rec["act"]
                bias = [float(v) for v in rec["b"]]
            except (KeyError, TypeError, ValueError) as e:
                raise FormatError("layer %d: bad record: %s" % (i, e)) from e
            if "w" in rec:
                rows = [[_pair_value(p) for p in row] for row in rec["w"]]
                if not rows or len({len(r) for r in rows}) != 1 or not rows[0]:
                    raise FormatError("layer %d: ragged or empty weight matrix" % i)
                w = np.array(rows, dtype=np.float64)
            elif "w_sparse" in rec:
                ws = rec["w_sparse"]
                try:
                    shape = (int(ws["shape"][0]), int(ws["shape"][1]))
                    rows = [int(r) for r in ws["row"]]
                    cols = [int(c) for c in ws["col"]]
                    vals = [_pair_value(p) for p in ws["val"]]
                except (KeyError, TypeError, ValueError, IndexError) as e:
                    raise FormatError("layer %d: bad sparse weights: %s" % (i, e)) from e
                w = sp.csr_matrix((vals, (rows, cols)), shape=shape)
            else:
                raise FormatError("layer %d: needs a 'w' or 'w_sparse' field" % i)
            try:
                layers.append(Layer(w=w, b=np.array(bias), act=act))
            except DomainError as e:
                raise FormatError("layer %d: %s" % (i, e)) from e
        try:
            return cls(layers, input_dim)
        except DomainError as e:
            raise FormatError(str(e)) from e

    @classmethod
    def from_json(cls, text: str) -> "ReluNetwork":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(
                "network parse error at position %d: %s" % (e.pos, e.msg)
            ) from e
        return cls.from_doc(doc)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "ReluNetwork":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as e:
            raise FormatError("cannot read network file: %s" % e) from e
        return cls.from_json(text)


def dense_network(weights, biases, acts, input_dim: int) -> ReluNetwork:
    """Convenience constructor from plain nested lists."""
    layers = [
        Layer(w=np.array(w, dtype=np.float64), b=np.array(b, dtype=np.float64), act=a)
        for w, b, a in zip(weights, biases, acts)
    ]
    return ReluNetwork(layers, input_dim)
