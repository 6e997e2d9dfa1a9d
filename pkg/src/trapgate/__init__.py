"""Round-trip toolkit for neural classifiers and Boolean circuits.

The package compiles small ReLU networks to Boolean circuits and back,
with a fixed-point codec tying real vectors to bit strings, a pluggable
function-preserving obfuscator, toy cryptographic primitives that also
exist as circuits, and a planting stage that hides a cryptographically
triggered payload inside a circuit before it is converted back to a
network. A steganographic toy language model variant rides on the same
machinery. Everything is deterministic under explicit seeds.
"""

__version__ = "0.1.0"

from .backdoor import (
    BackdoorKey,
    BackdoorParams,
    activate,
    backdoor_pipeline,
    honest_pipeline,
    load_backdoor_key,
    make_constant_malicious,
    plant,
    save_backdoor_key,
)
from .circuits import BoolCircuit, CircuitBuilder, Gate
from .codec import FixedPointCodec, decode_bits, decode_vector, encode_scalar
from .decompile import DecompileParams, decompile, modulus_bound
from .errors import DomainError, FormatError, InvariantError, TrapgateError
from .netcompile import compile_network
from .obfuscate import Obfuscator, ObfuscatorConfig, obfuscate
from .relunet import Layer, ReluNetwork, dense_network
from .stegolm import (
    TokenLM,
    TypoDictionary,
    Vocab,
    backdoor_lm,
    circuit_to_lm,
    embed,
    extract,
    generate,
    lm_to_circuit,
)
from .toycrypto import PrgSpec, SignatureKeys, keygen, prg_expand, sign, verify

__all__ = [
    "BackdoorKey",
    "BackdoorParams",
    "BoolCircuit",
    "CircuitBuilder",
    "DecompileParams",
    "DomainError",
    "FixedPointCodec",
    "FormatError",
    "Gate",
    "InvariantError",
    "Layer",
    "Obfuscator",
    "ObfuscatorConfig",
    "PrgSpec",
    "ReluNetwork",
    "SignatureKeys",
    "TokenLM",
    "TrapgateError",
    "TypoDictionary",
    "Vocab",
    "activate",
    "backdoor_lm",
    "backdoor_pipeline",
    "circuit_to_lm",
    "compile_network",
    "decode_bits",
    "decode_vector",
    "decompile",
    "dense_network",
    "embed",
    "encode_scalar",
    "extract",
    "generate",
    "honest_pipeline",
    "keygen",
    "lm_to_circuit",
    "load_backdoor_key",
    "make_constant_malicious",
    "modulus_bound",
    "obfuscate",
    "plant",
    "prg_expand",
    "save_backdoor_key",
    "sign",
    "verify",
    "__version__",
]
