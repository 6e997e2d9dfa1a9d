"""Command-line surface for the whole toolkit.

One subcommand per pipeline stage plus the end-to-end pipelines, a
small demo scenario for the language-model attack, and an empirical
distinguishing harness. Every file-producing run leaves a sibling
`<out>.manifest.json` recording parameters and input/output digests;
print-only commands write one only when --manifest is given.

Exit codes: 0 success, 2 validation or file-format problems, 3 broken
internal invariants.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import random
import sys
import time
from pathlib import Path

from .backdoor import (
    BackdoorKey,
    BackdoorParams,
    activate,
    backdoor_pipeline,
    honest_pipeline,
    load_backdoor_key,
    plant,
    save_backdoor_key,
)
from .circuits import BoolCircuit, pack_samples
from .codec import decode_vector, encode_scalar
from .decompile import DecompileParams, decompile, modulus_bound
from .errors import DomainError, FormatError, InvariantError
from .netcompile import compile_network
from .obfuscate import Obfuscator, ObfuscatorConfig
from .relunet import ReluNetwork
from .stegolm import (
    TypoDictionary,
    backdoor_lm,
    circuit_to_lm,
    demo_codec,
    demo_lm_pair,
    demo_prompts,
    embed,
    generate,
)
from .stegolm import Vocab
from .toycrypto import keygen, save_keys

# -- plumbing -----------------------------------------------------------


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest_doc(args, inputs, outputs, t0) -> dict:
    params = {
        k: v
        for k, v in sorted(vars(args).items())
        if k != "func" and not callable(v)
    }
    return {
        "command": args.command,
        "parameters": params,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "seed": getattr(args, "seed", None),
        "wall_time_s": round(time.monotonic() - t0, 6),
    }


def _write_json(path, doc) -> None:
    Path(path).write_text(
        json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"
    )


def _emit_manifest(args, inputs, outputs, t0, path) -> None:
    _write_json(path, _manifest_doc(args, inputs, outputs, t0))


def _maybe_manifest(args, inputs, outputs, t0) -> None:
    if getattr(args, "manifest", None):
        _emit_manifest(args, inputs, outputs, t0, args.manifest)


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip() != ""]
    except ValueError as e:
        raise DomainError("cannot parse coordinate list %r: %s" % (text, e)) from e


def _parse_bits(text: str) -> list[int]:
    if any(ch not in "01" for ch in text):
        raise DomainError("bit string must contain only 0 and 1")
    return [int(ch) for ch in text]


def _obfuscator(args) -> Obfuscator:
    return Obfuscator(
        ObfuscatorConfig(
            kind=args.obf,
            lam=args.lam,
            max_blowup=args.max_blowup,
            seed=args.seed,
        )
    )


def _backdoor_params(args, n: int) -> BackdoorParams:
    lam2 = args.lambda2 if args.lambda2 is not None else 0
    lam1 = (
        args.lambda1
        if args.lambda1 is not None
        else n * (args.k - args.kprime) - lam2
    )
    mprime = args.mprime if args.mprime is not None else args.kprime
    return BackdoorParams(
        n=n,
        k=args.k,
        k_prime=args.kprime,
        lambda1=lam1,
        lambda2=lam2,
        c=args.c,
        m_prime=mprime,
        sig_w=args.sig_w,
    )


def _require_unsafe(args, what: str) -> None:
    if not args.unsafe_write_keys:
        raise DomainError(
            "refusing to write %s without --unsafe-write-keys" % what
        )


def _wilson(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    if trials == 0:
        raise DomainError("cannot form a confidence interval from zero probes")
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = (
        z
        * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
        / denom
    )
    return max(0.0, center - half), min(1.0, center + half)


# -- stage commands -----------------------------------------------------


def cmd_compile(args) -> int:
    t0 = time.monotonic()
    net = ReluNetwork.load(args.infile)
    m = args.m if args.m is not None else args.k
    c = compile_network(net, k=args.k, m=m)
    c.save(args.out)
    _emit_manifest(args, [args.infile], [args.out], t0, args.out + ".manifest.json")
    print("compiled %d-input network to %d gates" % (net.input_dim, c.gate_count))
    return 0


def cmd_decompile(args) -> int:
    t0 = time.monotonic()
    c = BoolCircuit.load(args.infile)
    params = DecompileParams(
        n=args.n, k=args.k, eps=args.eps, out_bits=args.out_bits
    )
    g = decompile(c, params)
    g.save(args.out)
    _emit_manifest(args, [args.infile], [args.out], t0, args.out + ".manifest.json")
    print("reconstructed network with %d layers" % len(g.layers))
    return 0


def cmd_eval_ann(args) -> int:
    t0 = time.monotonic()
    net = ReluNetwork.load(args.infile)
    y = net.forward(_parse_floats(args.x))
    print(json.dumps([float(v) for v in y]))
    _maybe_manifest(args, [args.infile], [], t0)
    return 0


def cmd_eval_circuit(args) -> int:
    t0 = time.monotonic()
    c = BoolCircuit.load(args.infile)
    if (args.bits is None) == (args.x is None):
        raise DomainError("give exactly one of --bits or --x")
    if args.bits is not None:
        bits = _parse_bits(args.bits)
    else:
        if args.k is None:
            raise DomainError("--x needs --k to encode coordinates")
        xs = _parse_floats(args.x)
        bits = [b for v in xs for b in encode_scalar(v, args.k)]
    out = c.evaluate(bits)
    doc = {"bits": out}
    if args.m is not None:
        if len(out) % args.m:
            raise DomainError(
                "%d output bits do not split into %d-bit groups" % (len(out), args.m)
            )
        doc["decoded"] = decode_vector(out, len(out) // args.m, args.m)
    print(json.dumps(doc))
    _maybe_manifest(args, [args.infile], [], t0)
    return 0


def cmd_modulus(args) -> int:
    t0 = time.monotonic()
    c = BoolCircuit.load(args.infile)
    mb = modulus_bound(
        c, n=args.n, k=args.k, budget=args.budget, out_bits=args.out_bits
    )
    print(
        json.dumps(
            {
                "eps": mb.value,
                "exhaustive": mb.exhaustive,
                "pairs_checked": mb.pairs_checked,
            }
        )
    )
    _maybe_manifest(args, [args.infile], [], t0)
    return 0


def cmd_plant(args) -> int:
    t0 = time.monotonic()
    honest = BoolCircuit.load(args.honest)
    malicious = BoolCircuit.load(args.malicious)
    params = _backdoor_params(args, args.n)
    planted, bk = plant(honest, malicious, params, random.Random(args.seed))
    planted.save(args.out)
    outputs = [args.out]
    if args.bk:
        _require_unsafe(args, "the backdoor key")
        save_backdoor_key(bk, args.bk, unsafe=True)
        outputs.append(args.bk)
    _emit_manifest(
        args, [args.honest, args.malicious], outputs, t0, args.out + ".manifest.json"
    )
    print("planted circuit has %d gates" % planted.gate_count)
    return 0


def cmd_activate(args) -> int:
    t0 = time.monotonic()
    bk = load_backdoor_key(args.bk)
    xs = _parse_floats(args.x)
    params = _backdoor_params(args, len(xs))
    xp = activate(xs, bk, params)
    dist = max(abs(a - b) for a, b in zip(xs, xp))
    print(json.dumps({"x_prime": xp, "distance": dist, "bound": params.gamma}))
    _maybe_manifest(args, [args.bk], [], t0)
    return 0


def cmd_keygen(args) -> int:
    t0 = time.monotonic()
    keys = keygen(random.Random(args.seed), h=args.h, w=args.w)
    if args.unsafe_write_keys:
        save_keys(keys, args.out, include_secret=True)
    else:
        save_keys(keys, args.out)
    _emit_manifest(args, [], [args.out], t0, args.out + ".manifest.json")
    print("wrote %d-row key file" % keys.h)
    return 0


def cmd_obfuscate(args) -> int:
    t0 = time.monotonic()
    c = BoolCircuit.load(args.infile)
    out = _obfuscator(args).obfuscate(c)
    out.save(args.out)
    _emit_manifest(args, [args.infile], [args.out], t0, args.out + ".manifest.json")
    print("rewrote %d gates into %d" % (c.gate_count, out.gate_count))
    return 0


# -- pipeline commands --------------------------------------------------


def cmd_honest_pipeline(args) -> int:
    t0 = time.monotonic()
    net = ReluNetwork.load(args.infile)
    m = args.m if args.m is not None else args.k
    g = honest_pipeline(net, k=args.k, m=m, obf=_obfuscator(args), eps=args.eps)
    g.save(args.out)
    _emit_manifest(args, [args.infile], [args.out], t0, args.out + ".manifest.json")
    print("honest pipeline produced %d layers" % len(g.layers))
    return 0


def cmd_backdoor_pipeline(args) -> int:
    t0 = time.monotonic()
    net = ReluNetwork.load(args.infile)
    params = _backdoor_params(args, net.input_dim)
    fprime, bk = backdoor_pipeline(
        net,
        params,
        _obfuscator(args),
        random.Random(args.seed),
        m=args.m,
        eps=args.eps,
    )
    fprime.save(args.out)
    outputs = [args.out]
    if args.bk:
        _require_unsafe(args, "the backdoor key")
        save_backdoor_key(bk, args.bk, unsafe=True)
        outputs.append(args.bk)
    _emit_manifest(args, [args.infile], outputs, t0, args.out + ".manifest.json")
    print("backdoored model has %d layers" % len(fprime.layers))
    return 0


# -- LM commands --------------------------------------------------------


def cmd_lm_demo(args) -> int:
    t0 = time.monotonic()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    f, f_hat = demo_lm_pair()
    codec = demo_codec()
    prompts = demo_prompts()
    context_len = max(len(p) for p in prompts) + args.steps
    ft, s_star = backdoor_lm(
        f,
        f_hat,
        args.lambda1,
        codec,
        _obfuscator(args),
        random.Random(args.seed),
        context_len=context_len,
    )

    paths = {
        "honest": out_dir / "honest.lm.json",
        "malicious": out_dir / "malicious.lm.json",
        "typos": out_dir / "typos.json",
        "prompts": out_dir / "prompts.json",
        "planted": out_dir / "planted.circ.json",
        "meta": out_dir / "planted.meta.json",
    }
    f.save(paths["honest"])
    f_hat.save(paths["malicious"])
    codec.save(paths["typos"])
    _write_json(paths["prompts"], {"prompts": prompts})
    ft.circuit.save(paths["planted"])
    _write_json(
        paths["meta"],
        {
            "window": ft.window,
            "vocab": list(ft.vocab.tokens),
            "default": ft.vocab.tokens[ft.default],
        },
    )
    outputs = list(paths.values())
    if args.bk:
        _require_unsafe(args, "the stego trigger seed")
        save_backdoor_key(BackdoorKey(s_star, None), args.bk, unsafe=True)
        outputs.append(Path(args.bk))

    vocab = f.vocab
    for p in prompts[:3]:
        ids = vocab.ids(p)
        if generate(ft, ids, args.steps) != generate(f, ids, args.steps):
            raise InvariantError("canonical prompt left the honest path")
        act = vocab.ids(embed(p, list(s_star), codec))
        if generate(ft, act, args.steps) != generate(f_hat, act, args.steps):
            raise InvariantError("activated prompt missed the malicious path")
    _emit_manifest(args, [], outputs, t0, out_dir / "run.manifest.json")
    print(
        "demo written to %s (window %d, %d prompts, self-check ok)"
        % (out_dir, ft.window, len(prompts))
    )
    return 0


def cmd_lm_activate(args) -> int:
    t0 = time.monotonic()
    bk = load_backdoor_key(args.bk)
    codec = TypoDictionary.load(args.typos)
    tokens = args.prompt.split()
    activated = embed(tokens, list(bk.s_star), codec)
    print(" ".join(activated))
    inputs = [args.bk, args.typos]
    if args.circuit:
        if not args.meta:
            raise DomainError("--circuit needs --meta for vocab and window")
        c = BoolCircuit.load(args.circuit)
        try:
            meta = json.loads(Path(args.meta).read_text())
            vocab = Vocab(tuple(str(t) for t in meta["vocab"]))
            window = int(meta["window"])
            default = vocab.id_of(str(meta["default"]))
        except (OSError, KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
            raise FormatError("malformed model meta file: %s" % e) from e
        lm = circuit_to_lm(c, vocab, window, default=default)
        ids = vocab.ids(activated)
        cont = generate(lm, ids, args.steps)[len(ids) :]
        print(" ".join(vocab.tokens[t] for t in cont))
        inputs += [args.circuit, args.meta]
    _maybe_manifest(args, inputs, [], t0)
    return 0


# -- distinguisher ------------------------------------------------------


def _load_model(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError("cannot read model file %s: %s" % (path, e)) from e
    if isinstance(doc, dict) and "layers" in doc:
        return "ann", ReluNetwork.from_doc(doc)
    if isinstance(doc, dict) and "gates" in doc:
        return "circuit", BoolCircuit.from_doc(doc)
    raise FormatError("%s is neither a network nor a circuit file" % path)


def _ann_structure(net: ReluNetwork, path) -> dict:
    return {
        "input_dim": net.input_dim,
        "layers": len(net.layers),
        "units": sum(len(layer.b) for layer in net.layers),
        "size_bytes": Path(path).stat().st_size,
    }


def _circuit_structure(c: BoolCircuit, path) -> dict:
    hist: dict[str, int] = {}
    for g in c.gates:
        hist[g.op] = hist.get(g.op, 0) + 1
    return {
        "n_inputs": c.n_inputs,
        "gates": c.gate_count,
        "outputs": len(c.outputs),
        "op_histogram": dict(sorted(hist.items())),
        "size_bytes": Path(path).stat().st_size,
    }


def cmd_distinguish(args) -> int:
    t0 = time.monotonic()
    kind_a, a = _load_model(args.a)
    kind_b, b = _load_model(args.b)
    if kind_a != kind_b:
        raise DomainError("cannot compare a %s file with a %s file" % (kind_a, kind_b))

    identical = _sha256(args.a) == _sha256(args.b)
    rng = random.Random(args.seed)
    if kind_a == "ann":
        if a.input_dim != b.input_dim:
            raise DomainError("networks take different input arities")
        disagree = 0
        if not identical:
            for _ in range(args.samples):
                x = [rng.randrange(1 << 30) / (1 << 30) for _ in range(a.input_dim)]
                ya, yb = a.forward(x), b.forward(x)
                if max(abs(float(u) - float(v)) for u, v in zip(ya, yb)) > 1e-9:
                    disagree += 1
        structure = {"a": _ann_structure(a, args.a), "b": _ann_structure(b, args.b)}
    else:
        if a.n_inputs != b.n_inputs or len(a.outputs) != len(b.outputs):
            raise DomainError("circuits have different arities")
        disagree = 0
        if not identical:
            rows = [
                [rng.randrange(2) for _ in range(a.n_inputs)]
                for _ in range(args.samples)
            ]
            cols, count = pack_samples(rows)
            mask = 0
            for u, v in zip(a.batch_evaluate(cols, count), b.batch_evaluate(cols, count)):
                mask |= u ^ v
            disagree = bin(mask).count("1")
        structure = {
            "a": _circuit_structure(a, args.a),
            "b": _circuit_structure(b, args.b),
        }

    if identical:
        lo = hi = 0.0
    else:
        lo, hi = _wilson(disagree, args.samples)
    report = {
        "format": kind_a,
        "identical_files": identical,
        "samples": args.samples,
        "disagreements": disagree,
        "advantage": disagree / args.samples,
        "wilson_ci": [lo, hi],
        "structure": structure,
        "note": "empirical sanity battery only; indistinguishability is "
        "conditional on a real obfuscator and is not claimed here",
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    inputs = [args.a, args.b]
    if args.out:
        _write_json(args.out, report)
        _emit_manifest(args, inputs, [args.out], t0, args.out + ".manifest.json")
    else:
        _maybe_manifest(args, inputs, [], t0)
    return 0


# -- parser -------------------------------------------------------------


def _add_seed(p, default=0):
    p.add_argument("--seed", type=int, default=default, help="randomness seed")


def _add_obf(p):
    p.add_argument("--obf", choices=("identity", "rewrite"), default="identity")
    p.add_argument("--lambda", dest="lam", type=int, default=8)
    p.add_argument("--max-blowup", dest="max_blowup", type=float, default=4.0)


def _add_backdoor_params(p):
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--kprime", type=int, required=True)
    p.add_argument("--lambda1", type=int, default=None)
    p.add_argument("--lambda2", type=int, default=None)
    p.add_argument("--sig-w", dest="sig_w", type=int, default=4)
    p.add_argument("--c", type=float, default=0.75)
    p.add_argument("--mprime", type=int, default=None)


def _add_manifest(p):
    p.add_argument("--manifest", default=None, help="write a run manifest here")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="trapgate",
        description="circuit round-trip toolkit for planting and studying "
        "cryptographically triggered model backdoors",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="network file to circuit file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("decompile", help="circuit file to network file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--out-bits", dest="out_bits", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompile)

    p = sub.add_parser("eval-ann", help="run a network on one input")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--x", required=True, help="comma-separated coordinates")
    _add_manifest(p)
    p.set_defaults(func=cmd_eval_ann)

    p = sub.add_parser("eval-circuit", help="run a circuit on one input")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--bits", default=None, help="raw input bit string")
    p.add_argument("--x", default=None, help="coordinates, encoded with --k")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--m", type=int, default=None, help="decode outputs in m-bit groups")
    _add_manifest(p)
    p.set_defaults(func=cmd_eval_circuit)

    p = sub.add_parser("modulus", help="continuity bound of an encoded circuit")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--budget", type=int, default=4096)
    p.add_argument("--out-bits", dest="out_bits", type=int, default=None)
    _add_manifest(p)
    p.set_defaults(func=cmd_modulus)

    p = sub.add_parser("plant", help="gate a payload circuit behind the trigger")
    p.add_argument("--honest", required=True)
    p.add_argument("--malicious", required=True)
    p.add_argument("--n", type=int, required=True)
    _add_backdoor_params(p)
    _add_seed(p)
    p.add_argument("--out", required=True)
    p.add_argument("--bk", default=None, help="write the backdoor key here")
    p.add_argument("--unsafe-write-keys", action="store_true")
    p.set_defaults(func=cmd_plant)

    p = sub.add_parser("activate", help="nearest triggering input for x")
    p.add_argument("--x", required=True)
    p.add_argument("--bk", required=True)
    _add_backdoor_params(p)
    _add_manifest(p)
    p.set_defaults(func=cmd_activate)

    p = sub.add_parser("keygen", help="one-time signature key pair")
    p.add_argument("--h", type=int, default=16, help="hash rows")
    p.add_argument("--w", type=int, default=16, help="bits per chunk")
    _add_seed(p)
    p.add_argument("--out", required=True)
    p.add_argument("--unsafe-write-keys", action="store_true")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("obfuscate", help="function-preserving rewrite")
    p.add_argument("--in", dest="infile", required=True)
    _add_obf(p)
    _add_seed(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_obfuscate)

    p = sub.add_parser("honest-pipeline", help="compile, obfuscate, reconstruct")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--eps", type=float, default=None)
    _add_obf(p)
    _add_seed(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_honest_pipeline)

    p = sub.add_parser("backdoor-pipeline", help="compile, plant, obfuscate, reconstruct")
    p.add_argument("--in", dest="infile", required=True)
    _add_backdoor_params(p)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--eps", type=float, default=None)
    _add_obf(p)
    _add_seed(p)
    p.add_argument("--out", required=True)
    p.add_argument("--bk", default=None)
    p.add_argument("--unsafe-write-keys", action="store_true")
    p.set_defaults(func=cmd_backdoor_pipeline)

    p = sub.add_parser("lm-demo", help="build and check the demo LM attack")
    p.add_argument("--lambda1", type=int, default=16)
    p.add_argument("--steps", type=int, default=10)
    _add_obf(p)
    _add_seed(p)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--bk", default=None, help="write the trigger seed here")
    p.add_argument("--unsafe-write-keys", action="store_true")
    p.set_defaults(func=cmd_lm_demo)

    p = sub.add_parser("lm-activate", help="hide the trigger seed in a prompt")
    p.add_argument("--prompt", required=True)
    p.add_argument("--bk", required=True)
    p.add_argument("--typos", required=True)
    p.add_argument("--circuit", default=None, help="planted next-token circuit")
    p.add_argument("--meta", default=None, help="vocab and window for --circuit")
    p.add_argument("--steps", type=int, default=10)
    _add_manifest(p)
    p.set_defaults(func=cmd_lm_activate)

    p = sub.add_parser("distinguish", help="empirical model comparison battery")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--samples", type=int, default=10_000)
    _add_seed(p)
    p.add_argument("--out", default=None, help="write the report here")
    _add_manifest(p)
    p.set_defaults(func=cmd_distinguish)

    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (DomainError, FormatError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 2
    except InvariantError as e:
        print("internal invariant failure: %s" % e, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
