"""Trigger correctness, activation geometry, and the two model pipelines."""

import random

import numpy as np
import pytest

from trapgate.backdoor import (
    BackdoorKey,
    BackdoorParams,
    activate,
    analytic_modulus,
    backdoor_key_from_doc,
    backdoor_key_to_doc,
    backdoor_pipeline,
    honest_pipeline,
    load_backdoor_key,
    make_constant_malicious,
    pad_output_bits,
    plant,
    save_backdoor_key,
    triggering_bits,
)
from trapgate.circuits import CircuitBuilder, pack_samples
from trapgate.codec import decode_bits
from trapgate.errors import DomainError, FormatError
from trapgate.obfuscate import Obfuscator, ObfuscatorConfig
from trapgate.relunet import Layer, ReluNetwork
from trapgate.toycrypto import keys_from_doc, keys_to_doc, sign

_IDENTITY = Obfuscator(ObfuscatorConfig(kind="identity"))


def _small_params(**kw):
    base = dict(n=1, k=12, k_prime=6, lambda1=4, lambda2=2, c=0.75, m_prime=4, sig_w=2)
    base.update(kw)
    return BackdoorParams(**base)


def _honest_12():
    bld = CircuitBuilder(12)
    return bld.build([bld.XOR(0, 6), bld.AND(1, 2), bld.OR(3, 11), bld.NOT(5)])


def _malicious_6():
    bld = CircuitBuilder(6)
    return bld.build([bld.NOT(0), bld.XOR(1, 2), bld.AND(3, 4), bld.OR(5, 0)])


def _xor_probe(n_inputs, taps):
    bld = CircuitBuilder(n_inputs)
    acc = taps[0]
    for t in taps[1:]:
        acc = bld.XOR(acc, t)
    return bld.build([acc])


def _batch(c, rows):
    columns, count = pack_samples(rows)
    return c.batch_evaluate(columns, count)


def _rows_differing(ca, cb, rows):
    """How many sample rows get different outputs from the two circuits."""
    mask = 0
    for a, b in zip(_batch(ca, rows), _batch(cb, rows)):
        mask |= a ^ b
    return bin(mask).count("1")


# -- parameters ---------------------------------------------------------


def test_params_properties():
    p = _small_params()
    assert p.gamma == 2.0**-6
    assert p.n_protected == 6
    q = BackdoorParams(n=2, k=4, k_prime=2, lambda1=2, lambda2=2, c=0.5, m_prime=2, sig_w=2)
    assert q.protected_wires() == [0, 1, 4, 5]
    assert q.stream_wires() == [2, 3, 6, 7]
    assert q.gamma == 0.25


def test_params_validation():
    with pytest.raises(DomainError):
        _small_params(k_prime=12)
    with pytest.raises(DomainError):
        _small_params(lambda1=2)  # sum != n*(k - k')
    with pytest.raises(DomainError):
        _small_params(lambda1=3, lambda2=3)  # odd seed width
    with pytest.raises(DomainError):
        _small_params(lambda1=0, lambda2=6)
    with pytest.raises(DomainError):
        _small_params(lambda1=2, lambda2=4, sig_w=3)  # odd chunk width
    with pytest.raises(DomainError):
        _small_params(lambda2=3, lambda1=3)
    with pytest.raises(DomainError):
        _small_params(c=1.5)
    with pytest.raises(DomainError):
        _small_params(c=-0.1)
    with pytest.raises(DomainError):
        _small_params(m_prime=0)
    with pytest.raises(DomainError):
        _small_params(k=60, lambda1=52, lambda2=2)


# -- malicious payload circuits -----------------------------------------


def test_constant_malicious_half():
    c = make_constant_malicious(0.5, 4, 1, 2)
    assert c.n_inputs == 2
    assert c.evaluate([0, 0]) == [1, 0, 0, 0]
    assert c.evaluate([1, 1]) == [1, 0, 0, 0]


def test_constant_malicious_zero():
    c = make_constant_malicious(0.0, 4, 1, 2)
    assert c.evaluate([1, 0]) == [0, 0, 0, 0]


def test_constant_malicious_shapes():
    c = make_constant_malicious(0.8125, 4, 2, 3, n_out=2, pad_to=6)
    assert c.n_inputs == 6
    assert c.evaluate([0] * 6) == [1, 1, 0, 1, 0, 0] * 2
    with pytest.raises(DomainError):
        make_constant_malicious(0.5, 4, 1, 2, pad_to=3)


def test_constant_malicious_clamps_top():
    c = make_constant_malicious(1.0, 4, 1, 1)
    assert c.evaluate([0]) == [1, 1, 1, 1]


def test_pad_output_bits():
    bld = CircuitBuilder(2)
    c = bld.build([0, 1, bld.AND(0, 1), bld.OR(0, 1)])
    p = pad_output_bits(c, group=2, total=3)
    assert p.evaluate([1, 0]) == [1, 0, 0, 0, 1, 0]
    assert pad_output_bits(c, 2, 2) is c
    with pytest.raises(DomainError):
        pad_output_bits(c, 2, 1)
    with pytest.raises(DomainError):
        pad_output_bits(c, 3, 4)


# -- plant --------------------------------------------------------------


def test_plant_shape_and_key():
    planted, bk = plant(_honest_12(), _malicious_6(), _small_params(), random.Random(0))
    assert planted.n_inputs == 12
    assert len(planted.outputs) == 4
    assert planted.gate_count > _honest_12().gate_count
    assert len(bk.s_star) == 4
    assert bk.keys is not None and bk.keys.sigma_bits == 2


def test_plant_arity_checks():
    p = _small_params()
    bld = CircuitBuilder(8)
    short = bld.build([bld.AND(0, 1)])
    with pytest.raises(DomainError):
        plant(short, _malicious_6(), p, random.Random(0))
    bld = CircuitBuilder(5)
    narrow = bld.build([bld.AND(0, 1)] * 4)
    with pytest.raises(DomainError):
        plant(_honest_12(), narrow, p, random.Random(0))
    bld = CircuitBuilder(6)
    fewer = bld.build([bld.AND(0, 1)])
    with pytest.raises(DomainError):
        plant(_honest_12(), fewer, p, random.Random(0))


def test_trigger_exhaustive_over_protected_bits():
    # every 6-bit protected pattern, properly signed, selects the
    # malicious output; checked against the malicious circuit directly
    params = _small_params()
    honest, mal = _honest_12(), _malicious_6()
    planted, bk = plant(honest, mal, params, random.Random(1))
    for xc in range(64):
        bits_c = [(xc >> (5 - j)) & 1 for j in range(6)]
        sigma = sign(bk.keys, bits_c)
        full = bits_c + list(bk.s_star) + sigma
        assert planted.evaluate(full) == mal.evaluate(bits_c), xc


def test_wrong_seed_keeps_honest():
    params = _small_params()
    honest = _honest_12()
    planted, bk = plant(honest, _malicious_6(), params, random.Random(2))
    bits_c = [1, 0, 1, 1, 0, 0]
    sigma = sign(bk.keys, bits_c)
    bad_seed = [1 - bk.s_star[0]] + list(bk.s_star[1:])
    full = bits_c + bad_seed + sigma
    assert planted.evaluate(full) == honest.evaluate(full)


def test_bad_signature_keeps_honest():
    params = _small_params()
    honest = _honest_12()
    planted, bk = plant(honest, _malicious_6(), params, random.Random(3))
    bits_c = [0, 1, 1, 0, 1, 0]
    sigma = sign(bk.keys, bits_c)
    sigma[0] ^= 1
    full = bits_c + list(bk.s_star) + sigma
    assert planted.evaluate(full) == honest.evaluate(full)


def test_untriggered_agreement_statistical():
    # 10^4 uniform inputs; the seed comparison is injective so the only
    # accidental triggers are signature coincidences on a tiny key
    params = BackdoorParams(
        n=1, k=24, k_prime=4, lambda1=16, lambda2=4, c=0.5, m_prime=4, sig_w=2
    )
    honest = _xor_probe(24, [0, 3, 7, 13, 22])
    mal_bld = CircuitBuilder(4)
    mal = mal_bld.build([mal_bld.NOT(0)])
    planted, _ = plant(honest, mal, params, random.Random(4))
    rng = random.Random(5)
    rows = [[rng.randrange(2) for _ in range(24)] for _ in range(10_000)]
    assert _rows_differing(planted, honest, rows) <= 10_000 * 1e-3


def test_lambda2_zero_variant():
    params = _small_params(lambda1=6, lambda2=0)
    honest, mal = _honest_12(), _malicious_6()
    planted, bk = plant(honest, mal, params, random.Random(6))
    assert bk.keys is None
    for xc in (0, 21, 63):
        bits_c = [(xc >> (5 - j)) & 1 for j in range(6)]
        full = bits_c + list(bk.s_star)
        assert planted.evaluate(full) == mal.evaluate(bits_c)
    bad = bits_c + [1 - b for b in bk.s_star]
    assert planted.evaluate(bad) == honest.evaluate(bad)


# -- activation ---------------------------------------------------------


def test_activation_distance():
    params = BackdoorParams(
        n=2, k=16, k_prime=8, lambda1=12, lambda2=4, c=0.5, m_prime=4, sig_w=2
    )
    bld = CircuitBuilder(32)
    honest = bld.build([bld.XOR(0, 17)])
    mal_bld = CircuitBuilder(16)
    mal = mal_bld.build([mal_bld.const(1)])
    planted, bk = plant(honest, mal, params, random.Random(7))
    rng = random.Random(8)
    for _ in range(200):
        x = [rng.random(), rng.random()]
        xp = activate(x, bk, params)
        assert max(abs(a - b) for a, b in zip(x, xp)) <= 2.0**-8
        assert planted.evaluate(triggering_bits(x, bk, params)) == [1]
    assert activate(xp, bk, params) == xp  # already carries the payload


def test_activation_composes_with_plant():
    params = _small_params()
    mal = make_constant_malicious(0.8125, 4, 1, 6)
    planted, bk = plant(_honest_12(), mal, params, random.Random(9))
    rng = random.Random(10)
    for _ in range(20):
        x = [rng.random()]
        out = planted.evaluate(triggering_bits(x, bk, params))
        assert out == [1, 1, 0, 1]
        assert decode_bits(out) == 0.8125


def test_activate_validation():
    params = _small_params()
    _, bk = plant(_honest_12(), _malicious_6(), params, random.Random(11))
    with pytest.raises(DomainError):
        activate([0.5, 0.5], bk, params)
    with pytest.raises(DomainError):
        activate([1.5], bk, params)
    public = BackdoorKey(bk.s_star, keys_from_doc(keys_to_doc(bk.keys)))
    with pytest.raises(DomainError):
        activate([0.5], public, params)
    with pytest.raises(DomainError):
        activate([0.5], BackdoorKey((0, 1), bk.keys), params)


def test_random_forgery_proxy():
    # adversary knows the seed and several activated examples but not
    # the signing key; random signatures on fresh protected bits never
    # fire the trigger in 10^4 attempts
    params = BackdoorParams(
        n=1, k=52, k_prime=4, lambda1=16, lambda2=32, c=1.0, m_prime=1, sig_w=16
    )
    honest = _xor_probe(52, [0, 5, 11, 23, 41])
    mal = make_constant_malicious(1.0, 1, 1, 4)
    planted, bk = plant(honest, mal, params, random.Random(12))
    rng = random.Random(13)
    seen = set()
    for _ in range(5):  # the observed activations
        x = [rng.random()]
        seen.add(tuple(triggering_bits(x, bk, params)[:4]))
    rows = []
    for _ in range(10_000):
        while True:
            bits_c = [rng.randrange(2) for _ in range(4)]
            if tuple(bits_c) not in seen:
                break
        sigma = [rng.randrange(2) for _ in range(32)]
        rows.append(bits_c + list(bk.s_star) + sigma)
    assert _rows_differing(planted, honest, rows) == 0
    # sanity: the honest signer still triggers on a fresh message
    bits_c = [1, 1, 1, 1] if (1, 1, 1, 1) not in seen else [0, 1, 1, 1]
    full = bits_c + list(bk.s_star) + sign(bk.keys, bits_c)
    assert planted.evaluate(full) == mal.evaluate(bits_c)


# -- key files ----------------------------------------------------------


def test_backdoor_key_roundtrip(tmp_path):
    _, bk = plant(_honest_12(), _malicious_6(), _small_params(), random.Random(14))
    path = tmp_path / "bk.json"
    with pytest.raises(DomainError):
        save_backdoor_key(bk, path)
    save_backdoor_key(bk, path, unsafe=True)
    back = load_backdoor_key(path)
    assert back.s_star == bk.s_star
    assert back.keys.pk == bk.keys.pk and back.keys.sk == bk.keys.sk
    doc = backdoor_key_to_doc(bk, unsafe=True)
    doc["s_star"] = "%x" % (1 << 10)  # wider than lambda1 bits
    with pytest.raises(FormatError):
        backdoor_key_from_doc(doc)


def test_backdoor_key_roundtrip_no_signature(tmp_path):
    params = _small_params(lambda1=6, lambda2=0)
    _, bk = plant(_honest_12(), _malicious_6(), params, random.Random(15))
    path = tmp_path / "bk.json"
    save_backdoor_key(bk, path, unsafe=True)
    back = load_backdoor_key(path)
    assert back.s_star == bk.s_star and back.keys is None


# -- pipelines ----------------------------------------------------------

_RELU_NET = ReluNetwork([Layer(w=[[1.0]], b=[-0.5], act="relu")], input_dim=1)


def test_analytic_modulus_formula():
    net = ReluNetwork([Layer(w=[[3.0]], b=[0.0], act="relu")], input_dim=1)
    assert analytic_modulus(net, 8, 4) == 3.0 / 2**7 + 3.0 / 2**8 + 2.0**-4


def test_honest_pipeline_identity_tiny():
    L = _RELU_NET.lipschitz_bound().L
    tilde = honest_pipeline(_RELU_NET, k=8, m=8, obf=_IDENTITY)
    eps = analytic_modulus(_RELU_NET, 8, 8)
    xs = np.random.default_rng(16).random(1000)
    worst = max(
        abs(_RELU_NET.forward([x])[0] - tilde.forward([x])[0]) for x in xs
    )
    assert worst <= L / 2**8 + 2 * eps


def test_honest_pipeline_constant_net():
    net = ReluNetwork([Layer(w=[[0.0]], b=[0.3125], act="identity")], input_dim=1)
    tilde = honest_pipeline(net, k=6, m=3, obf=_IDENTITY)
    for x in np.random.default_rng(17).random(50):
        assert abs(tilde.forward([x])[0] - 0.3125) <= 2.0**-3


def test_honest_pipeline_rewrite_obfuscator():
    obf = Obfuscator(ObfuscatorConfig(kind="rewrite", lam=2, max_blowup=4.0, seed=11))
    L = _RELU_NET.lipschitz_bound().L
    tilde = honest_pipeline(_RELU_NET, k=8, m=8, obf=obf)
    eps = analytic_modulus(_RELU_NET, 8, 8)
    xs = np.random.default_rng(18).random(200)
    worst = max(
        abs(_RELU_NET.forward([x])[0] - tilde.forward([x])[0]) for x in xs
    )
    assert worst <= L / 2**8 + 2 * eps


_PIPE_PARAMS = BackdoorParams(
    n=1, k=16, k_prime=8, lambda1=6, lambda2=2, c=0.75, m_prime=8, sig_w=2
)


def test_backdoor_pipeline_activates():
    fprime, bk = backdoor_pipeline(_RELU_NET, _PIPE_PARAMS, _IDENTITY, random.Random(19))
    rng = random.Random(20)
    for _ in range(100):
        x = [rng.random()]
        xp = activate(x, bk, _PIPE_PARAMS)
        assert abs(xp[0] - x[0]) <= 2.0**-8
        assert abs(fprime.forward(xp)[0] - 0.75) <= 2.0**-8 + 1e-9


def test_backdoor_pipeline_nondyadic_target():
    params = _small_params(c=0.3, m_prime=6, k_prime=6, lambda1=4, lambda2=2)
    fprime, bk = backdoor_pipeline(_RELU_NET, params, _IDENTITY, random.Random(21))
    rng = random.Random(22)
    for _ in range(30):
        xp = activate([rng.random()], bk, params)
        assert abs(fprime.forward(xp)[0] - 0.3) <= 2.0**-6


def test_backdoor_pipeline_untriggered_matches_honest():
    # the trigger owns a 2^-lambda1 fraction of the cells, so lambda1
    # must be large enough that 100 random inputs miss it; with the
    # trigger cold both models decode the same honest replicas
    params = BackdoorParams(
        n=1, k=24, k_prime=4, lambda1=16, lambda2=4, c=0.75, m_prime=8, sig_w=2
    )
    fprime, _ = backdoor_pipeline(_RELU_NET, params, _IDENTITY, random.Random(23))
    tilde = honest_pipeline(_RELU_NET, k=24, m=8, obf=_IDENTITY)
    L = _RELU_NET.lipschitz_bound().L
    eps = analytic_modulus(_RELU_NET, 24, 8)
    bound = 2 * (L / 2**24 + 2 * eps)
    for x in np.random.default_rng(24).random(100):
        assert abs(fprime.forward([x])[0] - tilde.forward([x])[0]) <= bound


def test_backdoor_pipeline_lambda2_zero():
    params = BackdoorParams(
        n=1, k=12, k_prime=4, lambda1=8, lambda2=0, c=0.5, m_prime=4, sig_w=2
    )
    fprime, bk = backdoor_pipeline(_RELU_NET, params, _IDENTITY, random.Random(25))
    assert bk.keys is None
    rng = random.Random(26)
    for _ in range(30):
        xp = activate([rng.random()], bk, params)
        assert abs(fprime.forward(xp)[0] - 0.5) <= 2.0**-4 + 1e-9


def test_backdoor_pipeline_narrow_honest_precision():
    # honest outputs at m=4 get padded up to the malicious m'=8 width
    params = BackdoorParams(
        n=1, k=12, k_prime=4, lambda1=6, lambda2=2, c=0.75, m_prime=8, sig_w=2
    )
    fprime, bk = backdoor_pipeline(
        _RELU_NET, params, _IDENTITY, random.Random(27), m=4
    )
    rng = random.Random(28)
    for _ in range(20):
        xp = activate([rng.random()], bk, params)
        assert abs(fprime.forward(xp)[0] - 0.75) <= 2.0**-8 + 1e-9


def test_backdoor_pipeline_deterministic():
    params = _small_params()
    a_net, a_bk = backdoor_pipeline(_RELU_NET, params, _IDENTITY, random.Random(29))
    b_net, b_bk = backdoor_pipeline(_RELU_NET, params, _IDENTITY, random.Random(29))
    assert a_net.to_json() == b_net.to_json()
    assert a_bk.s_star == b_bk.s_star
    assert a_bk.keys.pk == b_bk.keys.pk


def test_backdoor_pipeline_rejects_dim_mismatch():
    net = ReluNetwork([Layer(w=[[1.0, 0.0]], b=[0.0], act="relu")], input_dim=2)
    with pytest.raises(DomainError):
        backdoor_pipeline(net, _PIPE_PARAMS, _IDENTITY, random.Random(30))
