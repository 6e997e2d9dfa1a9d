import numpy as np
import pytest

from trapgate.codec import FixedPointCodec, decode_bits, decode_vector, encode_scalar
from trapgate.errors import DomainError
from trapgate.netcompile import (
    FixedPointFormat,
    choose_format,
    compile_network,
    required_frac_bits,
    value_intervals,
)
from trapgate.relunet import dense_network


def run_circuit(circuit, net, k, m, x):
    """Decoded circuit output for real input x (per-coordinate m bits)."""
    codec = FixedPointCodec(k=k, n=net.input_dim)
    bits = codec.encode(x)
    out = circuit.evaluate(bits)
    return decode_vector(out, net.output_dim, m)


def exhaustive_inputs(nk):
    for v in range(1 << nk):
        yield [(v >> (nk - 1 - i)) & 1 for i in range(nk)]


def test_identity_network_is_lossless():
    net = dense_network([[[1.0]]], [[0.0]], ["identity"], 1)
    k = m = 4
    c = compile_network(net, k, m)
    assert c.validate() == []
    for bits in exhaustive_inputs(4):
        # decoded output must equal the decoded input exactly
        assert c.evaluate(bits) == bits


def test_constant_half_network():
    net = dense_network([[[0.0]]], [[0.5]], ["identity"], 1)
    c = compile_network(net, 4, 4)
    for bits in exhaustive_inputs(4):
        assert c.evaluate(bits) == [1, 0, 0, 0]


def test_relu_neuron_exhaustive_error_bound():
    net = dense_network([[[1.0]]], [[-0.5]], ["relu"], 1)
    k = m = 8
    c = compile_network(net, k, m)
    L = net.lipschitz_bound().L
    worst = 0.0
    for bits in exhaustive_inputs(8):
        x = decode_vector(bits, 1, 8)
        want = float(net.forward(x)[0])
        got = decode_vector(c.evaluate(bits), 1, 8)[0]
        worst = max(worst, abs(want - got))
    assert worst <= L / 2**k


def test_exactness_on_grid_with_full_precision():
    # fractional weights; m set to the exact precision so nothing truncates
    net = dense_network(
        [[[0.75], [-1.25]], [[0.5, 0.25]]],
        [[-0.25, 0.5], [0.375]],
        ["relu", "clamp01"],
        1,
    )
    k = 6
    m = required_frac_bits(net, k)
    c = compile_network(net, k, m)
    codec = FixedPointCodec(k=k, n=1)
    for v in range(1 << k):
        x = [v / 2**k]
        want = float(net.forward(x)[0])
        got = decode_vector(c.evaluate(codec.encode(x)), 1, m)[0]
        assert got == want, x


def test_negative_weights_and_biases():
    net = dense_network([[[-1.0]]], [[0.75]], ["identity"], 1)
    k = 5
    m = 5
    c = compile_network(net, k, m)
    codec = FixedPointCodec(k=k, n=1)
    for v in range(1 << k):
        x = v / 2**k
        want = min(max(0.75 - x, 0.0), 1.0)
        want_trunc = int(want * 2**m) / 2**m if want < 1 else 1 - 2**-m
        got = decode_vector(c.evaluate(codec.encode([x])), 1, m)[0]
        assert got == want_trunc, x


def test_output_clamps_above_one_to_top_cell():
    net = dense_network([[[1.0]]], [[0.75]], ["identity"], 1)
    m = 4
    c = compile_network(net, 4, m)
    codec = FixedPointCodec(k=4, n=1)
    got = decode_vector(c.evaluate(codec.encode([0.5])), 1, m)[0]
    assert got == 1 - 2**-m  # 1.25 clamps to the top output cell


def test_multi_coordinate_multi_output():
    net = dense_network(
        [[[0.5, 0.5], [1.0, -1.0]]],
        [[0.0, 0.5]],
        ["clamp01"],
        2,
    )
    k = 4
    m = required_frac_bits(net, k)
    c = compile_network(net, k, m)
    codec = FixedPointCodec(k=k, n=2)
    rng = np.random.default_rng(3)
    for _ in range(200):
        x = (rng.integers(0, 1 << k, size=2) / 2**k).tolist()
        # output stage applies the same top-cell clamp as the codec
        want = [decode_bits(encode_scalar(float(v), m)) for v in net.forward(x)]
        got = decode_vector(c.evaluate(codec.encode(x)), 2, m)
        assert got == want


def test_truncation_bound_random_inputs():
    rng = np.random.default_rng(11)
    net = dense_network(
        [((rng.integers(-4, 5, size=(4, 2))) / 2).tolist(),
         ((rng.integers(-4, 5, size=(1, 4))) / 4).tolist()],
        [(rng.integers(-8, 9, size=4) / 8).tolist(), [0.25]],
        ["relu", "clamp01"],
        2,
    )
    k = 12
    m = required_frac_bits(net, k)
    c = compile_network(net, k, m)
    L = net.lipschitz_bound().L
    codec = FixedPointCodec(k=k, n=2)
    for _ in range(300):
        x = (rng.integers(0, 2**30, size=2) / 2**30).tolist()
        want = float(net.forward(x)[0])
        got = decode_vector(c.evaluate(codec.encode(x)), 1, m)[0]
        assert abs(want - got) <= L / 2**k


def test_modulus_display_on_random_adjacent_pairs():
    rng = np.random.default_rng(23)
    net = dense_network(
        [((rng.integers(-4, 5, size=(3, 2))) / 4).tolist(),
         ((rng.integers(-4, 5, size=(1, 3))) / 4).tolist()],
        [(rng.integers(-4, 5, size=3) / 4).tolist(), [0.5]],
        ["relu", "identity"],
        2,
    )
    k = 10
    m = required_frac_bits(net, k)
    c = compile_network(net, k, m)
    L = net.lipschitz_bound().L
    codec = FixedPointCodec(k=k, n=2)

    def decoded(x):
        return decode_vector(c.evaluate(codec.encode(x)), 1, m)[0]

    for _ in range(200):
        x = rng.integers(0, 2**20, size=2) / 2**20
        delta = rng.integers(-(2**10), 2**10 + 1, size=2) / 2**20
        xp = np.clip(x + delta, 0.0, 1.0)
        d = float(np.max(np.abs(x - xp)))
        assert abs(decoded(x.tolist()) - decoded(xp.tolist())) <= L / 2 ** (k - 1) + L * d


def test_compile_is_deterministic():
    net = dense_network([[[0.5], [0.25]], [[1.0, 1.0]]],
                        [[0.0, 0.125], [0.0]],
                        ["relu", "clamp01"], 1)
    a = compile_network(net, 8, 8).to_json()
    b = compile_network(net, 8, 8).to_json()
    assert a == b


def test_format_errors():
    net = dense_network([[[4.0]]], [[0.0]], ["identity"], 1)
    with pytest.raises(DomainError) as exc:
        compile_network(net, 4, 4, fmt=FixedPointFormat(int_bits=1, frac_bits=8))
    assert "layer 0" in str(exc.value)
    with pytest.raises(DomainError):
        compile_network(net, 6, 4, fmt=FixedPointFormat(int_bits=8, frac_bits=4))


def test_choose_format_covers_intervals():
    net = dense_network([[[3.0], [-2.0]], [[1.0, 1.0]]],
                        [[1.5, -0.5], [0.25]],
                        ["relu", "identity"], 1)
    k = 8
    fmt = choose_format(net, k, 8)
    for pre in value_intervals(net, k):
        for lo, hi in pre:
            assert fmt.min_value <= lo and hi <= fmt.max_value


def test_gate_count_scales_with_format_square():
    # documented constant: gates <= c0 * parameter_count * (I + F)^2
    c0 = 40
    rng = np.random.default_rng(31)
    for _ in range(5):
        nin = int(rng.integers(1, 4))
        hidden = int(rng.integers(1, 6))
        w1 = (rng.integers(-8, 9, size=(hidden, nin)) / 4).tolist()
        w2 = (rng.integers(-8, 9, size=(1, hidden)) / 4).tolist()
        net = dense_network(
            [w1, w2],
            [(rng.integers(-8, 9, size=hidden) / 8).tolist(), [0.5]],
            ["relu", "clamp01"],
            nin,
        )
        k = 10
        m = required_frac_bits(net, k)
        fmt = choose_format(net, k, m)
        c = compile_network(net, k, m, fmt=fmt)
        params = sum(np.size(l.w) + np.size(l.b) for l in net.layers)
        assert c.gate_count <= c0 * params * (fmt.int_bits + fmt.frac_bits) ** 2
