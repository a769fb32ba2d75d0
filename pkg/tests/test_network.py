import numpy as np
import pytest

from certkit.bounds import BoxSet
from certkit.complete import enumerate_pieces_1d, make_sawtooth, tent_iterate
from certkit.network import (
    Activation, AffineLayer, DimensionMismatchError, Network, NetworkFormatError, NormKind,
    NonFiniteWeightError, activation_pattern, evaluate, format_network, global_lipschitz_upper,
    load_network, param_count, parse_network, preactivations, random_network, save_network,
)


def relu_net():
    return Network((AffineLayer([[1.0]], [0.0], Activation.RELU),
                    AffineLayer([[1.0]], [0.0], Activation.IDENTITY)))


def test_load_single_identity_layer(tmp_path):
    path = tmp_path / "f.net"
    path.write_text("relu-net v1\ndims 1 1\nlayer 1 identity\n2.0\n0.0\n")
    net = load_network(path)
    assert net.input_dim == 1 and net.output_dim == 1
    assert evaluate(net, [3.0])[0] == 6.0
    assert evaluate(net, [-1.5])[0] == -3.0


def test_load_classifier_shape_roundtrip(tmp_path, rng):
    net = random_network((50, 200, 10), rng)
    save_network(net, tmp_path / "c.net")
    back = load_network(tmp_path / "c.net")
    assert back.input_dim == 50 and back.output_dim == 10
    assert back.dims == (50, 200, 10)
    x = rng.normal(size=(20, 50))
    np.testing.assert_array_equal(evaluate(back, x), evaluate(net, x))


def test_dimension_chain_broken():
    text = ("relu-net v1\ndims 1 2 1\nlayer 1 relu\n1\n1\n0 0\n"
            "layer 2 identity\n1 1 1\n0\n")
    with pytest.raises(DimensionMismatchError):
        parse_network(text)
    with pytest.raises(DimensionMismatchError):
        Network((AffineLayer(np.ones((2, 1)), np.zeros(2)),
                 AffineLayer(np.ones((1, 3)), np.zeros(1), Activation.IDENTITY)))


@pytest.mark.parametrize("text", [
    "",
    "relu-net v2\ndims 1 1\nlayer 1 identity\n1\n0\n",
    "relu-net v1\ndims 1 x\nlayer 1 identity\n1\n0\n",
    "relu-net v1\ndims 1 1\nlayer 1 sigmoid\n1\n0\n",
    "relu-net v1\ndims 1 1\nlayer 2 identity\n1\n0\n",
    "relu-net v1\ndims 1 1\nlayer 1 identity\n1\n",
    "relu-net v1\ndims 1 1\nlayer 1 identity\nabc\n0\n",
    "relu-net v1\ndims 1 1\nlayer 1 identity\n1\n0\nextra\n",
])
def test_malformed_files(text):
    with pytest.raises(NetworkFormatError):
        parse_network(text)


def test_non_finite_weights():
    with pytest.raises(NonFiniteWeightError):
        parse_network("relu-net v1\ndims 1 1\nlayer 1 identity\nnan\n0\n")
    with pytest.raises(NonFiniteWeightError):
        AffineLayer([[np.inf]], [0.0])


def test_output_layer_must_be_affine():
    with pytest.raises(ValueError):
        Network((AffineLayer([[1.0]], [0.0], Activation.RELU),))


def test_bias_length_checked():
    with pytest.raises(DimensionMismatchError):
        AffineLayer(np.ones((2, 2)), np.zeros(3))


def test_format_is_exact_roundtrip(rng):
    net = random_network((3, 5, 2), rng)
    back = parse_network(format_network(net))
    for a, b in zip(net.layers, back.layers):
        np.testing.assert_array_equal(a.weight, b.weight)
        np.testing.assert_array_equal(a.bias, b.bias)
        assert a.activation is b.activation


def test_scientific_notation_accepted():
    net = parse_network("relu-net v1\ndims 1 1\nlayer 1 identity\n1.5e-3\n-2E2\n")
    assert evaluate(net, [1000.0])[0] == pytest.approx(1.5 - 200.0)


def test_evaluate_relu():
    net = relu_net()
    assert evaluate(net, [-1.0])[0] == 0.0
    assert evaluate(net, [2.0])[0] == 2.0


def test_evaluate_dimension_mismatch(rng):
    net = random_network((3, 4, 2), rng)
    with pytest.raises(DimensionMismatchError):
        evaluate(net, [1.0, 2.0])


def test_evaluate_batch_matches_pointwise(rng):
    net = random_network((4, 8, 8, 3), rng)
    xs = rng.normal(size=(50, 4))
    batch = evaluate(net, xs)
    for x, row in zip(xs, batch):
        np.testing.assert_allclose(evaluate(net, x), row, rtol=1e-13, atol=1e-15)


def test_sawtooth_matches_tent_iterate_on_grid():
    for k in (1, 3, 10):
        xs = np.linspace(0.0, 1.0, 10_000)
        got = evaluate(make_sawtooth(k), xs[:, None])[:, 0]
        np.testing.assert_allclose(got, tent_iterate(xs, k), atol=1e-9, rtol=0)


def test_activation_pattern_basic():
    net = relu_net()
    assert activation_pattern(net, [1.0]).tolist() == [True]
    assert activation_pattern(net, [-1.0]).tolist() == [False]
    assert activation_pattern(net, [0.0]).tolist() == [False]


def test_activation_pattern_length_and_no_relu(rng):
    net = random_network((3, 5, 7, 2), rng)
    assert activation_pattern(net, rng.normal(size=3)).shape == (12,)
    assert activation_pattern(net, rng.normal(size=(4, 3))).shape == (4, 12)
    affine = Network((AffineLayer(np.ones((2, 3)), np.zeros(2), Activation.IDENTITY),))
    assert activation_pattern(affine, np.zeros(3)).shape == (0,)
    assert activation_pattern(affine, np.zeros((5, 3))).shape == (5, 0)


def test_activation_pattern_constant_on_pieces(rng):
    for _ in range(10):
        net = random_network((1, 8, 8, 1), rng)
        pieces = enumerate_pieces_1d(net, BoxSet([-2.0], [2.0]), merge=False)
        for a, b in zip(pieces.knots[:-1], pieces.knots[1:]):
            ts = np.linspace(a, b, 7)[1:-1]
            pats = activation_pattern(net, ts[:, None])
            assert (pats == pats[0]).all()


def test_piecewise_affine_between_equal_patterns(rng):
    net = random_network((3, 10, 10, 2), rng)
    checked = 0
    for _ in range(2000):
        x = rng.normal(size=3)
        y = x + rng.normal(scale=1e-3, size=3)
        px, py = activation_pattern(net, x), activation_pattern(net, y)
        pm = activation_pattern(net, 0.5 * (x + y))
        if (px == py).all() and (pm == px).all():
            mid = evaluate(net, 0.5 * (x + y))
            np.testing.assert_allclose(mid, 0.5 * (evaluate(net, x) + evaluate(net, y)), atol=1e-9, rtol=0)
            checked += 1
    assert checked > 100


def test_preactivations_last_is_output(rng):
    net = random_network((3, 4, 2), rng)
    x = rng.normal(size=3)
    pre = preactivations(net, x)
    assert len(pre) == 2
    np.testing.assert_array_equal(pre[-1], evaluate(net, x))


def test_param_count():
    rng = np.random.default_rng(0)
    assert param_count(random_network((50, 200, 10), rng)) == 12000
    assert param_count(Network.from_arrays([[[1.0]]], [[0.0]])) == 1
    net = random_network((4, 8, 8, 2), rng)
    # independent sum over the declared widths: 4*8 + 8*8 + 8*2
    assert param_count(net) == sum(a * b for a, b in zip(net.dims[:-1], net.dims[1:])) == 112


def test_lipschitz_scalar_affine():
    net = Network.from_arrays([[[3.0]]], [[1.0]])
    for norm in NormKind:
        assert global_lipschitz_upper(net, norm) == 3.0
    ident = Network((AffineLayer(np.eye(1), np.zeros(1), Activation.IDENTITY),))
    assert global_lipschitz_upper(ident) == 1.0


@pytest.mark.parametrize("norm,ord_", [(NormKind.L1, 1), (NormKind.L2, 2), (NormKind.LINF, np.inf)])
def test_lipschitz_dominates_sampled_slopes(norm, ord_):
    rng = np.random.default_rng(7)
    net = random_network((4, 16, 3), rng)
    bound = global_lipschitz_upper(net, norm)
    x = rng.normal(size=(100_000, 4))
    y = x + rng.normal(scale=rng.choice([1e-3, 1e-1, 1.0], size=(100_000, 1)), size=(100_000, 4))
    num = np.linalg.norm(evaluate(net, x) - evaluate(net, y), axis=1)
    den = np.linalg.norm(x - y, ord=ord_, axis=1)
    assert np.all(num <= bound * den + 1e-9)
    assert np.max(num / den) > 0.05 * bound  # not vacuous
