"""Property-based checks with generated inputs."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from certkit.additive import AdditiveModel, PiecewiseLinear, center_model, product_sup_inf
from certkit.bounds import BoxSet, LinearSpec, interval_output_bounds, linear_output_bounds
from certkit.network import random_network
from certkit.transport import EmpiricalSample, w1_empirical_1d

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
samples = arrays(np.float64, st.integers(1, 40), elements=finite)


@given(samples, samples, samples)
@settings(max_examples=200, deadline=None)
def test_w1_is_a_metric(a, b, c):
    a, b, c = EmpiricalSample(a), EmpiricalSample(b), EmpiricalSample(c)
    ab = w1_empirical_1d(a, b)
    scale = 1e-12 * (1 + np.max(np.abs(np.concatenate([a.xs, b.xs, c.xs]))))
    assert ab >= 0
    assert abs(ab - w1_empirical_1d(b, a)) <= scale
    assert w1_empirical_1d(a, a) == 0.0
    assert ab <= w1_empirical_1d(a, c) + w1_empirical_1d(c, b) + scale


@given(samples, finite)
@settings(max_examples=100, deadline=None)
def test_w1_translation(a, shift):
    assert np.isclose(w1_empirical_1d(EmpiricalSample(a), EmpiricalSample(a + shift)), abs(shift),
                      rtol=1e-12, atol=1e-9)


@given(seed=st.integers(0, 2**32 - 1), radius=st.floats(1e-4, 3.0),
       point=st.lists(st.floats(0, 1), min_size=3, max_size=3))
@settings(max_examples=100, deadline=None)
def test_bounds_contain_any_point(seed, radius, point):
    rng = np.random.default_rng(seed)
    net = random_network((3, 8, 8, 2), rng)
    box = BoxSet.around(rng.normal(size=3), radius)
    spec = LinearSpec(rng.normal(size=2), float(rng.normal()))
    x = box.lo + np.asarray(point) * (box.hi - box.lo)
    v = float(spec.value(net, x))
    for cert in (linear_output_bounds(net, box, spec), interval_output_bounds(net, box, spec)):
        assert cert.lower <= v <= cert.upper


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=3),
       st.floats(-3, 3))
@settings(max_examples=100, deadline=None)
def test_centering_keeps_function_and_range(pairs, constant):
    comps = tuple((j, PiecewiseLinear([-1.0, 0.0, 1.0], [a, 0.0, b])) for j, (a, b) in enumerate(pairs))
    d = len(pairs)
    m = AdditiveModel(constant, comps, d, ((-1.0, 1.0),) * d)
    c = center_model(m)
    box = BoxSet(-np.ones(d), np.ones(d))
    x = np.random.default_rng(0).uniform(-1, 1, size=(50, d))
    assert np.allclose(c(x), m(x), atol=1e-12)
    assert np.allclose(product_sup_inf(c, box), product_sup_inf(m, box), atol=1e-12)
    assert c.centered
