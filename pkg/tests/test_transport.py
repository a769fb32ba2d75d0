import itertools
import math

import numpy as np
import pytest

from certkit.network import Network, random_network
from certkit.transport import (
    AssumptionGateError, EmpiricalSample, LinearPredictor, LossKind, empirical_risk,
    empirical_shift_check, load_sample, save_sample, shift_certificate, shift_flip_construction,
    sorted_coupling, w1_empirical_1d, w1_lp_oracle,
)


def S(xs, ys=None):
    return EmpiricalSample(xs, ys)


def brute_force_w1(a, b):
    """Equal sizes: the optimal coupling is a permutation (Birkhoff)."""
    return min(np.mean(np.abs(a - np.asarray(p))) for p in itertools.permutations(b))


# -- samples --------------------------------------------------------------

def test_sample_validation():
    with pytest.raises(ValueError):
        S([])
    with pytest.raises(ValueError):
        S([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        S([1.0], [0.0])
    with pytest.raises(ValueError):
        S([np.nan])


def test_csv_roundtrip(tmp_path, rng):
    s = S(rng.normal(size=7), rng.choice([-1.0, 1.0], 7))
    save_sample(s, tmp_path / "a.csv")
    back = load_sample(tmp_path / "a.csv")
    np.testing.assert_array_equal(back.xs, s.xs)
    np.testing.assert_array_equal(back.ys, s.ys)
    u = S(rng.normal(size=3))
    save_sample(u, tmp_path / "b.csv")
    assert load_sample(tmp_path / "b.csv").ys is None


@pytest.mark.parametrize("text", ["z\n1\n", "x,y\n1\n", "x\n", "x\nabc\n", "x,y\n1,0\n"])
def test_csv_errors(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ValueError):
        load_sample(path)


# -- W1 -------------------------------------------------------------------

def test_w1_examples():
    assert w1_empirical_1d(S([3.0, 1.0, 2.0]), S([1.0, 2.0, 3.0])) == 0.0
    assert w1_empirical_1d(S([0.0, 1.0]), S([0.5, 1.5])) == 0.5
    assert w1_empirical_1d(S([0.0]), S([0.0, 1.0])) == 0.5
    assert w1_lp_oracle(S([0.0]), S([0.0, 1.0])) == pytest.approx(0.5, abs=1e-12)
    assert w1_lp_oracle(S([0.0, 1.0]), S([0.5, 1.5])) == pytest.approx(0.5, abs=1e-12)


def test_lp_oracle_point_masses():
    for rho in (0.0, 0.3, 2.5):
        assert w1_lp_oracle(S([0.0]), S([rho])) == pytest.approx(rho, abs=1e-12)
    xs = np.array([0.3, -1.0, 2.0])
    assert w1_lp_oracle(S(xs), S(xs)) == pytest.approx(0.0, abs=1e-12)


def test_lp_oracle_size_cap():
    with pytest.raises(ValueError):
        w1_lp_oracle(S(np.zeros(65)), S(np.zeros(3)))


def test_sorting_matches_permutation_search(rng):
    for n in range(1, 7):
        for _ in range(5):
            a, b = rng.normal(size=n), rng.normal(size=n)
            assert w1_empirical_1d(S(a), S(b)) == pytest.approx(brute_force_w1(a, b), abs=1e-12)


def test_unequal_sizes_by_replication(rng):
    """n vs m points equals the nm vs nm problem with each point repeated."""
    for _ in range(50):
        n, m = rng.integers(1, 12, size=2)
        a, b = rng.normal(size=n), rng.normal(size=m)
        rep = w1_empirical_1d(S(np.repeat(a, m)), S(np.repeat(b, n)))
        assert w1_empirical_1d(S(a), S(b)) == pytest.approx(rep, abs=1e-12)


def test_sorting_matches_lp(rng):
    diffs = []
    for _ in range(100):
        a, b = rng.normal(size=20), rng.normal(loc=0.3, size=20)
        diffs.append(abs(w1_empirical_1d(S(a), S(b)) - w1_lp_oracle(S(a), S(b))))
    assert max(diffs) <= 1e-9


def test_w1_translation_exact(rng):
    a = rng.normal(size=50)
    assert w1_empirical_1d(S(a), S(a + 0.7)) == pytest.approx(0.7, abs=1e-12)


def test_w1_metric_axioms(rng):
    for _ in range(50):
        a, b, c = (S(rng.normal(size=rng.integers(1, 30))) for _ in range(3))
        ab, ba = w1_empirical_1d(a, b), w1_empirical_1d(b, a)
        assert ab >= 0 and ab == pytest.approx(ba, abs=1e-12)
        assert ab <= w1_empirical_1d(a, c) + w1_empirical_1d(c, b) + 1e-9


# -- losses and risks -----------------------------------------------------

def test_losses():
    assert LossKind.HINGE.lipschitz_const == 1.0
    assert math.isinf(LossKind.ZERO_ONE.lipschitz_const)
    np.testing.assert_array_equal(LossKind.HINGE([0.0, 2.0, -1.0], [1, 1, 1]), [1.0, 0.0, 2.0])
    np.testing.assert_array_equal(LossKind.ZERO_ONE([0.0, 0.0, -1.0], [1, -1, -1]), [0.0, 1.0, 0.0])


def test_empirical_risk(rng):
    ys = rng.choice([-1.0, 1.0], 30)
    assert empirical_risk(LinearPredictor(0.0), S(rng.normal(size=30), ys), LossKind.HINGE) == 1.0
    xs = np.array([-3.0, -1.5, 1.0, 2.0])
    sep = S(xs, np.sign(xs))
    assert empirical_risk(LinearPredictor(1.0), sep, LossKind.HINGE) == 0.0
    with pytest.raises(ValueError):
        empirical_risk(LinearPredictor(1.0), S(xs), LossKind.HINGE)


def test_network_predictor(rng):
    net = Network.from_arrays([[[2.0]]], [[0.5]])
    s = S([0.0, 1.0], [1.0, -1.0])
    assert empirical_risk(net, s, LossKind.HINGE) == empirical_risk(LinearPredictor(2.0, 0.5), s, LossKind.HINGE)
    with pytest.raises(ValueError):
        empirical_risk(random_network((2, 3, 1), rng), s, LossKind.HINGE)


# -- certificates ---------------------------------------------------------

def test_certificate_identity(rng):
    for _ in range(100):
        r, rho, ll, lf = rng.uniform(0, 2, 4)
        c = shift_certificate(r, rho, ll, lf, True)
        assert c.certified_shift_risk == c.train_risk + c.rho * c.sensitivity
        assert c.sensitivity == ll * lf and c.stamped


def test_certificate_zero_rho():
    assert shift_certificate(0.37, 0.0, 1.0, 5.0, True).certified_shift_risk == 0.37


def test_certificate_linear_hinge():
    c = shift_certificate(0.2, 0.1, LossKind.HINGE.lipschitz_const, abs(-3.0), True)
    assert c.certified_shift_risk == pytest.approx(0.2 + 0.1 * 3.0)


def test_certificate_errors():
    with pytest.raises(ValueError):
        shift_certificate(0.1, -0.1, 1, 1, True)
    with pytest.raises(ValueError):
        shift_certificate(np.nan, 0.1, 1, 1, True)
    with pytest.raises(ValueError):
        shift_certificate(0.1, 0.1, -1, 1, True)


def test_certificate_gate():
    c = shift_certificate(0.1, 0.1, 1.0, 1.0, False)
    assert c.vacuous and not c.stamped
    with pytest.raises(AssumptionGateError):
        c.require_stamped()
    rec = c.to_record()
    assert "covariate_shift_assumed=false" in rec and "stamped=false" in rec
    zero_one = shift_certificate(0.1, 0.1, LossKind.ZERO_ONE.lipschitz_const, 1.0, True)
    assert zero_one.vacuous


def test_shift_check_zero_shift(rng):
    xs = rng.normal(size=40)
    train = S(xs, rng.choice([-1.0, 1.0], 40))
    f = LinearPredictor(0.8, -0.1)
    lhs, rhs = empirical_shift_check(f, train, S(xs), LossKind.HINGE, f.lipschitz)
    risk = empirical_risk(f, train, LossKind.HINGE)
    assert lhs == pytest.approx(risk, abs=1e-15) and rhs == risk


def test_shift_check_translation(rng):
    xs = rng.normal(size=40)
    train = S(xs, rng.choice([-1.0, 1.0], 40))
    f = LinearPredictor(-1.3, 0.4)
    target = S(xs + 0.25)
    assert w1_empirical_1d(train, target) == pytest.approx(0.25, abs=1e-12)
    lhs, rhs = empirical_shift_check(f, train, target, LossKind.HINGE, f.lipschitz)
    assert lhs <= rhs + 1e-9


def test_shift_check_errors(rng):
    train = S(rng.normal(size=5), np.ones(5))
    with pytest.raises(ValueError):
        empirical_shift_check(LinearPredictor(1.0), train, S(np.zeros(4)), LossKind.HINGE, 1.0)
    with pytest.raises(ValueError):
        empirical_shift_check(LinearPredictor(1.0), S(np.zeros(5)), S(np.zeros(5)), LossKind.HINGE, 1.0)


def test_sorted_coupling_keeps_labels(rng):
    train = S([3.0, 1.0, 2.0], [1.0, -1.0, 1.0])
    moved = sorted_coupling(train, S([10.0, 30.0, 20.0]))
    np.testing.assert_array_equal(moved.xs, [30.0, 10.0, 20.0])
    np.testing.assert_array_equal(moved.ys, train.ys)
    assert np.mean(np.abs(moved.xs - train.xs)) == w1_empirical_1d(train, moved)


# -- shift flip -------------------------------------------------------------

@pytest.mark.parametrize("rho", [0.01, 0.5, 3.0])
def test_shift_flip(rho):
    sc = shift_flip_construction(rho, 100, seed=1)
    assert sc.risk_train == 0.0 and sc.risk_target == 1.0
    assert sc.w1 <= rho + 1e-9
    assert not sc.certificate.covariate_shift_assumed
    with pytest.raises(AssumptionGateError):
        sc.certificate.require_stamped()
    assert sc.risk_target > sc.certificate.certified_shift_risk  # the bound would be false


def test_shift_flip_validation():
    with pytest.raises(ValueError):
        shift_flip_construction(0.0, 10)
    with pytest.raises(ValueError):
        shift_flip_construction(0.1, 0)
