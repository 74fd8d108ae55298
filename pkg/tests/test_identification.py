import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from popmiss.errors import NumericError
from popmiss.identification import (
    UnitNuisances,
    cond_inv_gamma_given_v,
    gamma_inv,
    gamma_inv_capped,
    q_full_under_mar,
)

from oracles import bernoulli_q, canonical_q, k2_gamma_inv, loglinear_cells


def test_q_full_known_column():
    q = q_full_under_mar([0.5, 0.3, 0.2], [0.1, 0.2, 0.4])
    np.testing.assert_allclose(q, np.array([0.05, 0.06, 0.08]) / 0.19, atol=1e-12)
    np.testing.assert_allclose(q, [0.2632, 0.3158, 0.4211], atol=5e-5)


def test_q_full_constant_lambda_is_identity():
    q_v = np.array([0.2, 0.5, 0.3])
    lam = np.full((3, 4), 0.25)
    np.testing.assert_allclose(q_full_under_mar(q_v, lam), np.repeat(q_v[:, None], 4, axis=1))


@pytest.mark.parametrize("q, expected", [
    ([1 / 3, 1 / 3, 1 / 3], 4 / 3),
    ([0.25, 0.25, 0.5], 1.125),
    ([1 / 7] * 7, 8 / 7),
])
def test_gamma_inv_examples(q, expected):
    assert gamma_inv(np.array(q)) == pytest.approx(expected, abs=1e-12)


def test_gamma_inv_independent_lists():
    # two independent lists with p = 0.5: P(Y != 0) = 3/4
    q = bernoulli_q([0.5, 0.5])
    np.testing.assert_allclose(q, [1 / 3, 1 / 3, 1 / 3])
    assert gamma_inv(q) == pytest.approx(4 / 3, abs=1e-12)


def test_gamma_inv_nonfinite_raises():
    with pytest.raises(NumericError):
        gamma_inv(np.array([0.5, 0.5, 0.0]))


def test_gamma_cap_counts():
    q = np.array([[0.49, 0.49, 0.02], [1 / 3, 1 / 3, 1 / 3]])
    out, n = gamma_inv_capped(q, cap=5.0)
    assert n == 1
    assert out[0] == pytest.approx(5.0)
    assert out[1] == pytest.approx(4 / 3)


def test_cond_mean_constant_gamma():
    # same q at every x, so gamma_inv is constant at 4/3
    q_v = np.array([1 / 3, 1 / 3, 1 / 3])
    lam = np.full((3, 5), 0.2)
    m, g, q_x = cond_inv_gamma_given_v(q_v, lam)
    np.testing.assert_allclose(g, 4 / 3)
    assert m == pytest.approx(1 / 3)
    np.testing.assert_allclose(q_x, 0.2)


def test_cond_mean_two_level_example():
    # x uniform on two levels, gamma_inv = (1.5, 2.5): m = 0.5*0.5 + 0.5*1.5
    # q = (a, a, 1 - 2a) with a^2 / (1 - 2a) = g, i.e. a = sqrt(g^2 + g) - g
    q0, q1 = (np.array([a, a, 1 - 2 * a]) for a in (np.sqrt(g * g + g) - g for g in (0.5, 1.5)))
    assert k2_gamma_inv(q0) == pytest.approx(1.5)
    assert k2_gamma_inv(q1) == pytest.approx(2.5)
    # lambda_x(y) proportional to q_y(x) P(x), so q_y(v) = average of the two
    q_v = 0.5 * (q0 + q1)
    lam = np.column_stack([0.5 * q0, 0.5 * q1]) / q_v[:, None]
    m, g, q_x = cond_inv_gamma_given_v(q_v, lam)
    np.testing.assert_allclose(g, [1.5, 2.5])
    np.testing.assert_allclose(q_x, [0.5, 0.5])
    assert m == pytest.approx(1.0)


simplex3 = arrays(np.float64, 3, elements=st.floats(1e-3, 1.0)).map(lambda a: a / a.sum())


@given(simplex3)
def test_k2_closed_form_property(q):
    assert gamma_inv(q) == pytest.approx(k2_gamma_inv(q), rel=1e-12)


@settings(max_examples=60)
@given(
    arrays(np.float64, 3, elements=st.floats(-2.0, 2.0)),
    arrays(np.float64, (3, 3), elements=st.floats(-1.5, 1.5)),
)
def test_nhoi_recovers_capture_probability(main, pair):
    cells = loglinear_cells(main, pair)
    truth = 1.0 / (1.0 - cells[(0, 0, 0)])
    assert gamma_inv(canonical_q(cells)) == pytest.approx(truth, rel=1e-10)


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1), st.integers(2, 5))
def test_q_full_columns_are_distributions(seed, K):
    rng = np.random.default_rng(seed)
    P, L = 2**K - 1, 4
    q_v = rng.dirichlet(np.ones(P), size=6)
    lam = rng.dirichlet(np.ones(L), size=(6, P))
    q = q_full_under_mar(q_v, lam)
    np.testing.assert_allclose(q.sum(axis=-2), 1.0, atol=1e-12)
    # the implied x-marginal reproduces q_v when mixed back
    _, _, q_x = cond_inv_gamma_given_v(q_v, lam)
    np.testing.assert_allclose(np.sum(q * q_x[:, None, :], axis=-1), q_v, atol=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1))
def test_gamma_inv_at_least_one(seed):
    rng = np.random.default_rng(seed)
    q = rng.dirichlet(np.ones(7), size=20) * 0.99 + 0.01 / 7
    assert np.all(gamma_inv(q) >= 1.0)


def test_large_K_does_not_underflow():
    K = 12
    P = 2**K - 1
    q = np.full(P, 1.0 / P)
    # signed log sum is log(1/P) since the parity signs sum to one
    assert gamma_inv(q) == pytest.approx(1.0 + 1.0 / P, rel=1e-10)


def test_unit_nuisances_take_and_assemble(rng):
    q_v = rng.dirichlet(np.ones(3), size=10)
    lam = rng.dirichlet(np.ones(4), size=(10, 3))
    u = UnitNuisances.from_components(q_v, lam, 1.0)
    idx_a, idx_b = np.arange(0, 10, 2), np.arange(1, 10, 2)
    back = UnitNuisances.assemble([(idx_a, u.take(idx_a)), (idx_b, u.take(idx_b))], 10)
    for name in ("q_v", "lam", "pi", "q_vx", "gamma_inv", "q_x", "m_v"):
        assert np.array_equal(getattr(back, name), getattr(u, name))
    assert np.all(u.pi == 1.0)
