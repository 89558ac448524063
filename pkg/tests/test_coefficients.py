import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qbsde.coefficients import (
    Coefficient,
    GridSpec,
    GridTooSmallError,
    GrowthBound,
    SampleSpec,
    build_ladder,
    coefficient_from_name,
    inf_convolve,
    kappa_eval,
    lower_truncate,
    parse_call,
    q_trunc,
    verify_ladder,
    verify_structure,
)

SMALL_GRID = GridSpec(y_radius=6.0, z_radius=6.0, points=601)


def test_kappa_examples():
    assert kappa_eval(0.0, 0.0, 2.0, GrowthBound(0, 0, 1)) == 2.0
    assert kappa_eval(0.0, -3.0, 0.0, GrowthBound(1, 2, 1)) == 7.0
    assert kappa_eval(0.0, 0.0, 1.0, GrowthBound(0, 0, 2)) == 1.0
    assert kappa_eval(0.0, 0.0, 0.0, GrowthBound(-1, 0, 1)) == 1.0


def test_q_trunc_examples():
    assert q_trunc(1.0, 2) == 0.5
    assert q_trunc(3.0, 2) == 4.0
    assert q_trunc(-3.0, 2) == 4.0
    for n in (0, 1, 5):
        assert q_trunc(0.0, n) == 0.0
    np.testing.assert_allclose(q_trunc(np.array([[3.0, 4.0]]), 2, axis=-1), [2 * 5 - 2])
    with pytest.raises(ValueError):
        q_trunc(1.0, -1)


@given(st.floats(-50, 50), st.floats(0, 20), st.floats(0, 20))
def test_q_trunc_increases_to_q(z, n, extra):
    a, b = q_trunc(z, n), q_trunc(z, n + extra)
    assert a <= b + 1e-12 <= 0.5 * z * z + 2e-12


@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(0.1, 10))
def test_q_trunc_lipschitz(z1, z2, n):
    assert abs(q_trunc(z1, n) - q_trunc(z2, n)) <= n * abs(z1 - z2) + 1e-9


def test_inf_convolution_of_q_is_truncation():
    q = coefficient_from_name("q")
    z = np.linspace(-5, 5, 201)
    for n in (0.5, 1, 2, 4):
        analytic = inf_convolve(q, n)
        numeric = inf_convolve(_opaque(q), n, SMALL_GRID)
        np.testing.assert_allclose(analytic(0.0, np.full_like(z, 0.0), z), q_trunc(z, n), atol=1e-15)
        np.testing.assert_allclose(numeric(0.0, np.full_like(z, 0.3), z), q_trunc(z, n), atol=1e-9 + 1e-4)


def test_numeric_inf_convolution_on_grid_points_is_exact():
    q = coefficient_from_name("q")
    grid = GridSpec(y_radius=4.0, z_radius=4.0, points=801)
    num = inf_convolve(_opaque(q), 2.0, grid)
    z = np.linspace(-3, 3, 61)
    np.testing.assert_allclose(num(0.0, np.full_like(z, 0.0), z), q_trunc(z, 2.0), atol=1e-9)


def _opaque(g):
    """Same evaluator without the closed-form tag or Lipschitz data."""
    return Coefficient(g.func, g.growth, None, None, g.dim, g.time_dependent, g.name + "-opaque")


def test_lipschitz_driver_is_its_own_regularization():
    abs_z = Coefficient(lambda t, y, z: np.abs(z[..., 0]), GrowthBound(0.5, 0, 1), lipschitz=1.0, name="abs")
    assert inf_convolve(abs_z, 1.0) is abs_z
    num = inf_convolve(_opaque(abs_z), 1.0, SMALL_GRID)
    z = np.linspace(-4, 4, 41)
    np.testing.assert_allclose(num(0.0, np.full_like(z, 0.5), z), np.abs(z), atol=1e-12)


def test_unbounded_below_is_rejected():
    with pytest.raises(GridTooSmallError):
        inf_convolve(_opaque(coefficient_from_name("neg-q")), 1.0, SMALL_GRID)(0.0, 0.0, 1.0)


def test_query_outside_grid_is_rejected():
    num = inf_convolve(_opaque(coefficient_from_name("q")), 1.0, GridSpec(2.0, 2.0, 201))
    with pytest.raises(GridTooSmallError):
        num(0.0, 0.0, 5.0)


def test_inf_convolution_is_monotone_in_the_driver():
    q = _opaque(coefficient_from_name("q"))
    sq = _opaque(coefficient_from_name("sin-plus-q"))
    lower = Coefficient(lambda t, y, z: sq.func(t, y, z) - 1.0, sq.growth, name="shifted")
    y = np.linspace(-2, 2, 9)[:, None]
    z = np.linspace(-2, 2, 9)[None, :]
    a = inf_convolve(lower, 2.0, SMALL_GRID)(0.0, y, z)
    b = inf_convolve(sq, 2.0, SMALL_GRID)(0.0, y, z)
    assert np.all(a <= b + 1e-12)
    assert np.all(inf_convolve(q, 2.0, SMALL_GRID)(0.0, y, z) <= q(0.0, y, z) + 1e-12)


def test_lower_truncation_examples():
    q = coefficient_from_name("q")
    assert lower_truncate(q, 1.0)(0.0, 0.0, 3.0) == q(0.0, 0.0, 3.0)
    neg = lower_truncate(coefficient_from_name("neg-q"), 1.0)
    z = np.linspace(-4, 4, 17)
    np.testing.assert_allclose(neg(0.0, np.full_like(z, 0.0), z), -q_trunc(z, 1.0), atol=1e-15)
    bounded = Coefficient(lambda t, y, z: np.sin(y) + np.cos(z[..., 0]), GrowthBound(2, 0, 1), lipschitz=1.0)
    trunc = lower_truncate(bounded, 1.0, SMALL_GRID)
    yy = np.linspace(-2, 2, 5)[:, None]
    zz = np.linspace(-2, 2, 5)[None, :]
    np.testing.assert_allclose(trunc(0.0, yy, zz), bounded(0.0, yy, zz), atol=1e-3)


def test_lower_truncation_bounds():
    g = coefficient_from_name("neg-q")
    z = np.linspace(-5, 5, 41)
    prev = None
    for p in (0.5, 1, 2, 4):
        gp = lower_truncate(g, p)(0.0, np.full_like(z, 0.0), z)
        assert np.all(gp >= g(0.0, np.full_like(z, 0.0), z) - 1e-12)
        assert np.all(gp >= -q_trunc(z, p) - 1e-12)
        if prev is not None:
            assert np.all(gp <= prev + 1e-12)
        prev = gp


def test_structure_examples():
    assert verify_structure(coefficient_from_name("q")).passed
    twice = Coefficient(lambda t, y, z: np.sum(z * z, axis=-1), GrowthBound(0, 0, 1), name="2q")
    rep = verify_structure(twice)
    assert not rep.passed and rep.worst_excess > 0 and rep.worst_point is not None
    assert verify_structure(coefficient_from_name("sin-plus-q")).passed
    assert verify_structure(coefficient_from_name("lq(1, 0.5, 2)"), SampleSpec(random_count=200)).passed


def test_ladder_values_at_three():
    ladder = build_ladder(coefficient_from_name("q"), [1, 2, 4, 8])
    vals = [float(g(0.0, 0.0, 3.0)) for g in ladder.members]
    assert vals == [2.5, 4.0, 4.5, 4.5]
    assert verify_ladder(ladder).passed


def test_constant_ladder():
    ladder = build_ladder(coefficient_from_name("constant(2)"), [1, 2, 4])
    rep = verify_ladder(ladder)
    assert rep.passed and all(r == 0 for r in rep.residuals)


def test_moving_point_residuals_shrink():
    g = coefficient_from_name("sin-plus-q")
    levels = [1, 2, 4, 8, 16]
    grid = GridSpec(y_radius=8.0, z_radius=8.0, points=1601)
    rep = verify_ladder(build_ladder(g, levels, grid))
    assert rep.passed
    assert rep.residuals[-1] < rep.residuals[0]
    assert rep.residuals[-1] < 0.1


def test_ladder_rejects_unsorted_levels():
    with pytest.raises(ValueError):
        build_ladder(coefficient_from_name("q"), [2, 1])


def test_registry_parsing():
    assert parse_call("lq(1, 0.5, 2)") == ("lq", [1.0, 0.5, 2.0])
    assert parse_call("q") == ("q", [])
    g = coefficient_from_name("q-delta(2)")
    assert g(0.0, 0.0, 1.0) == 1.0
    with pytest.raises(KeyError):
        coefficient_from_name("cubic")
    with pytest.raises(ValueError):
        coefficient_from_name("lq(1)")
    with pytest.raises(ValueError):
        parse_call("q(a)")


def test_vector_z_uses_euclidean_norm():
    g = coefficient_from_name("q", dim=2)
    assert g(0.0, 0.0, np.array([3.0, 4.0])) == 12.5
    g2 = inf_convolve(g, 2.0)
    # l1 penalty: coordinatewise truncation
    assert g2(0.0, 0.0, np.array([3.0, 4.0])) == pytest.approx(q_trunc(3.0, 2) + q_trunc(4.0, 2))
