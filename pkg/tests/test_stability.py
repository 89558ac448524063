import numpy as np
import pytest

from qbsde.coefficients import Coefficient, GrowthBound, coefficient_from_name
from qbsde.lattice import LatticeError, build_model, driver
from qbsde.solver import BSDESpec, solve_backward
from qbsde.stability import (
    MembershipFailure,
    coefficient_limit_check,
    convergence_report,
    qv_estimates_check,
    run_ladder,
    scheme_tolerance,
    tail_point,
)
from qbsde.transforms import DominationError, StructureParams

LEVELS = (1, 2, 4, 8, 16, 32, 64)


def _linear_q(lam=3.0, steps=12):
    m = build_model(1.0, steps)
    return BSDESpec(m, coefficient_from_name("q"), lam * driver(m).terminal)


def _truncated_rate(n, lam):
    # q_n evaluated at the constant control z = lam
    return 0.5 * lam * lam if n >= lam else n * lam - 0.5 * n * n


def test_ladder_matches_linear_closed_form():
    lam = 3.0
    spec = _linear_q(lam)
    m = spec.model
    W = driver(m)
    run = run_ladder(spec, LEVELS)
    for n, sol in zip(LEVELS, run.solutions):
        for k in range(m.steps + 1):
            exact = lam * W.values[k] + _truncated_rate(n, lam) * (1.0 - m.time(k))
            np.testing.assert_allclose(sol.Y.values[k], exact, atol=1e-12)
    assert run.monotone


def test_tail_is_exact_beyond_the_control_bound():
    run = run_ladder(_linear_q(), LEVELS)
    conv = convergence_report(run)
    assert conv.tail_point == 3
    assert conv.tail_exact
    assert conv.nonincreasing_tail
    sups = [p.sup for p in conv.pairs]
    assert sups[0] == pytest.approx(1.5, abs=1e-12)
    assert sups[1] == pytest.approx(0.5, abs=1e-12)
    assert all(s == 0.0 for s in sups[2:])
    for p in conv.pairs:
        assert p.h1 <= p.h1_jensen + 1e-15


def test_coefficient_limit_residuals():
    lim = coefficient_limit_check(run_ladder(_linear_q(), LEVELS))
    np.testing.assert_allclose(lim.residuals[:2], [2.0, 0.5], atol=1e-12)
    assert all(r == 0.0 for r in lim.residuals[2:])
    assert lim.tail_zero and lim.growth_ok


def test_tail_point_ignores_roundoff():
    sol = solve_backward(_linear_q(3.0, 6))
    assert tail_point(sol) == 3


def test_nonlinear_ladder_is_monotone():
    m = build_model(1.0, 6)
    spec = BSDESpec(m, coefficient_from_name("sin-plus-q"), np.tanh(driver(m).terminal))
    run = run_ladder(spec, (1, 2, 4, 8))
    assert run.monotone
    conv = convergence_report(run)
    assert conv.tail_exact


def test_ladder_rejects_bad_inputs():
    spec = _linear_q(1.0, 4)
    with pytest.raises(ValueError):
        run_ladder(spec, (2, 1))
    with pytest.raises(DominationError):
        run_ladder(spec, (1, 2), eta=np.zeros(spec.model.leaf_count))
    twice = Coefficient(lambda t, y, z: np.sum(z * z, axis=-1), GrowthBound(0, 0, 1), name="2q")
    with pytest.raises(ValueError, match="growth bound"):
        run_ladder(BSDESpec(spec.model, twice, spec.terminal), (1, 2))


def test_membership_failure_is_raised():
    spec = _linear_q(1.0, 4)
    with pytest.raises(MembershipFailure):
        run_ladder(spec, (1, 2), membership_tol=-1.0)


def test_recombining_ladder_has_no_distances():
    m = build_model(1.0, 8, recombining=True)
    spec = BSDESpec(m, coefficient_from_name("q"), driver(m).terminal)
    with pytest.raises(LatticeError):
        convergence_report(run_ladder(spec, (1, 2)))


def test_scheme_tolerance_counts_squared_variance():
    sol = solve_backward(_linear_q(1.0, 4))
    # constant Z = 1: each step contributes 5 * dt^2
    assert scheme_tolerance(sol) == pytest.approx(5 * 4 * 0.25**2)


def test_variation_estimates_for_linear_terminal():
    m = build_model(1.0, 10)
    spec = BSDESpec(m, coefficient_from_name("q"), 0.5 * driver(m).terminal, StructureParams.zero(m))
    sol = solve_backward(spec)
    reports = {(r.name, r.descriptor.get("p")): r for r in
               qv_estimates_check(sol, np.abs(spec.terminal), spec.structure)}
    assert all(r.passed for r in reports.values())
    # Z = 1/2 everywhere: <M>_N = 1/4 and V is deterministic with slope 1/8
    assert reports[("qv-moment", 1.0)].left == pytest.approx(0.25, abs=1e-14)
    assert reports[("tv-moment", 1.0)].left == pytest.approx(0.125, abs=1e-14)
    assert reports[("bmo", None)].left == pytest.approx(0.25, abs=1e-14)


def test_variation_estimates_at_stopping_times():
    from qbsde.lattice import sample_stopping_times
    m = build_model(1.0, 8)
    spec = BSDESpec(m, coefficient_from_name("q"), np.tanh(driver(m).terminal), StructureParams.zero(m))
    sol = solve_backward(spec)
    taus = sample_stopping_times(m, [0, 3], driver(m), count=4, seed=1)
    reports = qv_estimates_check(sol, np.abs(spec.terminal), spec.structure, (1.0,), stopping_times=taus)
    assert all(r.passed for r in reports)


def test_variation_estimates_need_domination():
    m = build_model(1.0, 4)
    spec = BSDESpec(m, coefficient_from_name("q"), driver(m).terminal, StructureParams.zero(m))
    sol = solve_backward(spec)
    with pytest.raises(DominationError):
        qv_estimates_check(sol, np.zeros(m.leaf_count), spec.structure)
    with pytest.raises(MembershipFailure):
        qv_estimates_check(sol, np.abs(spec.terminal), spec.structure, membership_tol=-1.0)
