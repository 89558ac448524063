import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from qbsde.instances import band_instance
from qbsde.lattice import (
    AdaptedProcess,
    build_model,
    closure,
    driver,
    is_submartingale,
    one_step_drift,
    sample_stopping_times,
    stopping_pairs,
)
from qbsde.transforms import (
    DominationError,
    EntropicOverflowError,
    StructureParams,
    check_entropic_band,
    check_sq_membership,
    classify_quadratic,
    entropic_process,
    entropic_values,
    phi_explicit,
    phi_projection,
    phi_u_defect,
    u_transform,
    x_transform,
    xbar_transform,
)
from strategies import finite, models


def test_entropic_of_constant():
    m = build_model(1.0, 3)
    ent = entropic_process(m, np.full(m.leaf_count, 1.7))
    for v in ent.rho.values:
        np.testing.assert_allclose(v, 1.7, atol=1e-15)


def test_entropic_walk_closed_form():
    for n, lam in ((1, 1.0), (6, 0.8), (12, 2.0)):
        m = build_model(1.0, n)
        ent = entropic_process(m, lam * driver(m).terminal)
        assert ent.rho.initial == pytest.approx(n * math.log(math.cosh(lam * math.sqrt(m.dt))), abs=1e-13)
    m = build_model(1.0, 1)
    assert entropic_process(m, driver(m).terminal).rho.initial == pytest.approx(0.433781, abs=5e-7)


def test_entropic_matches_enumeration():
    n = 6
    m = build_model(1.0, n)
    xi = np.abs(driver(m).terminal)
    # frozen from the path-enumeration oracle
    assert entropic_process(m, xi).rho.initial == pytest.approx(0.9913503112448825, abs=1e-13)
    leaf = dict(zip(oracles.paths(n), xi))
    for delta in (0.5, 2.0):
        ref = oracles.entropic_at(leaf, n, 2, delta)
        got = entropic_process(m, xi, delta).rho.values[2]
        np.testing.assert_allclose(got, [ref[p] for p in sorted(ref, reverse=True)], atol=1e-13)


def test_entropic_works_on_recombining_lattice():
    m = build_model(1.0, 200, recombining=True)
    ent = entropic_process(m, driver(m).terminal)
    assert ent.rho.initial == pytest.approx(200 * math.log(math.cosh(math.sqrt(1 / 200))), abs=1e-12)


def test_entropic_overflow_is_reported():
    m = build_model(1.0, 2)
    with pytest.raises(EntropicOverflowError):
        entropic_process(m, np.full(m.leaf_count, 800.0))


def test_exp_entropic_is_martingale():
    m = build_model(1.0, 6)
    xi = np.sin(3 * driver(m).terminal) * 4
    rho = entropic_process(m, xi).rho
    E = rho.map(np.exp)
    for k in range(6):
        assert np.max(np.abs(one_step_drift(E, k))) <= 1e-12 * max(1.0, E.max_abs())


@given(models(max_steps=5), st.data())
def test_time_consistency(m, data):
    xi = data.draw(hnp.arrays(np.float64, m.leaf_count, elements=finite))
    rho = entropic_process(m, xi).rho
    times = sample_stopping_times(m, range(m.steps + 1), rho, count=3, seed=data.draw(st.integers(0, 999)))
    for sigma, tau in stopping_pairs(times):
        inner = entropic_values(m, tau.sample(rho))
        for k in range(m.steps + 1):
            mask = sigma.stops_at(k)
            np.testing.assert_allclose(inner[k][mask], rho.values[k][mask], atol=1e-12)


@given(models(max_steps=5), st.data())
def test_monotone_in_delta(m, data):
    xi = data.draw(hnp.arrays(np.float64, m.leaf_count, elements=finite))
    prev = None
    for delta in (0.25, 0.5, 1.0, 2.0, 4.0):
        cur = entropic_process(m, xi, delta).rho
        if prev is not None:
            for a, b in zip(prev.values, cur.values):
                assert np.all(b >= a - 1e-12)
        prev = cur


@given(st.integers(0, 10**6))
def test_minimality_of_entropic_process(seed):
    rng = np.random.default_rng(seed)
    m = build_model(1.0, 5)
    dw = driver(m)
    vals = [np.array([rng.normal()])]
    for k in range(5):
        sig = rng.uniform(0.1, 2.0, m.node_count(k))
        step = -0.5 * sig**2 * m.dt
        vals.append(m.expand(vals[-1] + step) + m.expand(sig) * dw.increments(k))
    Y = AdaptedProcess(m, tuple(vals))
    assert classify_quadratic(Y, StructureParams.zero(m)).is_quadratic
    rho = entropic_process(m, Y.terminal).rho
    for a, b in zip(rho.values, Y.values):
        assert np.all(a <= b + 1e-12)


def test_phi_without_forcing_is_eta():
    m = build_model(1.0, 3)
    eta = np.abs(driver(m).terminal)
    ph = phi_explicit(eta, StructureParams.zero(m))
    for row in ph.values:
        np.testing.assert_array_equal(row, eta)


def test_phi_lambda_integral():
    m = build_model(1.0, 4)
    ph = phi_explicit(np.ones(m.leaf_count), StructureParams.linear(m, 1.0, 0.0))
    np.testing.assert_allclose(ph.values[0], 2.0, atol=1e-15)


def test_phi_converges_to_linear_ode_solution():
    exact = math.exp(0.5) + (1.0 / 0.5) * (math.exp(0.5) - 1.0)
    errs = []
    for n in (4, 8, 16):
        m = build_model(1.0, n)
        ph = phi_explicit(np.ones(m.leaf_count), StructureParams.linear(m, 1.0, 0.5))
        errs.append(abs(ph.values[0][0] - exact))
    assert errs[0] / errs[1] == pytest.approx(2.0, abs=0.1)
    assert errs[1] / errs[2] == pytest.approx(2.0, abs=0.1)


def test_phi_is_decreasing_along_paths():
    m = build_model(1.0, 5)
    ph = phi_explicit(np.abs(driver(m).terminal), StructureParams.linear(m, 0.3, 0.7))
    assert np.all(np.diff(ph.values, axis=0) <= 0)


def test_phi_rejects_negative_eta():
    m = build_model(1.0, 2)
    with pytest.raises(ValueError):
        phi_explicit(-np.ones(m.leaf_count), StructureParams.zero(m))


def test_u_constancy_defect_halves():
    defects = []
    for n in (5, 10, 20):
        m = build_model(1.0, n)
        eta = np.minimum(np.abs(driver(m).terminal), 1.0)
        defects.append(phi_u_defect(phi_explicit(eta, StructureParams.linear(m, 1.0, 0.5)))[0])
    assert 1.7 <= defects[0] / defects[1] <= 2.3
    assert 1.7 <= defects[1] / defects[2] <= 2.3


def test_phi_projection_examples():
    m = build_model(1.0, 1)
    eta = np.abs(driver(m).terminal)
    # two-point average of e^{|+-1|}; value frozen from the enumeration oracle
    assert phi_projection(eta, StructureParams.zero(m)).initial == pytest.approx(math.e, abs=1e-15)
    m = build_model(1.0, 3)
    Phi = phi_projection(np.full(m.leaf_count, 0.4), StructureParams.zero(m))
    for v in Phi.values:
        np.testing.assert_allclose(v, math.exp(0.4), atol=1e-15)
    eta = np.abs(driver(m).terminal)
    Phi = phi_projection(eta, StructureParams.zero(m))
    assert Phi.max_distance(closure(m, np.exp(eta))) < 1e-14


def test_phi_projection_is_supermartingale():
    m = build_model(1.0, 6)
    eta = np.abs(driver(m).terminal)
    Phi = phi_projection(eta, StructureParams.linear(m, 0.5, 0.5))
    np.testing.assert_allclose(Phi.terminal, np.exp(eta), atol=1e-13)
    assert is_submartingale(-Phi, tol=1e-12).passed


def test_x_transform_examples():
    m = build_model(1.0, 4)
    ones = AdaptedProcess.constant(m, 1.0)
    assert x_transform(driver(m), StructureParams.zero(m)).allclose(driver(m))
    p = StructureParams.linear(m, 0.0, 1.0)
    np.testing.assert_allclose([v[0] for v in x_transform(ones, p).values], 1 + m.times, atol=1e-15)
    np.testing.assert_allclose([v[0] for v in x_transform(-ones, p).values], -1 + m.times, atol=1e-15)


def test_xbar_transform_examples():
    m = build_model(1.0, 4)
    W = driver(m)
    assert xbar_transform(W, StructureParams.zero(m)).allclose(abs(W))
    ones = AdaptedProcess.constant(m, 1.0)
    got = xbar_transform(ones, StructureParams.linear(m, 0.0, 1.0))
    np.testing.assert_allclose([v[0] for v in got.values], np.exp(m.times), atol=1e-14)
    got = xbar_transform(W, StructureParams.linear(m, 1.0, 0.0))
    for k in range(5):
        np.testing.assert_allclose(got.values[k], np.abs(W.values[k]) + k * m.dt, atol=1e-14)


def test_u_transform_examples():
    m = build_model(1.0, 4)
    W = driver(m)
    assert u_transform(W, StructureParams.zero(m), -1).allclose(W.map(lambda v: np.exp(-v)))
    zero = AdaptedProcess.constant(m, 0.0)
    got = u_transform(zero, StructureParams.linear(m, 1.0, 0.0))
    np.testing.assert_allclose([v[0] for v in got.values], 1 + m.times, atol=1e-14)
    ones = AdaptedProcess.constant(m, 1.0)
    got = u_transform(ones, StructureParams.linear(m, 0.0, 1.0))
    np.testing.assert_allclose([v[0] for v in got.values], math.e * (1 + m.times), atol=1e-14)
    with pytest.raises(ValueError):
        u_transform(W, StructureParams.zero(m), 2)


def test_classifier_saturated_and_martingale():
    m = build_model(1.0, 6)
    W = driver(m)
    r = W - 0.5 * AdaptedProcess.deterministic(m, m.times)
    c = classify_quadratic(r, StructureParams.zero(m))
    assert c.is_quadratic and abs(c.direct.worst_excess) < 1e-15
    assert c.advisory_passed
    c = classify_quadratic(W, StructureParams.zero(m))
    assert c.is_quadratic and c.advisory_passed


def test_classifier_witness():
    m = build_model(1.0, 3)
    W = driver(m)
    vals = list(W.values)
    # full dQV of drift at the up node of step 1: twice the allowed amount
    drift = np.zeros(2)
    drift[0] = -m.dt
    vals[2] = vals[2] + m.expand(drift)
    vals[3] = vals[3] + m.expand(m.expand(drift))
    c = classify_quadratic(AdaptedProcess(m, tuple(vals)), StructureParams.zero(m))
    assert not c.is_quadratic
    assert (c.direct.worst_step, c.direct.worst_node) == (1, 0)
    assert c.direct.worst_excess == pytest.approx(0.5 * m.dt, abs=1e-14)


def test_band_of_entropic_process_is_tight_at_fixed_times():
    m = build_model(1.0, 5)
    xi = np.cos(2 * driver(m).terminal)
    rho = entropic_process(m, xi, 2.0).rho
    times = sample_stopping_times(m, range(6))
    rep = check_entropic_band(rho, 2.0, stopping_pairs(times))
    assert rep.passed and rep.pairs_checked == 21
    assert abs(rep.min_margin) < 1e-13


def test_band_holds_for_martingales():
    m = build_model(1.0, 5)
    M = closure(m, np.sin(driver(m).terminal) * 3)
    times = sample_stopping_times(m, range(6), M, count=4, seed=1)
    assert check_entropic_band(M, 1.0, stopping_pairs(times)).passed


def test_band_detects_hump():
    m = build_model(1.0, 4)
    X = AdaptedProcess.deterministic(m, [0.0, 1.0, 2.0, 1.0, 0.0])
    sigma = sample_stopping_times(m, [2])[0]
    tau = sample_stopping_times(m, [4])[0]
    rep = check_entropic_band(X, 1.0, [(sigma, tau)])
    assert not rep.passed
    v = rep.violations[0]
    assert (v.step, v.side) == (2, "upper") and v.amount == pytest.approx(2.0)


def test_band_on_constructed_instance():
    inst = band_instance(5)
    m = inst.X.model
    times = sample_stopping_times(m, range(m.steps + 1), inst.X, count=8, seed=5)
    assert check_entropic_band(inst.X, inst.delta, stopping_pairs(times)).passed


def test_membership_examples():
    m = build_model(1.0, 5)
    xi = 1.5 * driver(m).terminal
    rho = entropic_process(m, xi).rho
    assert check_sq_membership(rho, np.abs(xi), StructureParams.zero(m)).member
    zero = AdaptedProcess.constant(m, 0.0)
    rep = check_sq_membership(zero, np.abs(xi), StructureParams.zero(m))
    assert rep.member and rep.margin >= 0
    with pytest.raises(DominationError):
        check_sq_membership(10.0 * rho, np.abs(xi), StructureParams.zero(m))


def test_membership_on_stopping_times_subset():
    m = build_model(1.0, 4)
    xi = driver(m).terminal
    Y = entropic_process(m, xi).rho + AdaptedProcess.deterministic(m, [5.0, 0, 0, 0, 0])
    assert not check_sq_membership(Y, np.abs(xi), StructureParams.zero(m)).member
    later = sample_stopping_times(m, [2, 4])
    assert check_sq_membership(Y, np.abs(xi), StructureParams.zero(m), later).member
