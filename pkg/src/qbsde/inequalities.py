"""Exact lattice checks of entropy and maximal inequalities for martingales.

Each check returns an :class:`InequalityReport` with the two sides of the
inequality ``left <= right``.  A report passes when
``right - left >= -rel_tol * max(1, |left|, |right|)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import (
    AdaptedProcess,
    LatticeError,
    LatticeModel,
    build_model,
    check_martingale,
    closure,
    expectation,
    is_submartingale,
    multiplicative_decompose,
    process_norm,
    running_max,
)
from .transforms import entropic_process


@dataclass(frozen=True)
class InequalityReport:
    name: str
    left: float
    right: float
    margin: float
    passed: bool
    descriptor: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def make_report(name: str, left: float, right: float, descriptor: dict | None = None,
                rel_tol: float = 1e-10, extra: dict | None = None) -> InequalityReport:
    left = float(left)
    right = float(right)
    margin = right - left
    scale = max(1.0, abs(left), abs(right) if math.isfinite(right) else 0.0)
    ok = bool(np.isfinite(left) and not np.isnan(margin) and margin >= -rel_tol * scale)
    return InequalityReport(name, left, right, margin, ok, dict(descriptor or {}), dict(extra or {}))


def exponential_martingale(M: AdaptedProcess) -> AdaptedProcess:
    """``L_{k+1} = L_k exp(dM) / E[exp(dM) | F_k]`` with ``L_0 = 1``."""
    check_martingale(M)
    model = M.model
    vals = [np.ones(1)]
    for k in range(model.steps):
        e = np.exp(M.increments(k))
        vals.append(model.expand(vals[-1]) * e / model.expand(model.expect_step(e)))
    return AdaptedProcess(model, tuple(vals))


def _xlogx(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


def _relative_entropy_by_steps(L: AdaptedProcess) -> float:
    """``E_Q[ln L_N]`` via the chain rule: Q-averaged one-step relative entropies."""
    model = L.model
    h = np.zeros(model.leaf_count)
    for k in range(model.steps - 1, -1, -1):
        kids = model.children(L.values[k + 1]) / L.values[k][:, None]
        hk = model.children(h)
        acc = np.zeros(model.node_count(k))
        for j in range(model.branching):
            q = model.probabilities[j] * kids[:, j]
            acc = acc + q * (np.log(kids[:, j]) + hk[:, j])
        h = acc
    return float(h[0])


def llogl_identity_check(M: AdaptedProcess) -> tuple[InequalityReport, InequalityReport]:
    """Maximal entropy bound and two-route entropy for the exponential martingale of ``M``.

    The first report checks ``E[L_N ln L_N] <= E[max L] - 1``.  The second
    compares ``E[L_N ln L_N]`` computed directly with the chain-rule sum of
    one-step relative entropies under the tilted measure (agreement to 1e-12).
    ``extra`` carries ``E[L_N ln max L]`` and the overshoot
    ``E[L_N ln max L] - (E[max L] - 1) >= 0`` that jumps create on a lattice.
    """
    if abs(M.initial) > 0:
        raise LatticeError("M must start at 0")
    L = exponential_martingale(M)
    model = M.model
    lmax = running_max(L, absolute=False).terminal
    e_max = expectation(model, lmax)
    direct = expectation(model, _xlogx(L.terminal))
    via_q = _relative_entropy_by_steps(L)
    at_max = expectation(model, L.terminal * np.log(lmax))
    extra = {"E_L_ln_maxL": at_max, "overshoot": at_max - (e_max - 1.0), "E_maxL": e_max}
    desc = {"steps": model.steps}
    doob = make_report("llogl-maximal", direct, e_max - 1.0, desc, extra=extra)
    diff = abs(direct - via_q)
    two_way = make_report("llogl-two-routes", diff, 1e-12 * max(1.0, abs(direct)), desc, rel_tol=0.0,
                          extra={"direct": direct, "tilted": via_q})
    return doob, two_way


def harremoes_check(L: AdaptedProcess) -> InequalityReport:
    """``E[max L] - 1 - ln E[max L] <= E[L_N ln L_N]`` for a positive martingale with ``L_0 = 1``."""
    model = L.model
    if any(np.any(v <= 0) for v in L.values):
        raise LatticeError("L must be positive")
    if abs(L.initial - 1.0) > 1e-12:
        raise LatticeError("L must start at 1")
    check_martingale(L)
    e_max = expectation(model, running_max(L, absolute=False).terminal)
    left = e_max - 1.0 - math.log(e_max)
    right = expectation(model, _xlogx(L.terminal))
    return make_report("harremoes", left, right, {"steps": model.steps}, rel_tol=1e-12)


def u_m(x: float, m: float) -> float:
    return x - m - m * math.log(x)


def invert_u_m(target: float, m: float, iters: int = 200, tol: float = 1e-12) -> float:
    """Largest ``x >= m`` with ``u_m(x) <= target``, by bisection on ``[m, 1e300]``.

    ``u_m`` increases on ``[m, inf)``; targets below ``u_m(m)`` give ``m``.
    """
    if target <= u_m(m, m):
        return m
    lo, hi = m, 1e300
    if u_m(hi, m) <= target:
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi) if hi / max(lo, 1e-300) < 4 else math.sqrt(lo * hi)
        if u_m(mid, m) <= target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, lo):
            break
    return lo


def um_submartingale_check(U: AdaptedProcess) -> InequalityReport:
    """``u_m(E max U) - u_m(U_0) <= E[U_N ln U_N] - m ln m`` with ``m = E U_N``.

    ``extra["bound"]`` is the resulting cap on ``E[max U]`` from inverting
    ``u_m``.
    """
    model = U.model
    if any(np.any(v <= 0) for v in U.values):
        raise LatticeError("U must be positive")
    verdict = is_submartingale(U, tol=1e-12 * max(1.0, U.max_abs()))
    if not verdict.passed:
        raise LatticeError(f"U is not a submartingale (drift {verdict.worst_drift:.3e} at step {verdict.worst_step})")
    u0 = U.initial
    m = expectation(model, U.terminal)
    e_max = expectation(model, running_max(U, absolute=False).terminal)
    entropy = expectation(model, _xlogx(U.terminal)) - m * math.log(m)
    left = u_m(e_max, m) - u_m(u0, m)
    bound = invert_u_m(u_m(u0, m) + entropy, m)
    return make_report("um-submartingale", left, entropy, {"steps": model.steps}, rel_tol=1e-12,
                       extra={"E_maxU": e_max, "bound": bound, "m": m})


@dataclass(frozen=True)
class GarsiaNeveuResult:
    premise_ok: bool
    premise_margin: float
    reports: tuple


def garsia_neveu_check(A: AdaptedProcess, U: np.ndarray, p_values=(1.0, 2.0)) -> GarsiaNeveuResult:
    """``E[A_N^p] <= p^p E[U^p]`` under ``E[A_N - A_k | F_k] <= E[U 1_{k<N} | F_k]``.

    ``A`` must be increasing and predictable.  The premise is checked at every
    node, which covers every stopping time.  Conclusions are skipped when the
    premise fails.
    """
    model = A.model
    U = np.asarray(U, dtype=float)
    if np.any(U < 0):
        raise LatticeError("U must be non-negative")
    for k in range(model.steps):
        kids = model.children(A.values[k + 1])
        if np.any(kids != kids[:, :1]):
            raise LatticeError(f"A is not predictable after step {k}")
        if np.any(kids[:, 0] < A.values[k]):
            raise LatticeError(f"A decreases after step {k}")
    rest = closure(model, A.terminal) - A
    u_cond = closure(model, U)
    margin = np.inf
    for k in range(model.steps):
        margin = min(margin, float(np.min(u_cond.values[k] - rest.values[k])))
    scale = max(1.0, float(np.max(U)))
    ok = margin >= -1e-12 * scale
    reports = []
    if ok:
        for p in p_values:
            if p < 1:
                raise ValueError("p must be at least 1")
            left = expectation(model, A.terminal**p)
            right = p**p * expectation(model, U**p)
            reports.append(make_report("garsia-neveu", left, right, {"steps": model.steps, "p": p}))
    return GarsiaNeveuResult(ok, margin, tuple(reports))


def garsia_neveu_instance(seed, max_steps: int = 4):
    """Random premise-satisfying pair ``(A, U)`` on a small binary tree.

    ``A`` takes a random fraction of the remaining conditional room
    ``E[U|F_k] - E[A_N - A_{k+1}|F_k]`` at every node, so the premise holds by
    construction.
    """
    rng = np.random.default_rng(seed)
    N = int(rng.integers(1, max_steps + 1))
    model = build_model(1.0, N)
    U = np.exp(rng.normal(0.0, 1.0, model.leaf_count))
    u_cond = closure(model, U)
    rest = [np.zeros(model.leaf_count)]
    steps = []
    for k in range(N - 1, -1, -1):
        room = u_cond.values[k] - model.expect_step(rest[-1])
        c = rng.uniform(0.0, 1.0, model.node_count(k)) * np.maximum(room, 0.0)
        steps.append(c)
        rest.append(c + model.expect_step(rest[-1]))
    steps.reverse()
    vals = [np.zeros(1)]
    for k in range(N):
        vals.append(model.expand(vals[-1] + steps[k]))
    return AdaptedProcess(model, tuple(vals)), U


def garsia_neveu_battery(count: int = 1000, seed: int = 0, max_steps: int = 4,
                         p_values=(1.0, 1.5, 2.0, 3.0)) -> list[InequalityReport]:
    """Premise and conclusion over ``count`` seeded instances."""
    out = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(count)):
        A, U = garsia_neveu_instance(child, max_steps)
        res = garsia_neveu_check(A, U, p_values)
        if not res.premise_ok:
            out.append(make_report("garsia-neveu-premise", -res.premise_margin, 0.0, {"instance": i}))
            continue
        for r in res.reports:
            out.append(InequalityReport(r.name, r.left, r.right, r.margin, r.passed,
                                        {**r.descriptor, "instance": i}))
    return out


def psi(z, p: float):
    """``z ln z - z + 1`` for ``p = 1`` and ``z^p`` otherwise."""
    z = np.asarray(z, dtype=float)
    if p == 1:
        return _xlogx(z) - z + 1.0
    return z**p


def maximal_psi_check(model: LatticeModel, xi: np.ndarray, p: float, scales=(0.0, 0.25, 0.5, 1.0, 1.5, 2.0)) -> InequalityReport:
    """Monotone sweep of maximal norms of ``exp(X)`` against ``E[psi_p(exp X_N)]``.

    For each scale ``s`` take ``X = rho(s * xi)``.  The report's ``right`` is
    the smallest consecutive increase along the sweep among the S^p norm of
    ``exp(X)``, the S^p norm of its exponential-martingale factor and
    ``E[psi_p(exp X_N)]``; it passes when nothing decreases.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    scales = sorted(float(s) for s in scales)
    rows = []
    for s in scales:
        X = entropic_process(model, s * np.asarray(xi, dtype=float)).rho
        ex = X.map(np.exp)
        factor, _ = multiplicative_decompose(ex)
        lhs = process_norm(ex, "S", p)
        fac = process_norm(factor, "S", p)
        rhs = expectation(model, psi(ex.terminal, p))
        if not all(np.isfinite(v) for v in (lhs, fac, rhs)):
            raise LatticeError("non-finite maximal norm")
        rows.append((lhs, fac, rhs))
    arr = np.array(rows)
    steps = np.diff(arr, axis=0) if len(rows) > 1 else np.zeros((1, 3))
    worst = float(np.min(steps))
    return make_report("maximal-psi", 0.0, worst, {"p": p, "steps": model.steps},
                       extra={"sweep": [list(r) for r in rows], "scales": scales})


def dual_entropy_check(
    xi,
    probabilities=None,
    densities: np.ndarray | None = None,
    count: int = 1000,
    seed=0,
) -> tuple[InequalityReport, InequalityReport]:
    """Entropic value as a supremum of penalized expectations.

    Every tested density ``L`` (positive, mean one) must give
    ``E[L xi] - E[L ln L] <= rho_0``; the density ``exp(xi - rho_0)`` must
    attain ``rho_0`` within 1e-12.  Random densities come from Dirichlet draws
    unless ``densities`` is given.
    """
    xi = np.asarray(xi, dtype=float)
    n = xi.shape[0]
    p = np.full(n, 1.0 / n) if probabilities is None else np.asarray(probabilities, dtype=float)
    if abs(p.sum() - 1.0) > 1e-12 or np.any(p <= 0):
        raise ValueError("invalid probability vector")
    top = float(np.max(xi))
    rho = top + math.log(math.fsum(p * np.exp(xi - top)))
    if densities is None:
        rng = np.random.default_rng(seed)
        q = rng.dirichlet(np.ones(n), size=count)
        densities = q / p
    densities = np.atleast_2d(np.asarray(densities, dtype=float))
    means = densities @ p
    if np.any(densities <= 0) or np.any(np.abs(means - 1.0) > 1e-9):
        raise ValueError("densities must be positive with mean one")
    values = np.array([math.fsum(p * d * xi) - math.fsum(p * d * np.log(d)) for d in densities])
    best = float(np.max(values)) if values.size else -np.inf
    desc = {"points": n, "densities": int(densities.shape[0])}
    bound = make_report("dual-entropy-bound", best, rho + 1e-12, desc, rel_tol=0.0,
                        extra={"rho0": rho})
    star = np.exp(xi - rho)
    attained = math.fsum(p * star * xi) - math.fsum(p * star * (xi - rho))
    err = abs(attained - rho)
    attain = make_report("dual-entropy-attainment", err, 1e-12, desc, rel_tol=0.0,
                         extra={"rho0": rho, "attained": attained, "optimizer": star.tolist()})
    return bound, attain


def dual_entropy_battery(count: int = 1000, points: int = 8, seed: int = 0) -> list[InequalityReport]:
    """Random payoffs on ``points``-point spaces, each against ``count`` random densities."""
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(points) * 2.0)
    xi = rng.normal(0.0, 2.0, points)
    return list(dual_entropy_check(xi, p, count=count, seed=rng.integers(2**32)))
