"""Monotone approximation by regularized drivers and its convergence diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coefficients import GridSpec, inf_convolve, kappa_eval, verify_structure
from .inequalities import InequalityReport, make_report
from .lattice import (
    AdaptedProcess,
    LatticeError,
    StoppingTime,
    expectation,
    predictable_qv,
    remaining_qv,
    running_max,
    total_variation,
)
from .solver import BSDESolution, BSDESpec, picard_solve, solve_backward
from .transforms import (
    DominationError,
    StructureParams,
    check_sq_membership,
    phi_projection,
    xbar_transform,
)


class MembershipFailure(RuntimeError):
    """A ladder solution left the class dominated by the entropic bound."""


def scheme_tolerance(solution: BSDESolution) -> float:
    """Accumulated one-step discretization allowance ``5 * sum_k max (dQV_k)^2``.

    The quadratic one-step scheme exceeds the exact entropic step by at most a
    multiple of the squared conditional variance; the bound adds up over steps.
    """
    return 5.0 * float(sum(float(np.max(q)) ** 2 for q in solution.qv_step))


@dataclass(frozen=True, eq=False)
class ApproximationRun:
    spec: BSDESpec
    levels: tuple
    coefficients: tuple
    solutions: tuple
    eta: np.ndarray
    monotone: bool
    monotone_gap: float
    membership_margins: tuple


def _default_grid(spec: BSDESpec) -> GridSpec:
    probe = solve_backward(BSDESpec(spec.model, spec.coefficient, spec.terminal, spec.structure,
                                    spec.clock, spec.weights), "explicit")
    return GridSpec.around(probe.Y.max_abs(), probe.max_abs_z())


def run_ladder(
    spec: BSDESpec,
    levels,
    eta=None,
    scheme: str = "implicit",
    grid: GridSpec | None = None,
    membership_tol: float | None = None,
) -> ApproximationRun:
    """Solve ``BSDE(g_n, xi)`` for every level ``n`` of the regularization ladder.

    Every solution must satisfy the entropic domination by ``eta`` (default
    ``|xi|``) up to ``membership_tol``, which defaults to
    :func:`scheme_tolerance`.
    """
    g = spec.coefficient
    report = verify_structure(g)
    if not report.passed:
        raise ValueError(f"driver violates its declared growth bound at {report.worst_point}")
    eta = np.abs(spec.terminal) if eta is None else np.asarray(eta, dtype=float)
    if np.any(np.abs(spec.terminal) > np.abs(eta) + 1e-12 * max(1.0, float(np.max(np.abs(eta))))):
        raise DominationError("|eta| must dominate |xi| at every leaf")
    levels = tuple(float(n) for n in levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("ladder levels must be strictly increasing")
    needs_grid = g.quadratic_z is None and not (g.lipschitz is not None and g.lipschitz <= levels[0])
    if grid is None and needs_grid:
        grid = _default_grid(spec)
    coefs = []
    sols = []
    margins = []
    for n in levels:
        gn = inf_convolve(g, n, grid)
        sub = BSDESpec(spec.model, gn, spec.terminal, spec.structure, spec.clock, spec.weights)
        if scheme == "picard":
            sol, _ = picard_solve(sub)
        else:
            sol = solve_backward(sub, scheme)
        tol = scheme_tolerance(sol) if membership_tol is None else membership_tol
        mem = check_sq_membership(sol.Y, eta, spec.structure, tol=tol)
        if not mem.member:
            raise MembershipFailure(
                f"level {n:g}: |Y| exceeds the entropic bound by {-mem.margin:.3e} at step {mem.worst_step}"
            )
        coefs.append(gn)
        sols.append(sol)
        margins.append(mem.margin)
    gap = 0.0
    for a, b in zip(sols, sols[1:]):
        gap = max(gap, max(float(np.max(x - y)) for x, y in zip(a.Y.values, b.Y.values)))
    return ApproximationRun(spec, levels, tuple(coefs), tuple(sols), eta, gap <= 1e-12, gap, tuple(margins))


@dataclass(frozen=True)
class PairDistances:
    lower: float
    upper: float
    sup: float
    h1: float
    h1_jensen: float
    h2p: dict
    bmo: float
    s1_v: float
    tail: bool


@dataclass(frozen=True)
class ConvergenceReport:
    pairs: tuple
    tail_point: int
    tail_exact: bool

    @property
    def nonincreasing_tail(self) -> bool:
        sups = [p.sup for p in self.pairs]
        return all(b <= a + 1e-15 for a, b in zip(sups, sups[1:]))


def tail_point(solution: BSDESolution) -> int:
    """Smallest integer level not below ``max |Z|`` (``l1`` norm per node).

    Roundoff in the regression of ``Z`` is absorbed before rounding up.
    """
    zmax = max(float(np.max(np.sum(np.abs(z), axis=1))) for z in solution.Z)
    return max(0, math.ceil(zmax - 1e-9 * max(1.0, zmax)))


def _martingale_distance(a: BSDESolution, b: BSDESolution, p_values) -> tuple:
    diff = a.M - b.M
    qv = predictable_qv(diff, tol=1e-8)
    model = diff.model
    qv_n = np.maximum(qv.terminal, 0.0)
    h1 = expectation(model, np.sqrt(qv_n))
    h1j = math.sqrt(max(0.0, expectation(model, qv_n)))
    h2p = {float(p): expectation(model, qv_n**p) ** (1.0 / (2 * p)) for p in p_values}
    rem = remaining_qv(qv)
    bmo = math.sqrt(max(0.0, max(float(np.max(v)) for v in rem.values)))
    return h1, h1j, h2p, bmo


def convergence_report(run: ApproximationRun, p_values=(1.0,)) -> ConvergenceReport:
    """Distances between consecutive ladder solutions, with exact expectations."""
    sols = run.solutions
    if any(s.M is None for s in sols):
        raise LatticeError("convergence distances need the full tree")
    star = tail_point(sols[-1]) if sols else 0
    pairs = []
    for (na, a), (nb, b) in zip(zip(run.levels, sols), zip(run.levels[1:], sols[1:])):
        sup = a.Y.max_distance(b.Y)
        h1, h1j, h2p, bmo = _martingale_distance(a, b, p_values)
        dv = running_max(a.V - b.V).terminal
        s1 = expectation(a.model, dv)
        pairs.append(PairDistances(na, nb, sup, h1, h1j, h2p, bmo, s1, na >= star and nb >= star))
    tail_pairs = [p for p in pairs if p.tail]
    exact = bool(tail_pairs) and all(p.sup <= 1e-12 and p.h1 == 0.0 and p.s1_v == 0.0 for p in tail_pairs)
    return ConvergenceReport(tuple(pairs), star, exact)


def qv_estimates_check(
    solution: BSDESolution,
    eta,
    params: StructureParams,
    p_values=(1.0, 1.5, 2.0),
    stopping_times: list[StoppingTime] | None = None,
    membership_tol: float | None = None,
) -> list[InequalityReport]:
    """Quadratic and total variation estimates by the exponential moments of ``Xbar(eta)``.

    Reports, in order: the conditional bound ``E[QV_N - QV_s | F_s] / 2 <= Phi_s``
    (worst tested node), ``E[QV_N^p] <= (2p)^p E[exp(p Xbar_N)]`` and the same
    bound for the total variation of ``V`` for each ``p``, and
    ``BMO^2 <= 2 sup Phi``.
    """
    if solution.M is None:
        raise LatticeError("variation estimates need the full tree")
    model = solution.model
    eta = np.abs(np.asarray(eta, dtype=float))
    tol = scheme_tolerance(solution) if membership_tol is None else membership_tol
    mem = check_sq_membership(solution.Y, eta, params, stopping_times, tol=tol)
    if not mem.member:
        raise MembershipFailure(f"solution is not dominated by eta (margin {mem.margin:.3e})")
    QV = solution.QV
    phi = phi_projection(eta, params)
    rem = remaining_qv(QV)
    desc = {"steps": model.steps}
    reports = []

    worst = None
    for k in range(model.steps):
        if stopping_times is None:
            mask = np.ones(model.node_count(k), dtype=bool)
        else:
            mask = np.zeros(model.node_count(k), dtype=bool)
            for st in stopping_times:
                mask |= st.stops_at(k)
        if not np.any(mask):
            continue
        left = 0.5 * rem.values[k][mask]
        right = phi.values[k][mask]
        i = int(np.argmin(right - left))
        if worst is None or right[i] - left[i] < worst[1] - worst[0]:
            worst = (float(left[i]), float(right[i]))
    reports.append(make_report("qv-conditional", worst[0], worst[1], desc))

    xbar = xbar_transform(AdaptedProcess(model, tuple(
        np.zeros(model.node_count(k)) if k < model.steps else eta for k in range(model.steps + 1))), params)
    xb = xbar.terminal
    tv = total_variation(solution.V).terminal
    qv_n = np.maximum(QV.terminal, 0.0)
    for p in p_values:
        rhs = (2 * p) ** p * expectation(model, np.exp(p * xb))
        reports.append(make_report("qv-moment", expectation(model, qv_n**p), rhs, {**desc, "p": p}))
        reports.append(make_report("tv-moment", expectation(model, tv**p), rhs, {**desc, "p": p}))

    bmo_sq = max(float(np.max(v)) for v in rem.values)
    reports.append(make_report("bmo", bmo_sq, 2.0 * max(float(np.max(v)) for v in phi.values), desc))
    return reports


@dataclass(frozen=True)
class CoefficientLimitReport:
    residuals: tuple
    tail_zero: bool
    growth_ok: bool
    growth_excess: float


def coefficient_limit_check(run: ApproximationRun) -> CoefficientLimitReport:
    """``max |g_n(t, Y^n, Z^n) - g(t, Y, Z)|`` against the last ladder solution."""
    spec = run.spec
    model = spec.model
    g = spec.coefficient
    limit = run.solutions[-1]
    star = tail_point(limit)
    residuals = []
    growth_excess = -np.inf
    gr = g.growth
    for gn, sol in zip(run.coefficients, run.solutions):
        r = 0.0
        for k in range(model.steps):
            t = model.time(k)
            a = gn(t, sol.Y.values[k], sol.Z[k])
            b = g(t, limit.Y.values[k], limit.Z[k])
            r = max(r, float(np.max(np.abs(a - b))))
            zw = sol.Z[k] * np.sqrt(spec.weights)
            cap = kappa_eval(t, sol.Y.values[k], zw, gr)
            growth_excess = max(growth_excess, float(np.max(np.abs(a) - cap)))
        residuals.append(r)
    tail = [r for n, r in zip(run.levels, residuals) if n >= star]
    return CoefficientLimitReport(tuple(residuals), bool(tail) and all(r == 0.0 for r in tail),
                                  growth_excess <= 1e-12, growth_excess)
