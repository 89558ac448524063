"""Workloads behind the command line runner.

Each workload returns ``(reports, summary)``: a list of
:class:`InequalityReport` rows and a JSON-friendly dict of solution summaries.
Randomness for instance ``i`` of a battery comes from
``SeedSequence(seed, spawn_key=(i,))``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

from .inequalities import (
    InequalityReport,
    dual_entropy_check,
    exponential_martingale,
    garsia_neveu_check,
    garsia_neveu_instance,
    harremoes_check,
    llogl_identity_check,
    make_report,
    maximal_psi_check,
    um_submartingale_check,
)
from .instances import band_instance, classifier_instance
from .lattice import (
    LatticeModel,
    build_model,
    driver,
    sample_stopping_times,
    stopping_pairs,
)
from .solver import BSDESpec, picard_solve, residual_check, solve_backward
from .stability import (
    convergence_report,
    coefficient_limit_check,
    qv_estimates_check,
    run_ladder,
    scheme_tolerance,
)
from .transforms import check_entropic_band, check_sq_membership, classify_quadratic


def instance_seed(seed: int, i: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(i,))


def ordered_map(func: Callable, items, threads: int = 1) -> list:
    """``map`` that keeps input order, optionally on a thread pool."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def _tag(reports, **desc) -> list[InequalityReport]:
    return [InequalityReport(r.name, r.left, r.right, r.margin, r.passed, {**r.descriptor, **desc}, r.extra)
            for r in reports]


def _solve(spec: BSDESpec, scheme: str, tol: float):
    if scheme == "picard":
        sol, _ = picard_solve(spec, tol=tol)
        return sol
    return solve_backward(spec, scheme, tol=tol)


def solve_workload(spec: BSDESpec, scheme: str = "implicit", tol: float = 1e-12) -> tuple[list, dict]:
    sol = _solve(spec, scheme, tol)
    model = spec.model
    res = residual_check(sol, spec)
    reports = []
    # implicit-form residual of the explicit scheme is first order, not roundoff
    allowed = tol * max(1.0, sol.Y.max_abs()) * model.steps if scheme != "explicit" else math.inf
    reports.append(make_report("residual", res.max_defect, allowed, {"scheme": scheme}, rel_tol=0.0,
                               extra={"total": res.total_defect}))
    reports.append(make_report("growth", res.growth_excess, 1e-12 * max(1.0, sol.Y.max_abs()), {}, rel_tol=0.0))
    allowance = scheme_tolerance(sol)
    mem = check_sq_membership(sol.Y, np.abs(spec.terminal), spec.structure, tol=allowance)
    reports.append(make_report("membership", -mem.margin, allowance, {"step": mem.worst_step}, rel_tol=0.0))
    summary = {
        "Y0": sol.initial,
        "max_abs_Y": sol.Y.max_abs(),
        "max_abs_Z": sol.max_abs_z(),
        "iterations": sol.diagnostics.iterations,
        "orthogonal_part": sol.diagnostics.orthogonal_part,
        "nodes": model.total_nodes,
    }
    return reports, summary


def ladder_workload(spec: BSDESpec, levels, scheme: str = "implicit") -> tuple[list, dict]:
    run = run_ladder(spec, levels, scheme=scheme)
    conv = convergence_report(run)
    lim = coefficient_limit_check(run)
    reports = [make_report("ladder-monotone", run.monotone_gap, 1e-12, {}, rel_tol=0.0)]
    prev = math.inf
    for p in conv.pairs:
        label = f"{p.lower:g}-{p.upper:g}"
        reports.append(make_report("ladder-sup", p.sup, prev, {"pair": label}, rel_tol=1e-12))
        prev = p.sup
        for name, value in (("ladder-h1", p.h1), ("ladder-s1", p.s1_v)):
            reports.append(make_report(name, value, 0.0 if p.tail else math.inf, {"pair": label}, rel_tol=0.0))
    for n, r in zip(run.levels, lim.residuals):
        tail = n >= conv.tail_point
        reports.append(make_report("coefficient-limit", r, 0.0 if tail else math.inf, {"pair": f"{n:g}"}, rel_tol=0.0))
    summary = {
        "levels": list(run.levels),
        "Y0": [s.initial for s in run.solutions],
        "tail_point": conv.tail_point,
        "tail_exact": conv.tail_exact,
        "nodes": spec.model.total_nodes,
    }
    return reports, summary


def qv_workload(spec: BSDESpec, scheme: str, p_values) -> tuple[list, dict]:
    sol = _solve(spec, scheme, 1e-12)
    reports = qv_estimates_check(sol, np.abs(spec.terminal), spec.structure, p_values)
    return reports, {"Y0": sol.initial, "nodes": spec.model.total_nodes}


def llogl_battery(lambdas=(0.5, 1.0, 2.0), steps=(8, 12)) -> list[InequalityReport]:
    """Exponential martingales of ``lam * W`` with one-step jumps at most ``lam / sqrt(N)``."""
    out = []
    for lam in lambdas:
        for n in steps:
            model = build_model(1.0, n)
            M = lam * driver(model)
            desc = {"lambda": lam, "N": n}
            out.extend(_tag(llogl_identity_check(M), **desc))
            L = exponential_martingale(M)
            out.extend(_tag([harremoes_check(L), um_submartingale_check(L)], **desc))
    return out


def inequalities_workload(seed: int, count: int = 1000, max_steps: int = 4, p_values=(1.0, 1.5, 2.0),
                          threads: int = 1, psi_steps: int = 6) -> tuple[list, dict]:
    reports = llogl_battery()

    def one(i):
        A, U = garsia_neveu_instance(instance_seed(seed, i), max_steps)
        res = garsia_neveu_check(A, U, p_values)
        if not res.premise_ok:
            return [make_report("garsia-neveu-premise", -res.premise_margin, 0.0, {"instance": i})]
        return _tag(res.reports, instance=i)

    for rows in ordered_map(one, range(count), threads):
        reports.extend(rows)
    model = build_model(1.0, psi_steps)
    for p in p_values:
        reports.append(maximal_psi_check(model, driver(model).terminal, p))
    return reports, {"garsia_neveu_instances": count}


def dual_workload(seed: int, count: int = 1000, points: int = 8, spaces: int = 1) -> tuple[list, dict]:
    reports = []
    for i in range(spaces):
        rng = np.random.default_rng(instance_seed(seed, i))
        p = rng.dirichlet(np.ones(points) * 2.0)
        xi = rng.normal(0.0, 2.0, points)
        reports.extend(_tag(dual_entropy_check(xi, p, count=count, seed=rng.integers(2**32)), space=i))
    return reports, {"spaces": spaces, "densities": count}


def classify_workload(seed: int, count: int = 200, steps: int = 10, threads: int = 1) -> tuple[list, dict]:
    def one(i):
        inst = classifier_instance(instance_seed(seed, i), steps)
        c = classify_quadratic(inst.Y, inst.params)
        desc = {"instance": i, "label": "member" if inst.member else "violator"}
        rows = [make_report("classifier-label", float(c.is_quadratic != inst.member), 0.0, desc, rel_tol=0.0,
                            extra={"excess": c.direct.worst_excess})]
        worst = min(c.advisory_plus.worst_normalized_drift, c.advisory_minus.worst_normalized_drift)
        agree = c.advisory_passed == inst.member
        # a disagreement is acceptable only while the drift sits inside the declared tolerance
        left = 0.0 if agree else abs(worst)
        rows.append(make_report("classifier-advisory", left, float(np.max(c.tol_exp)), desc, rel_tol=0.0,
                                extra={"agree": agree}))
        return rows

    reports = []
    for rows in ordered_map(one, range(count), threads):
        reports.extend(rows)
    members = sum(1 for r in reports if r.name == "classifier-label" and r.descriptor["label"] == "member")
    return reports, {"instances": count, "members": members}


def band_workload(seed: int, count: int = 20, steps: int = 10, hitting: int = 8, threads: int = 1) -> tuple[list, dict]:
    def one(i):
        ss = instance_seed(seed, i)
        inst = band_instance(ss, steps)
        model: LatticeModel = inst.X.model
        times = sample_stopping_times(model, range(model.steps + 1), inst.X, count=hitting, seed=ss.spawn(1)[0])
        rep = check_entropic_band(inst.X, inst.delta, stopping_pairs(times))
        return make_report("entropic-band", float(len(rep.violations)), 0.0, {"instance": i}, rel_tol=0.0,
                           extra={"min_margin": rep.min_margin, "pairs": rep.pairs_checked})

    return ordered_map(one, range(count), threads), {"instances": count}
