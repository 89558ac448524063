"""Backward solvers for lattice BSDEs ``dY = -g(t, Y, Z) dK + Z dN``.

``Z`` is the conditional regression of ``Y_{k+1}`` on the driver increment,
which is the exact martingale-representation weight on a binary tree.  On
recombining trees only the path-independent parts ``Y``, ``Z`` and the
one-step drift and variance increments are produced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import Coefficient, kappa_eval
from .lattice import AdaptedProcess, LatticeError, LatticeModel, doob_decompose
from .transforms import StructureParams, _check_increasing, _terminal, entropic_values


class SolverError(RuntimeError):
    """A backward sweep or an iteration failed."""


@dataclass(frozen=True, eq=False)
class BSDESpec:
    """Data of a lattice BSDE.

    ``clock`` is the increasing process ``K`` multiplying the driver (default
    ``K_t = t``); ``weights`` scale the driver coordinates so that
    ``d<N^i> = weights[i] dK``.
    """

    model: LatticeModel
    coefficient: Coefficient
    terminal: np.ndarray
    structure: StructureParams | None = None
    clock: AdaptedProcess | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        model = self.model
        object.__setattr__(self, "terminal", _terminal(model, self.terminal).copy())
        if self.coefficient.dim != model.dim:
            raise LatticeError("coefficient dimension does not match the model")
        if self.structure is None:
            gr = self.coefficient.growth
            object.__setattr__(self, "structure", StructureParams.linear(model, gr.level, gr.rate, gr.delta))
        if self.clock is None:
            object.__setattr__(self, "clock", AdaptedProcess.deterministic(model, model.times))
        _check_increasing(self.clock, "clock")
        for k in range(model.steps):
            kids = model.children(self.clock.values[k + 1])
            if np.any(kids != kids[:, :1]):
                raise LatticeError(f"clock increment after step {k} is not predictable")
        w = np.ones(model.dim) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (model.dim,) or np.any(w <= 0):
            raise LatticeError("weights must be positive, one per driver coordinate")
        object.__setattr__(self, "weights", w)

    @property
    def dimension(self) -> int:
        return self.model.dim

    def clock_increment(self, k: int) -> np.ndarray:
        return self.model.children(self.clock.values[k + 1])[:, 0] - self.clock.values[k]

    def driver_increments(self) -> np.ndarray:
        """Branch increments of ``N``: shape ``(b, d)``."""
        return self.model.increments * np.sqrt(self.weights)


def project_z(model: LatticeModel, next_values: np.ndarray, increments: np.ndarray) -> np.ndarray:
    """``E[Y_{k+1} dN | F_k] / E[dN^2 | F_k]`` per coordinate: shape ``(n_k, d)``."""
    kids = model.children(next_values)
    p = model.probabilities
    num = p[0] * kids[:, 0, None] * increments[0]
    for j in range(1, model.branching):
        num = num + p[j] * kids[:, j, None] * increments[j]
    den = np.zeros(increments.shape[1])
    for j in range(model.branching):
        den = den + p[j] * increments[j] ** 2
    return num / den


@dataclass(frozen=True)
class SolverDiagnostics:
    scheme: str
    iterations: int
    max_defect: float
    orthogonal_part: float | None = None


@dataclass(frozen=True, eq=False)
class BSDESolution:
    """Solution on the lattice.

    ``Z[k]`` (``k < N``) has shape ``(n_k, d)``.  ``drift[k]`` is the
    predictable increment ``V_{k+1} - V_k`` and ``qv_step[k]`` the conditional
    variance of ``M_{k+1} - M_k``, both at the nodes of step ``k``.  ``V``,
    ``M`` and ``QV`` are path sums and are ``None`` on recombining trees.
    """

    Y: AdaptedProcess
    Z: tuple
    drift: tuple
    qv_step: tuple
    V: AdaptedProcess | None
    M: AdaptedProcess | None
    QV: AdaptedProcess | None
    diagnostics: SolverDiagnostics

    @property
    def model(self) -> LatticeModel:
        return self.Y.model

    @property
    def initial(self) -> float:
        return self.Y.initial

    def max_abs_z(self) -> float:
        return max(float(np.max(np.abs(z))) for z in self.Z) if self.Z else 0.0


def _finish(spec: BSDESpec | None, model: LatticeModel, Y: list, scheme: str, iterations: int,
            defect: float, increments: np.ndarray) -> BSDESolution:
    Yp = AdaptedProcess(model, tuple(Y))
    Z = tuple(project_z(model, Y[k + 1], increments) for k in range(model.steps))
    drift = tuple(Y[k] - model.expect_step(Y[k + 1]) for k in range(model.steps))
    qv = []
    for k in range(model.steps):
        kids = model.children(Y[k + 1])
        dm = kids - (Y[k] - drift[k])[:, None]
        qv.append(model.average_children(dm * dm))
    V = M = QV = None
    ortho = None
    if not model.recombining:
        dec = doob_decompose(Yp)
        V, M, QV = dec.finite_variation, dec.martingale, dec.qv
        rep = [np.zeros(1)]
        for k in range(model.steps):
            step = np.sum(model.expand(Z[k]) * np.tile(increments, (model.node_count(k), 1)), axis=1)
            rep.append(model.expand(rep[-1]) + step)
        ortho = max(float(np.max(np.abs(M.values[k] - rep[k]))) for k in range(model.steps + 1))
    return BSDESolution(Yp, Z, drift, tuple(qv), V, M, QV, SolverDiagnostics(scheme, iterations, defect, ortho))


def _implicit_node_solve(g: Coefficient, t: float, a: np.ndarray, z: np.ndarray, dk: np.ndarray,
                         tol: float, max_iters: int) -> tuple[np.ndarray, int]:
    """Solve ``y = a + g(t, y, z) dK`` node-wise.

    Plain fixed-point steps first; nodes that stall or diverge switch to
    Newton steps with a central-difference derivative.
    """
    y = a.copy()
    active = np.ones(a.shape[0], dtype=bool)
    prev_gap = np.full(a.shape[0], np.inf)
    newton = np.zeros(a.shape[0], dtype=bool)
    for it in range(1, max_iters + 1):
        idx = np.flatnonzero(active)
        ya, za, aa, dka = y[idx], z[idx], a[idx], dk[idx]
        target = aa + g(t, ya, za) * dka
        gap = np.abs(target - ya)
        new = target.copy()
        nw = newton[idx]
        if np.any(nw):
            h = 1e-7 * (1.0 + np.abs(ya[nw]))
            slope = (g(t, ya[nw] + h, za[nw]) - g(t, ya[nw] - h, za[nw])) / (2 * h)
            resid = ya[nw] - target[nw]
            denom = 1.0 - slope * dka[nw]
            denom = np.where(np.abs(denom) < 1e-14, 1e-14, denom)
            new[nw] = ya[nw] - resid / denom
        y[idx] = new
        done = gap <= tol * np.maximum(1.0, np.abs(aa))
        stalled = (gap > 0.5 * prev_gap[idx]) & ~done
        newton[idx[stalled]] = True
        prev_gap[idx] = gap
        active[idx[done]] = False
        if not np.any(active):
            return y, it
    bad = int(np.flatnonzero(active)[0])
    raise SolverError(f"implicit step did not converge at node {bad} within {max_iters} iterations")


def solve_backward(spec: BSDESpec, scheme: str = "implicit", tol: float = 1e-12,
                   max_inner_iters: int = 100) -> BSDESolution:
    """Backward induction with the explicit or implicit one-step scheme."""
    if scheme not in ("explicit", "implicit"):
        raise ValueError("scheme must be 'explicit' or 'implicit'")
    model = spec.model
    g = spec.coefficient
    inc = spec.driver_increments()
    Y = [None] * (model.steps + 1)
    Y[-1] = spec.terminal.copy()
    worst_iters = 0
    worst_defect = 0.0
    for k in range(model.steps - 1, -1, -1):
        t = model.time(k)
        a = model.expect_step(Y[k + 1])
        z = project_z(model, Y[k + 1], inc)
        dk = spec.clock_increment(k)
        if scheme == "explicit":
            y = a + g(t, a, z) * dk
            defect = 0.0
        else:
            y, its = _implicit_node_solve(g, t, a, z, dk, tol, max_inner_iters)
            worst_iters = max(worst_iters, its)
            defect = float(np.max(np.abs(y - a - g(t, y, z) * dk)))
        if not np.all(np.isfinite(y)):
            raise SolverError(f"non-finite value at step {k}")
        worst_defect = max(worst_defect, defect)
        Y[k] = y
    return _finish(spec, model, Y, scheme, worst_iters, worst_defect, inc)


def solve_entropic_oracle(model: LatticeModel, xi, delta: float = 1.0) -> BSDESolution:
    """Exact solution for the driver ``(delta/2)|z|^2``: the entropic process."""
    term = _terminal(model, xi)
    Y = entropic_values(model, term, delta)
    return _finish(None, model, Y, "entropic-oracle", 0, 0.0, model.increments)


@dataclass(frozen=True)
class PicardTrace:
    differences: tuple
    contraction: tuple
    converged: bool


class PicardError(SolverError):
    def __init__(self, message: str, trace: PicardTrace):
        super().__init__(message)
        self.trace = trace


def picard_solve(spec: BSDESpec, tol: float = 1e-12, max_iters: int = 200) -> tuple[BSDESolution, PicardTrace]:
    """Iterate backward solves with the driver frozen at the previous iterate."""
    g = spec.coefficient
    if g.lipschitz is None:
        raise SolverError("Picard iteration needs a driver with a declared Lipschitz constant")
    model = spec.model
    inc = spec.driver_increments()
    Y_old = [np.zeros(model.node_count(k)) for k in range(model.steps + 1)]
    Z_old = [np.zeros((model.node_count(k), model.dim)) for k in range(model.steps)]
    diffs = []
    for it in range(1, max_iters + 1):
        Y = [None] * (model.steps + 1)
        Y[-1] = spec.terminal.copy()
        for k in range(model.steps - 1, -1, -1):
            a = model.expect_step(Y[k + 1])
            Y[k] = a + g(model.time(k), Y_old[k], Z_old[k]) * spec.clock_increment(k)
        Z = [project_z(model, Y[k + 1], inc) for k in range(model.steps)]
        diff = max(float(np.max(np.abs(y1 - y0))) for y1, y0 in zip(Y, Y_old))
        diffs.append(diff)
        Y_old, Z_old = Y, Z
        if diff <= tol:
            trace = PicardTrace(tuple(diffs), _ratios(diffs), True)
            sol = _finish(spec, model, Y, "picard", it, 0.0, inc)
            return sol, trace
    trace = PicardTrace(tuple(diffs), _ratios(diffs), False)
    raise PicardError(f"Picard iteration did not reach {tol:g} in {max_iters} iterations", trace)


def _ratios(diffs: list) -> tuple:
    return tuple(b / a if a > 0 else 0.0 for a, b in zip(diffs, diffs[1:]))


@dataclass(frozen=True)
class ResidualReport:
    max_defect: float
    total_defect: float
    profile: np.ndarray
    worst_step: int
    worst_node: int
    growth_ok: bool
    growth_excess: float


def residual_check(solution: BSDESolution, spec: BSDESpec) -> ResidualReport:
    """Recompute ``Y_k - E[Y_{k+1}|F_k] - g(t_k, Y_k, Z_k) dK`` from the stored ``(Y, Z)``.

    ``total_defect`` sums the per-step maxima; ``growth_ok`` checks
    ``|g| <= kappa`` at the visited points.
    """
    model = spec.model
    g = spec.coefficient
    Y = solution.Y
    profile = np.zeros(model.steps)
    worst = (0.0, 0, 0)
    growth_excess = -np.inf
    for k in range(model.steps):
        t = model.time(k)
        z = solution.Z[k]
        gv = g(t, Y.values[k], z)
        d = np.abs(Y.values[k] - model.expect_step(Y.values[k + 1]) - gv * spec.clock_increment(k))
        i = int(np.argmax(d))
        profile[k] = d[i]
        if d[i] > worst[0]:
            worst = (float(d[i]), k, i)
        zw = z * np.sqrt(spec.weights)
        growth_excess = max(growth_excess, float(np.max(np.abs(gv) - kappa_eval(t, Y.values[k], zw, g.growth))))
    return ResidualReport(worst[0], float(np.sum(profile)), profile, worst[1], worst[2],
                          growth_excess <= 1e-12 * max(1.0, Y.max_abs()), growth_excess)
