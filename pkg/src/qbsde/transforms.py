"""Entropic processes, exponential transforms and quadratic classifiers.

Discrete integrals use left-endpoint sums ``sum_j f_j (A_{j+1} - A_j)`` so that
finite-variation parts stay predictable.  All entropic quantities are computed
in log-sum-exp form; exponents beyond ``OVERFLOW_LOG`` raise instead of
propagating infinities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import (
    AdaptedProcess,
    LatticeError,
    LatticeModel,
    PathDependenceError,
    StoppingTime,
    doob_decompose,
    one_step_drift,
)

OVERFLOW_LOG = 700.0


class EntropicOverflowError(OverflowError):
    """An exponent left the representable log-space headroom."""


class DominationError(ValueError):
    """The dominating terminal variable does not bound the process."""


def _is_deterministic(X: AdaptedProcess) -> bool:
    return all(np.all(v == v[0]) for v in X.values)


def _check_increasing(X: AdaptedProcess, name: str) -> None:
    model = X.model
    if abs(X.values[0][0]) > 0:
        raise LatticeError(f"{name} must start at 0")
    for k in range(model.steps):
        kids = model.children(X.values[k + 1])
        if np.any(kids < X.values[k][:, None] - 1e-15):
            raise LatticeError(f"{name} decreases after step {k}")


@dataclass(frozen=True, eq=False)
class StructureParams:
    """Increasing processes bounding the drift, and the quadratic weight.

    ``additive`` bounds the drift additively, ``proportional`` multiplies the
    level ``|Y|`` and ``delta`` weights the quadratic variation.
    """

    additive: AdaptedProcess
    proportional: AdaptedProcess
    delta: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise LatticeError("delta must be positive")
        if self.additive.model is not self.proportional.model:
            raise LatticeError("structure processes live on different models")
        _check_increasing(self.additive, "additive bound")
        _check_increasing(self.proportional, "proportional bound")

    @property
    def model(self) -> LatticeModel:
        return self.additive.model

    @property
    def deterministic(self) -> bool:
        return _is_deterministic(self.additive) and _is_deterministic(self.proportional)

    @property
    def vanishing(self) -> bool:
        return self.additive.max_abs() == 0 and self.proportional.max_abs() == 0

    @classmethod
    def zero(cls, model: LatticeModel, delta: float = 1.0) -> "StructureParams":
        z = AdaptedProcess.constant(model, 0.0)
        return cls(z, z, delta)

    @classmethod
    def linear(cls, model: LatticeModel, level: float = 0.0, rate: float = 0.0, delta: float = 1.0) -> "StructureParams":
        """Deterministic bounds growing at constant rates: ``level*t`` and ``rate*t``."""
        t = model.times
        return cls(AdaptedProcess.deterministic(model, level * t),
                   AdaptedProcess.deterministic(model, rate * t), delta)


def _terminal(model: LatticeModel, xi) -> np.ndarray:
    if isinstance(xi, AdaptedProcess):
        return xi.terminal
    arr = np.asarray(xi, dtype=float)
    if arr.ndim == 0:
        arr = np.full(model.leaf_count, float(arr))
    if arr.shape != (model.leaf_count,):
        raise LatticeError(f"terminal variable needs {model.leaf_count} values")
    if not np.all(np.isfinite(arr)):
        raise LatticeError("terminal variable must be finite")
    return arr


def _check_headroom(values: np.ndarray, where: str) -> None:
    mag = np.abs(values)
    i = int(np.argmax(mag))
    if mag[i] > OVERFLOW_LOG:
        raise EntropicOverflowError(f"exponent {values[i]:.6g} at {where} node {i} exceeds {OVERFLOW_LOG}")


def log_mean_exp_step(model: LatticeModel, next_values: np.ndarray) -> np.ndarray:
    """``ln E[exp(X_{k+1}) | F_k]`` from step-``k+1`` values, in log-sum-exp form."""
    kids = model.children(next_values)
    top = np.max(kids, axis=1)
    return top + np.log(model.average_children(np.exp(kids - top[:, None])))


def entropic_values(model: LatticeModel, terminal: np.ndarray, delta: float = 1.0, stop: int = 0) -> list:
    """Arrays of ``(1/delta) ln E[exp(delta xi)|F_k]`` for ``k = stop..N``."""
    scaled = delta * np.asarray(terminal, dtype=float)
    _check_headroom(scaled, "terminal")
    vals = [scaled]
    for _ in range(model.steps - stop):
        vals.append(log_mean_exp_step(model, vals[-1]))
    return [v / delta for v in reversed(vals)]


@dataclass(frozen=True, eq=False)
class EntropicProcess:
    terminal: np.ndarray
    rho: AdaptedProcess
    delta: float


def entropic_process(model: LatticeModel, xi, delta: float = 1.0) -> EntropicProcess:
    """Dynamic entropic value ``rho_k = (1/delta) ln E[exp(delta xi) | F_k]``."""
    if not delta > 0:
        raise LatticeError("delta must be positive")
    term = _terminal(model, xi)
    rho = AdaptedProcess(model, tuple(entropic_values(model, term, delta)))
    return EntropicProcess(term, rho, float(delta))


def entropic_at(model: LatticeModel, terminal: np.ndarray, k: int, delta: float = 1.0) -> np.ndarray:
    return entropic_values(model, terminal, delta, stop=k)[0]


@dataclass(frozen=True, eq=False)
class PhiFamily:
    """Path-indexed family ``phi_{k,N}``: ``values[k]`` holds one entry per leaf."""

    values: np.ndarray
    params: StructureParams

    def at(self, k: int) -> np.ndarray:
        return self.values[k]


def _params_on_paths(params: StructureParams):
    return params.additive.path_matrix(), params.proportional.path_matrix()


def phi_explicit(eta, params: StructureParams) -> PhiFamily:
    """``phi_{k,N} = e^{C_{k,N}} eta + sum_{j>=k} e^{C_{k,j}} dLambda_{j+1}`` on every path.

    Computed backwards via ``phi_k = dLambda_{k+1} + e^{dC_{k+1}} phi_{k+1}``.
    """
    model = params.model
    model.require_tree("the path family phi")
    eta = _terminal(model, eta)
    if np.any(eta < 0):
        raise LatticeError("eta must be non-negative")
    lam, cc = _params_on_paths(params)
    out = np.empty((model.steps + 1, model.leaf_count))
    out[-1] = eta
    for k in range(model.steps - 1, -1, -1):
        out[k] = (lam[k + 1] - lam[k]) + np.exp(cc[k + 1] - cc[k]) * out[k + 1]
    return PhiFamily(out, params)


def phi_u_defect(phi: PhiFamily) -> tuple[float, np.ndarray]:
    """Deviation of ``e^{phi_k} + sum_{j<k} e^{phi_j}(dLambda + phi_j dC)`` from a constant.

    Returns the largest pathwise accumulated defect and the per-step maxima of
    the one-step changes.
    """
    lam, cc = _params_on_paths(phi.params)
    ph = phi.values
    steps = ph.shape[0] - 1
    per_step = np.empty(steps)
    total = np.zeros(ph.shape[1])
    for k in range(steps):
        change = np.exp(ph[k + 1]) - np.exp(ph[k]) + np.exp(ph[k]) * ((lam[k + 1] - lam[k]) + ph[k] * (cc[k + 1] - cc[k]))
        per_step[k] = float(np.max(np.abs(change)))
        total += np.abs(change)
    return float(np.max(total)), per_step


def _phi_terminal_at(params: StructureParams, eta: np.ndarray, k: int, family: PhiFamily | None) -> np.ndarray:
    if family is not None:
        return family.values[k]
    lam = [float(v[0]) for v in params.additive.values]
    cc = [float(v[0]) for v in params.proportional.values]
    N = len(lam) - 1
    shift = sum(np.exp(cc[j] - cc[k]) * (lam[j + 1] - lam[j]) for j in range(k, N))
    return np.exp(cc[N] - cc[k]) * eta + shift


def log_phi_projection(eta, params: StructureParams) -> AdaptedProcess:
    """``ln Phi_k = ln E[exp(phi_{k,N}) | F_k]`` at every node.

    Deterministic bounds work on recombining trees; path-dependent bounds need
    the full tree.
    """
    model = params.model
    eta = _terminal(model, eta)
    if np.any(eta < 0):
        raise LatticeError("eta must be non-negative")
    family = None
    if not params.deterministic:
        family = phi_explicit(eta, params)
    vals = []
    for k in range(model.steps + 1):
        vals.append(entropic_at(model, _phi_terminal_at(params, eta, k, family), k))
    return AdaptedProcess(model, tuple(vals))


def phi_projection(eta, params: StructureParams) -> AdaptedProcess:
    """The supermartingale ``Phi_k = E[exp(phi_{k,N}) | F_k]``."""
    logs = log_phi_projection(eta, params)
    for k, v in enumerate(logs.values):
        _check_headroom(v, f"step {k}")
    return logs.map(np.exp)


def _running_integral(params: StructureParams, integrand_lambda, integrand_c) -> list:
    """Left-endpoint sums ``sum_{j<k} a_j dLambda_{j+1} + b_j dC_{j+1}`` as node arrays."""
    model = params.model
    lam, cc = params.additive, params.proportional
    vals = [np.zeros(1)]
    for k in range(model.steps):
        inc = model.expand(integrand_lambda[k]) * lam.increments(k) + model.expand(integrand_c[k]) * cc.increments(k)
        vals.append(model.expand(vals[-1]) + inc)
    return vals


def x_transform(Y: AdaptedProcess, params: StructureParams) -> AdaptedProcess:
    """``X_k = Y_k + Lambda_k + sum_{j<k} |Y_j| dC_{j+1}``."""
    ones = [np.zeros_like(v) for v in Y.values]
    absy = [np.abs(v) for v in Y.values]
    integral = _running_integral(params, ones, absy)
    return Y + params.additive + AdaptedProcess(Y.model, tuple(integral))


def xbar_transform(Y: AdaptedProcess, params: StructureParams) -> AdaptedProcess:
    """``Xbar_k = e^{C_k}|Y_k| + sum_{j<k} e^{C_j} dLambda_{j+1}``."""
    ec = [np.exp(v) for v in params.proportional.values]
    zeros = [np.zeros_like(v) for v in Y.values]
    integral = _running_integral(params, ec, zeros)
    head = AdaptedProcess(Y.model, tuple(e * np.abs(y) for e, y in zip(ec, Y.values)))
    return head + AdaptedProcess(Y.model, tuple(integral))


def u_transform(Y: AdaptedProcess, params: StructureParams, sign: int = 1) -> AdaptedProcess:
    """``U_k = e^{sY_k} + sum_{j<k} e^{sY_j}(dLambda_{j+1} + |Y_j| dC_{j+1})``."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    for k, v in enumerate(Y.values):
        _check_headroom(v, f"step {k}")
    ex = [np.exp(sign * v) for v in Y.values]
    integral = _running_integral(params, ex, [e * np.abs(v) for e, v in zip(ex, Y.values)])
    return AdaptedProcess(Y.model, tuple(e + i for e, i in zip(ex, integral)))


@dataclass(frozen=True)
class DirectVerdict:
    passed: bool
    worst_step: int
    worst_node: int
    worst_excess: float


@dataclass(frozen=True)
class AdvisoryVerdict:
    passed: bool
    worst_step: int
    worst_node: int
    defect_total: float
    worst_normalized_drift: float


@dataclass(frozen=True)
class Classification:
    """Both verdicts of the quadratic classifier, reported separately."""

    direct: DirectVerdict
    advisory_plus: AdvisoryVerdict
    advisory_minus: AdvisoryVerdict
    tol: float
    tol_exp: np.ndarray

    @property
    def verdict(self) -> str:
        return "Q-semimartingale" if self.direct.passed else "not Q"

    @property
    def is_quadratic(self) -> bool:
        return self.direct.passed

    @property
    def advisory_passed(self) -> bool:
        return self.advisory_plus.passed and self.advisory_minus.passed

    @property
    def advisory_defect(self) -> float:
        return self.advisory_plus.defect_total + self.advisory_minus.defect_total


def _advisory(Z: AdaptedProcess, params: StructureParams, sign: int, tol_exp: np.ndarray) -> AdvisoryVerdict:
    U = u_transform(Z, params, sign)
    worst = (np.inf, 0, 0)
    total = 0.0
    ok = True
    for k in range(Z.steps):
        drift = one_step_drift(U, k) / np.exp(sign * Z.values[k])
        i = int(np.argmin(drift))
        if drift[i] < worst[0]:
            worst = (float(drift[i]), k, i)
        total += max(0.0, -float(drift[i]))
        if drift[i] < -tol_exp[k]:
            ok = False
    return AdvisoryVerdict(ok, worst[1], worst[2], total, worst[0])


def classify_quadratic(
    Y: AdaptedProcess,
    params: StructureParams,
    tol: float = 1e-12,
    tol_exp: np.ndarray | float | None = None,
) -> Classification:
    """Decide membership of ``Y`` in the quadratic class of ``params``.

    The direct check compares the Doob drift with the structure bound along
    every branch and is authoritative.  The advisory check asks whether the
    exponential transforms of ``delta*Y`` and ``-delta*Y`` are submartingales,
    allowing a per-step tolerance (default ``5 * max(dQV)^2``) on drifts
    normalized by ``exp(+-delta*Y_k)``.
    """
    model = Y.model
    delta = params.delta
    dec = doob_decompose(Y)
    V, QV = dec.finite_variation, dec.qv
    worst = (-np.inf, 0, 0)
    for k in range(model.steps):
        dv = np.abs(V.increments(k))
        bound = (params.additive.increments(k) / delta
                 + model.expand(np.abs(Y.values[k])) * params.proportional.increments(k)
                 + 0.5 * delta * QV.increments(k))
        excess = dv - bound
        i = int(np.argmax(excess))
        if excess[i] > worst[0]:
            worst = (float(excess[i]), k, i // model.branching)
    direct = DirectVerdict(worst[0] <= tol, worst[1], worst[2], worst[0])

    if tol_exp is None:
        scaled_qv = [delta * delta * QV.increments(k) for k in range(model.steps)]
        tol_arr = np.array([5.0 * float(np.max(q)) ** 2 for q in scaled_qv])
    else:
        tol_arr = np.broadcast_to(np.asarray(tol_exp, dtype=float), (model.steps,)).copy()
    Z = delta * Y
    plus = _advisory(Z, params, 1, tol_arr)
    minus = _advisory(Z, params, -1, tol_arr)
    return Classification(direct, plus, minus, tol, tol_arr)


@dataclass(frozen=True)
class BandViolation:
    pair: int
    step: int
    node: int
    side: str
    amount: float


@dataclass(frozen=True)
class BandReport:
    passed: bool
    violations: list = field(default_factory=list)
    min_margin: float = np.inf
    pairs_checked: int = 0


def check_entropic_band(
    X: AdaptedProcess,
    delta: float,
    pairs,
    tol: float = 1e-12,
) -> BandReport:
    """Check ``-rho_s(-X_t) <= X_s <= rho_s(X_t)`` for stopping pairs ``s <= t``.

    ``tol`` is relative to ``max(1, max|X|)``.
    """
    model = X.model
    atol = tol * max(1.0, X.max_abs())
    violations = []
    min_margin = np.inf
    for idx, (sigma, tau) in enumerate(pairs):
        if not sigma.precedes(tau):
            raise LatticeError(f"pair {idx} is not ordered")
        xt = tau.sample(X)
        upper = entropic_values(model, xt, delta)
        lower = [-v for v in entropic_values(model, -xt, delta)]
        for k in range(model.steps + 1):
            mask = sigma.stops_at(k)
            if not np.any(mask):
                continue
            nodes = np.flatnonzero(mask)
            x = X.values[k][nodes]
            up = upper[k][nodes] - x
            lo = x - lower[k][nodes]
            min_margin = min(min_margin, float(np.min(up)), float(np.min(lo)))
            for side, slack in (("upper", up), ("lower", lo)):
                bad = np.flatnonzero(slack < -atol)
                for b in bad:
                    violations.append(BandViolation(idx, k, int(nodes[b]), side, float(-slack[b])))
    return BandReport(not violations, violations, min_margin, len(pairs))


@dataclass(frozen=True)
class MembershipReport:
    member: bool
    margin: float
    worst_step: int
    worst_node: int


def check_sq_membership(
    Y: AdaptedProcess,
    eta,
    params: StructureParams,
    stopping_times: list[StoppingTime] | None = None,
    tol: float = 0.0,
) -> MembershipReport:
    """Test ``|Y_s| <= (1/delta) ln Phi_s(delta |eta|)`` at the tested times.

    Without stopping times every node is tested, which covers every stopping
    time at once.  ``margin`` is the smallest slack found.
    """
    model = Y.model
    eta = np.abs(_terminal(model, eta))
    scale = max(1.0, float(np.max(np.abs(Y.terminal))))
    excess = np.abs(Y.terminal) - eta
    if np.max(excess) > 1e-12 * scale:
        i = int(np.argmax(excess))
        raise DominationError(f"|Y_N| exceeds |eta| by {excess[i]:.3e} at leaf {i}")
    delta = params.delta
    bound = log_phi_projection(delta * eta, params)
    worst = (np.inf, 0, 0)
    for k in range(model.steps + 1):
        slack = bound.values[k] / delta - np.abs(Y.values[k])
        if stopping_times is not None:
            mask = np.zeros(model.node_count(k), dtype=bool)
            for st in stopping_times:
                mask |= st.stops_at(k)
            if not np.any(mask):
                continue
            slack = np.where(mask, slack, np.inf)
        i = int(np.argmin(slack))
        if slack[i] < worst[0]:
            worst = (float(slack[i]), k, i)
    return MembershipReport(worst[0] >= -tol, worst[0], worst[1], worst[2])


__all__ = [
    "AdvisoryVerdict",
    "BandReport",
    "BandViolation",
    "Classification",
    "DirectVerdict",
    "DominationError",
    "EntropicOverflowError",
    "EntropicProcess",
    "MembershipReport",
    "OVERFLOW_LOG",
    "PathDependenceError",
    "PhiFamily",
    "StructureParams",
    "check_entropic_band",
    "check_sq_membership",
    "classify_quadratic",
    "entropic_at",
    "entropic_process",
    "entropic_values",
    "log_mean_exp_step",
    "log_phi_projection",
    "phi_explicit",
    "phi_projection",
    "phi_u_defect",
    "u_transform",
    "x_transform",
    "xbar_transform",
]
