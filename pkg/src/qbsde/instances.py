"""Seeded test instances with known ground truth.

Every builder takes a seed (int or ``SeedSequence``) and is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import Coefficient, GrowthBound
from .lattice import AdaptedProcess, LatticeModel, build_model, driver
from .transforms import StructureParams


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _volatility(model: LatticeModel, rng: np.random.Generator, low: float, high: float) -> list:
    return [rng.uniform(low, high, model.node_count(k)) for k in range(model.steps)]


def _assemble(model: LatticeModel, y0: float, drift: list, sigma: list) -> AdaptedProcess:
    """``Y_{k+1} = Y_k + drift_k + sigma_k dW_k`` along every branch."""
    dw = model.branch_increments(0)[:, 0] if model.dim == 1 else None
    if dw is None:
        raise ValueError("instances are one-dimensional")
    vals = [np.array([float(y0)])]
    for k in range(model.steps):
        b = model.branching
        step = np.repeat(drift[k], b) + np.repeat(sigma[k], b) * np.tile(dw, model.node_count(k))
        vals.append(model.expand(vals[-1]) + step)
    return AdaptedProcess(model, tuple(vals))


@dataclass(frozen=True, eq=False)
class BandInstance:
    X: AdaptedProcess
    delta: float
    alpha: tuple
    sigma: tuple


def band_instance(seed, steps: int = 10, delta: float = 1.0) -> BandInstance:
    """Semimartingale whose drift sits inside the exact one-step entropic band.

    With ``kappa(s) = ln E[exp(s dM) | F_k]`` the drift is
    ``alpha * kappa(-delta) / delta`` for ``alpha >= 0`` and
    ``alpha * kappa(delta) / delta`` for ``alpha < 0``, ``|alpha| <= 1``.  A
    third of the nodes saturate at ``alpha = +-1``.
    """
    rng = _rng(seed)
    model = build_model(1.0, steps)
    sigma = _volatility(model, rng, 0.2, 1.5)
    dw = model.branch_increments(0)[:, 0]
    p = np.asarray(model.probabilities)
    drift, alphas = [], []
    for k in range(steps):
        n = model.node_count(k)
        a = rng.uniform(-1.0, 1.0, n)
        sat = rng.uniform(size=n) < 1.0 / 3.0
        a[sat] = np.sign(a[sat])
        s = sigma[k][:, None] * dw[None, :]
        up = np.log(np.exp(delta * s) @ p) / delta
        down = np.log(np.exp(-delta * s) @ p) / delta
        drift.append(np.where(a >= 0, a * down, a * up))
        alphas.append(a)
    y0 = float(rng.normal())
    return BandInstance(_assemble(model, y0, drift, sigma), delta, tuple(alphas), tuple(sigma))


@dataclass(frozen=True, eq=False)
class ClassifierInstance:
    Y: AdaptedProcess
    params: StructureParams
    member: bool
    alpha: tuple


def _structured(model, params, rng, sigma, alpha_of) -> tuple[AdaptedProcess, tuple]:
    """Build ``Y`` with ``dV = alpha * (dL/delta + |Y| dC + delta/2 dQV)`` node by node."""
    delta = params.delta
    dw = model.branch_increments(0)[:, 0]
    vals = [np.array([float(rng.normal(0.0, 0.5))])]
    alphas = []
    for k in range(model.steps):
        y = vals[-1]
        qv = sigma[k] ** 2 * model.dt
        dl = params.additive.increments(k)[::model.branching]
        dc = params.proportional.increments(k)[::model.branching]
        bound = dl / delta + np.abs(y) * dc + 0.5 * delta * qv
        a = alpha_of(k, y.shape[0])
        alphas.append(a)
        step = np.repeat(-a * bound, model.branching) + np.repeat(sigma[k], model.branching) * np.tile(dw, y.shape[0])
        vals.append(model.expand(y) + step)
    return AdaptedProcess(model, tuple(vals)), tuple(alphas)


def classifier_instance(seed, steps: int = 10, violate: bool | None = None) -> ClassifierInstance:
    """Quadratic semimartingale with a ground-truth label.

    Members use ``|alpha| <= 1`` with frequent saturation.  Violators push
    ``|alpha|`` to 2.5 on a random set of steps and nodes.
    """
    rng = _rng(seed)
    model = build_model(1.0, steps)
    if violate is None:
        violate = bool(rng.uniform() < 0.5)
    delta = float(rng.choice([0.5, 1.0, 2.0]))
    params = StructureParams.linear(model, float(rng.uniform(0.0, 0.5)), float(rng.uniform(0.0, 0.5)), delta)
    sigma = [rng.uniform(0.3, 0.4, model.node_count(k)) / delta for k in range(steps)]
    bad_steps = set(rng.choice(steps, size=max(1, steps // 4), replace=False).tolist()) if violate else set()

    def alpha_of(k, n):
        a = rng.uniform(-1.0, 1.0, n)
        sat = rng.uniform(size=n) < 0.5
        a[sat] = np.sign(a[sat])
        if k in bad_steps:
            hit = rng.uniform(size=n) < 0.5
            hit[rng.integers(n)] = True
            a[hit] = 2.5 * np.where(rng.uniform(size=int(hit.sum())) < 0.5, -1.0, 1.0)
        return a

    Y, alphas = _structured(model, params, rng, sigma, alpha_of)
    member = all(np.all(np.abs(a) <= 1.0) for a in alphas)
    return ClassifierInstance(Y, params, member, alphas)


def saturated_instance(seed, steps: int) -> ClassifierInstance:
    """Member saturating the bound everywhere with a smooth deterministic volatility.

    The volatility path and the saturation sign depend only on ``seed``, so
    two step counts give the same continuous-time model.
    """
    rng = _rng(seed)
    sign = float(rng.choice([-1.0, 1.0]))
    amp, freq, base = rng.uniform(0.1, 0.4), rng.uniform(0.5, 2.0), rng.uniform(0.6, 1.0)
    model = build_model(1.0, steps)
    params = StructureParams.zero(model, 1.0)
    times = model.times[:-1]
    sigma = [np.full(model.node_count(k), base + amp * np.sin(2 * np.pi * freq * times[k])) for k in range(steps)]
    local = np.random.default_rng(0)
    Y, alphas = _structured(model, params, local, sigma, lambda k, n: np.full(n, sign))
    return ClassifierInstance(Y, params, True, alphas)


@dataclass(frozen=True)
class LipschitzDriver:
    """``a sin(y) + b y + c sqrt(1 + |z|^2)``, Lipschitz with constant ``|a| + |b| + |c|``.

    For ``|c| <= 1`` it satisfies ``|g| <= 1.5|c| + (|a| + |b|)|y| + |z|^2 / 2``.
    """

    a: float
    b: float
    c: float

    def coefficient(self) -> Coefficient:
        a, b, c = self.a, self.b, self.c

        def func(t, y, z):
            return a * np.sin(y) + b * y + c * np.sqrt(1.0 + np.sum(z * z, axis=-1))

        lip = abs(a) + abs(b) + abs(c)
        growth = GrowthBound(1.5 * abs(c), abs(a) + abs(b), 1.0)
        return Coefficient(func, growth, lipschitz=lip, name=f"lipschitz({a:.6g},{b:.6g},{c:.6g})")


def lipschitz_instance(seed) -> tuple[LipschitzDriver, float, float]:
    """Driver and terminal ``xi = A (1 + sin(W_T)) + B (1 + tanh(W_T))`` as ``(driver, A, B)``.

    Parameters keep ``xi >= 0``, ``g > 0`` and ``dg/dy > 0`` on ``y >= 0``,
    so the leading discretization error between schemes has a fixed sign.
    """
    rng = _rng(seed)
    b = float(rng.uniform(0.5, 1.0))
    drv = LipschitzDriver(float(rng.uniform(-0.5, 0.5)) * b, b, float(rng.uniform(0.5, 1.0)))
    return drv, float(rng.uniform(0.5, 1.5)), float(rng.uniform(0.0, 1.0))


def lipschitz_terminal(model: LatticeModel, amp: float, slope: float) -> np.ndarray:
    w = driver(model).terminal
    return amp * (1.0 + np.sin(w)) + slope * (1.0 + np.tanh(w))


def random_martingale(seed, steps: int, scale: float = 1.0) -> AdaptedProcess:
    """``M_{k+1} = M_k + sigma_k dW_k`` from 0 with random positive node volatilities."""
    rng = _rng(seed)
    model = build_model(1.0, steps)
    sigma = _volatility(model, rng, 0.1 * scale, scale)
    return _assemble(model, 0.0, [np.zeros(model.node_count(k)) for k in range(steps)], sigma)
