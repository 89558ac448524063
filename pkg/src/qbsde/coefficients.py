"""Quadratic drivers, their growth bounds and inf-convolution regularization.

The regularization of ``g`` at level ``n`` is

    g_n(t, y, z) = inf_{u, w} g(t, u, w) + n |y - u| + n |z - w|_1,

the largest ``n``-Lipschitz minorant of ``g``.  For drivers that are exactly
``(a/2)|z|^2`` the infimum is available in closed form (a coordinate-wise
Huber function).  Otherwise it is computed on a grid by separable 1-D
distance transforms, one pass along ``u`` and one along ``w``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class RegularizationError(ValueError):
    """Inf-convolution could not be computed reliably."""


class GridTooSmallError(RegularizationError):
    """The grid infimum sits on the grid boundary, or a query left the grid."""


class UnboundedBelowError(RegularizationError):
    """The driver is not bounded below, so its inf-convolution is -infinity."""


@dataclass(frozen=True)
class GrowthBound:
    """Constants of the quadratic bound ``|l| + c|y| + (delta/2)|z|^2``."""

    level: float = 0.0
    rate: float = 0.0
    delta: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.rate < 0:
            raise ValueError("rate must be non-negative")


def _prepare(y, z, dim: int):
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.ndim == y.ndim:
        if dim != 1:
            raise ValueError(f"z needs a trailing axis of length {dim}")
        z = z[..., None]
    if z.shape[-1] != dim:
        raise ValueError(f"z has {z.shape[-1]} components, expected {dim}")
    y, z0 = np.broadcast_arrays(y, z[..., 0])
    z = np.broadcast_to(z, y.shape + (dim,))
    return y, z


@dataclass(frozen=True, eq=False)
class Coefficient:
    """A driver ``g(t, y, z)`` with declared growth data.

    ``func`` receives ``y`` of shape ``(...)`` and ``z`` of shape ``(..., dim)``
    and must be vectorized.  ``quadratic_z = a`` declares that ``g`` equals
    ``(a/2)|z|^2`` identically, which enables closed-form regularization.
    """

    func: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    growth: GrowthBound = field(default_factory=GrowthBound)
    lipschitz: float | None = None
    quadratic_z: float | None = None
    dim: int = 1
    time_dependent: bool = False
    name: str = "g"

    def __call__(self, t, y, z) -> np.ndarray:
        y, z = _prepare(y, z, self.dim)
        return np.asarray(self.func(t, y, z), dtype=float) * np.ones(y.shape)

    def kappa(self, t, y, z) -> np.ndarray:
        return kappa_eval(t, y, z, self.growth)


def kappa_eval(t, y, z, growth: GrowthBound) -> np.ndarray:
    """Structure bound ``|l| + c|y| + (delta/2)|z|^2`` (Euclidean ``|z|``)."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    zz = z * z if z.ndim == y.ndim else np.sum(z * z, axis=-1)
    return abs(growth.level) + growth.rate * np.abs(y) + 0.5 * growth.delta * zz


def q_trunc(z, n: float, axis: int | None = None):
    """Truncated square ``q_n``: ``|z|^2/2`` for ``|z| <= n``, else ``n|z| - n^2/2``.

    ``axis=None`` treats every entry as a scalar; otherwise the Euclidean norm
    along ``axis`` is used.
    """
    if n < 0:
        raise ValueError("truncation level must be non-negative")
    z = np.asarray(z, dtype=float)
    r = np.abs(z) if axis is None else np.sqrt(np.sum(z * z, axis=axis))
    out = np.where(r <= n, 0.5 * r * r, n * r - 0.5 * n * n)
    return float(out) if out.ndim == 0 else out


def quadratic_envelope(z, n: float, a: float = 1.0) -> np.ndarray:
    """``inf_w (a/2)|w|^2 + n|z - w|_1`` summed over the last axis of ``z``."""
    if a < 0:
        raise UnboundedBelowError("negative quadratic has no finite inf-convolution")
    z = np.abs(np.asarray(z, dtype=float))
    if a == 0:
        return np.zeros(z.shape[:-1])
    knee = n / a
    parts = np.where(z <= knee, 0.5 * a * z * z, n * z - 0.5 * n * n / a)
    return np.sum(parts, axis=-1)


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid ``[-radius, radius]`` per axis for numeric inf-convolution."""

    y_radius: float = 10.0
    z_radius: float = 10.0
    points: int = 2001

    def __post_init__(self):
        if self.points < 5:
            raise ValueError("grid needs at least 5 points")
        if not (self.y_radius > 0 and self.z_radius > 0):
            raise ValueError("grid radii must be positive")

    @classmethod
    def around(cls, y_range: float, z_range: float, points: int = 2001) -> "GridSpec":
        """Grid twice as wide as the observed ranges (at least 1)."""
        return cls(2.0 * max(1.0, y_range), 2.0 * max(1.0, z_range), points)


def _envelopes(values: np.ndarray, n: float, h: float):
    fwd = values.copy()
    bwd = values.copy()
    step = n * h
    for i in range(1, values.shape[0]):
        np.minimum(fwd[i], fwd[i - 1] + step, out=fwd[i])
    for i in range(values.shape[0] - 2, -1, -1):
        np.minimum(bwd[i], bwd[i + 1] + step, out=bwd[i])
    return fwd, bwd


class _GridTable:
    """Distance-transform tables for one sampled slice ``g(t, ., .)``."""

    def __init__(self, values: np.ndarray, u: np.ndarray, w: np.ndarray, n: float):
        self.values = values
        self.u = u
        self.w = w
        self.n = n
        self.hu = u[1] - u[0]
        self.hw = w[1] - w[0]
        self.fwd, self.bwd = _envelopes(values, n, self.hu)

    def evaluate(self, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        u, w, n = self.u, self.w, self.n
        eps = 1e-12 * max(1.0, abs(u[-1]))
        if np.any(y < u[0] - eps) or np.any(y > u[-1] + eps) or np.any(z < w[0] - eps) or np.any(z > w[-1] + eps):
            raise GridTooSmallError("query outside the inf-convolution grid")
        out = np.empty(y.shape[0])
        chunk = 256
        for s in range(0, y.shape[0], chunk):
            yy = y[s:s + chunk]
            zz = z[s:s + chunk]
            i = np.clip(np.floor((yy - u[0]) / self.hu).astype(int), 0, u.shape[0] - 2)
            ui = u[i][:, None]
            uj = u[i + 1][:, None]
            theta = (yy[:, None] - ui) / self.hu
            row = np.minimum(self.fwd[i] + n * (yy[:, None] - ui), self.bwd[i + 1] + n * (uj - yy[:, None]))
            row = np.minimum(row, (1.0 - theta) * self.values[i] + theta * self.values[i + 1])
            best = np.min(row + n * np.abs(zz[:, None] - w[None, :]), axis=1)
            j = np.clip(np.floor((zz - w[0]) / self.hw).astype(int), 0, w.shape[0] - 2)
            phi = (zz - w[j]) / self.hw
            rows = np.arange(row.shape[0])
            interp = (1.0 - phi) * row[rows, j] + phi * row[rows, j + 1]
            out[s:s + chunk] = np.minimum(best, interp)
        return out


class _NumericInfConvolution:
    def __init__(self, base: Coefficient, n: float, grid: GridSpec):
        if base.dim != 1:
            raise RegularizationError("numeric inf-convolution is implemented for one-dimensional z only")
        self.base = base
        self.n = float(n)
        self.grid = grid
        self.u = np.linspace(-grid.y_radius, grid.y_radius, grid.points)
        self.w = np.linspace(-grid.z_radius, grid.z_radius, grid.points)
        self._cache: dict = {}

    def _tables(self, t: float):
        key = float(t) if self.base.time_dependent else 0.0
        if key not in self._cache:
            U, Wg = np.meshgrid(self.u, self.w, indexing="ij")
            vals = self.base(key, U, Wg)
            if not np.all(np.isfinite(vals)):
                raise RegularizationError("driver is not finite on the grid")
            full = _GridTable(vals, self.u, self.w, self.n)
            inner = _GridTable(vals[1:-1, 1:-1].copy(), self.u[1:-1], self.w[1:-1], self.n)
            self._cache[key] = (full, inner)
        return self._cache[key]

    def __call__(self, t, y, z):
        full, inner = self._tables(t)
        shape = y.shape
        yf = y.reshape(-1)
        zf = z[..., 0].reshape(-1)
        a = full.evaluate(yf, zf)
        b = inner.evaluate(yf, zf)
        tol = 1e-12 * np.maximum(1.0, np.abs(a))
        bad = a < b - tol
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise GridTooSmallError(
                f"infimum at (y={yf[k]:.6g}, z={zf[k]:.6g}) is attained on the grid boundary; "
                "enlarge the grid or check that the driver is bounded below"
            )
        return a.reshape(shape)


def inf_convolve(g: Coefficient, n: float, grid: GridSpec | None = None) -> Coefficient:
    """Regularize ``g`` into an ``n``-Lipschitz driver ``g_n <= g``."""
    if n < 0:
        raise ValueError("regularization level must be non-negative")
    n = float(n)
    name = f"{g.name}|n={n:g}"
    if g.quadratic_z is not None:
        a = g.quadratic_z
        if a < 0:
            raise UnboundedBelowError(f"{g.name} is unbounded below; truncate it from below first")
        return Coefficient(lambda t, y, z: quadratic_envelope(z, n, a), g.growth, n, None, g.dim,
                           False, name)
    if g.lipschitz is not None and g.lipschitz <= n:
        return g
    numeric = _NumericInfConvolution(g, n, grid or GridSpec())
    return Coefficient(numeric, g.growth, n, None, g.dim, g.time_dependent, name)


def lower_truncate(g: Coefficient, p: float, grid: GridSpec | None = None) -> Coefficient:
    """``g_p = g^+ - (g^- regularized at level p)``, bounded below by ``-(l + c|y| + q_p(z))``."""
    if p < 0:
        raise ValueError("truncation level must be non-negative")
    p = float(p)
    name = f"{g.name}|p={p:g}"
    if g.quadratic_z is not None:
        a = g.quadratic_z
        if a >= 0:
            return g
        return Coefficient(lambda t, y, z: -quadratic_envelope(z, p, -a), g.growth, p, None, g.dim,
                           False, name)
    neg = Coefficient(lambda t, y, z: np.maximum(-g.func(t, y, z), 0.0), g.growth, g.lipschitz, None,
                      g.dim, g.time_dependent, f"{g.name}^-")
    neg_p = inf_convolve(neg, p, grid)

    def func(t, y, z):
        return np.maximum(g.func(t, y, z), 0.0) - neg_p.func(t, y, z)

    return Coefficient(func, g.growth, None, None, g.dim, g.time_dependent, name)


@dataclass(frozen=True)
class SampleSpec:
    """Deterministic grid plus seeded random points for structure checks."""

    t_values: tuple = (0.0, 0.5, 1.0)
    y_radius: float = 5.0
    z_radius: float = 5.0
    points: int = 41
    random_count: int = 1000
    seed: int = 0


def _sample_points(spec: SampleSpec, dim: int):
    ys = np.linspace(-spec.y_radius, spec.y_radius, spec.points)
    if dim == 1:
        zs = np.linspace(-spec.z_radius, spec.z_radius, spec.points)
        Y, Z = np.meshgrid(ys, zs, indexing="ij")
        y_grid, z_grid = Y.ravel(), Z.ravel()[:, None]
    else:
        y_grid = np.zeros(0)
        z_grid = np.zeros((0, dim))
    rng = np.random.default_rng(spec.seed)
    y_rand = rng.uniform(-spec.y_radius, spec.y_radius, spec.random_count)
    z_rand = rng.uniform(-spec.z_radius, spec.z_radius, (spec.random_count, dim))
    return np.concatenate([y_grid, y_rand]), np.concatenate([z_grid, z_rand])


@dataclass(frozen=True)
class StructureReport:
    passed: bool
    worst_point: tuple
    worst_excess: float
    points_checked: int


def verify_structure(g: Coefficient, sample: SampleSpec | None = None, tol: float = 1e-12) -> StructureReport:
    """Check ``|g| <= kappa + tol`` on sampled ``(t, y, z)``."""
    sample = sample or SampleSpec()
    y, z = _sample_points(sample, g.dim)
    worst = (-np.inf, None)
    for t in sample.t_values:
        excess = np.abs(g(t, y, z)) - kappa_eval(t, y, z, g.growth)
        i = int(np.argmax(excess))
        if excess[i] > worst[0]:
            worst = (float(excess[i]), (float(t), float(y[i]), tuple(float(v) for v in z[i])))
    return StructureReport(worst[0] <= tol, worst[1], worst[0], len(y) * len(sample.t_values))


@dataclass(frozen=True, eq=False)
class RegularizationLadder:
    base: Coefficient
    levels: tuple
    members: tuple
    grid: GridSpec | None = None


def build_ladder(g: Coefficient, levels: Sequence[float], grid: GridSpec | None = None) -> RegularizationLadder:
    levels = tuple(float(n) for n in levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("ladder levels must be strictly increasing")
    return RegularizationLadder(g, levels, tuple(inf_convolve(g, n, grid) for n in levels), grid)


@dataclass(frozen=True)
class LadderReport:
    monotone: bool
    lipschitz: bool
    bounded: bool
    converging: bool
    residuals: tuple
    worst: dict

    @property
    def passed(self) -> bool:
        return self.monotone and self.lipschitz and self.bounded and self.converging


def verify_ladder(
    ladder: RegularizationLadder,
    moving_points: Sequence[tuple] | None = None,
    target: tuple = (1.0, 2.0),
    lower_level: float = 0.0,
    sample: SampleSpec | None = None,
    t: float = 0.0,
    tol: float = 1e-9,
) -> LadderReport:
    """Check monotonicity, Lipschitz constants, growth and moving-point convergence.

    ``moving_points`` holds one ``(y_n, z_n)`` per ladder level, converging to
    ``target``; by default ``y_n = 1 + 1/n`` and ``z_n = 2 - 1/n``.
    ``lower_level`` is the index ``p`` of the lower quadratic bound of the
    base driver (0 when the base is bounded below by ``-l - c|y|``).
    """
    g = ladder.base
    if g.dim != 1:
        raise ValueError("ladder verification samples one-dimensional z")
    sample = sample or SampleSpec(points=41, random_count=0)
    ys = np.linspace(-sample.y_radius, sample.y_radius, sample.points)
    zs = np.linspace(-sample.z_radius, sample.z_radius, sample.points)
    Y, Z = np.meshgrid(ys, zs, indexing="ij")
    base_vals = g(t, Y, Z)
    vals = [m(t, Y, Z) for m in ladder.members]
    worst: dict = {}

    monotone = True
    chain = vals + [base_vals]
    for a, b in zip(chain, chain[1:]):
        gap = float(np.max(a - b))
        worst["monotone"] = max(worst.get("monotone", -np.inf), gap)
        if gap > tol:
            monotone = False

    lipschitz = True
    dy = ys[1] - ys[0]
    dz = zs[1] - zs[0]
    for n, v in zip(ladder.levels, vals):
        ey = float(np.max(np.abs(np.diff(v, axis=0)))) - n * dy
        ez = float(np.max(np.abs(np.diff(v, axis=1)))) - n * dz
        worst["lipschitz"] = max(worst.get("lipschitz", -np.inf), ey, ez)
        if max(ey, ez) > tol:
            lipschitz = False

    bounded = True
    gr = g.growth
    low = quadratic_envelope(Z[..., None], lower_level, gr.delta)
    for n, v in zip(ladder.levels, vals):
        cap = abs(gr.level) + gr.rate * np.abs(Y) + np.maximum(low, quadratic_envelope(Z[..., None], n, gr.delta))
        e = float(np.max(np.abs(v) - cap))
        worst["bound"] = max(worst.get("bound", -np.inf), e)
        if e > tol:
            bounded = False

    if moving_points is None:
        moving_points = [(target[0] + 1.0 / n, target[1] - 1.0 / n) for n in ladder.levels]
    limit = float(g(t, np.array(target[0]), np.array(target[1])))
    residuals = tuple(
        abs(float(m(t, np.array(yn), np.array(zn))) - limit)
        for m, (yn, zn) in zip(ladder.members, moving_points)
    )
    converging = len(residuals) < 2 or (
        residuals[-1] <= residuals[0] + tol and residuals[-1] <= residuals[-2] + tol
    )
    return LadderReport(monotone, lipschitz, bounded, converging, residuals, worst)


def _sum_sq(z):
    return np.sum(z * z, axis=-1)


def _make_q(dim: int = 1) -> Coefficient:
    return Coefficient(lambda t, y, z: 0.5 * _sum_sq(z), GrowthBound(0.0, 0.0, 1.0), None, 1.0, dim,
                       name="q")


def _make_neg_q(dim: int = 1) -> Coefficient:
    return Coefficient(lambda t, y, z: -0.5 * _sum_sq(z), GrowthBound(0.0, 0.0, 1.0), None, -1.0, dim,
                       name="neg-q")


def _make_q_delta(delta: float, dim: int = 1) -> Coefficient:
    return Coefficient(lambda t, y, z: 0.5 * delta * _sum_sq(z), GrowthBound(0.0, 0.0, delta), None,
                       delta, dim, name=f"q-delta({delta:g})")


def _make_sin_plus_q(dim: int = 1) -> Coefficient:
    return Coefficient(lambda t, y, z: np.sin(y) + 0.5 * _sum_sq(z), GrowthBound(1.0, 0.0, 1.0), None,
                       None, dim, name="sin-plus-q")


def _make_lq(level: float, rate: float, delta: float, dim: int = 1) -> Coefficient:
    return Coefficient(lambda t, y, z: level + rate * y + 0.5 * delta * _sum_sq(z),
                       GrowthBound(abs(level), abs(rate), delta), None, None, dim,
                       name=f"lq({level:g},{rate:g},{delta:g})")


def _make_zero(dim: int = 1) -> Coefficient:
    return Coefficient(lambda t, y, z: np.zeros(y.shape), GrowthBound(), 0.0, None, dim, name="zero")


def _make_constant(a: float, dim: int = 1) -> Coefficient:
    return Coefficient(lambda t, y, z: np.full(y.shape, a), GrowthBound(abs(a), 0.0, 1.0), 0.0, None,
                       dim, name=f"constant({a:g})")


COEFFICIENT_REGISTRY: dict = {
    "q": (_make_q, 0),
    "neg-q": (_make_neg_q, 0),
    "q-delta": (_make_q_delta, 1),
    "sin-plus-q": (_make_sin_plus_q, 0),
    "lq": (_make_lq, 3),
    "zero": (_make_zero, 0),
    "constant": (_make_constant, 1),
}

_CALL = re.compile(r"^\s*([A-Za-z][\w\-]*)\s*(?:\((.*)\))?\s*$")


def parse_call(text: str) -> tuple[str, list[float]]:
    """Split ``"name(a, b)"`` into the name and float arguments."""
    m = _CALL.match(text)
    if not m:
        raise ValueError(f"cannot parse {text!r}")
    name, args = m.group(1), m.group(2)
    values = []
    if args is not None and args.strip():
        for part in args.split(","):
            try:
                values.append(float(part))
            except ValueError:
                raise ValueError(f"argument {part.strip()!r} of {name} is not a number") from None
            if not math.isfinite(values[-1]):
                raise ValueError(f"argument of {name} must be finite")
    return name, values


def coefficient_from_name(text: str, dim: int = 1) -> Coefficient:
    """Look up a registry driver such as ``"q"`` or ``"lq(1, 0.5, 2)"``."""
    name, args = parse_call(text)
    if name not in COEFFICIENT_REGISTRY:
        raise KeyError(f"unknown coefficient {name!r}; known: {', '.join(sorted(COEFFICIENT_REGISTRY))}")
    factory, arity = COEFFICIENT_REGISTRY[name]
    if len(args) != arity:
        raise ValueError(f"{name} takes {arity} argument(s), got {len(args)}")
    return factory(*args, dim=dim)
