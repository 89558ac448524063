"""Exact discrete filtrations on finite trees.

A :class:`LatticeModel` is a finite tree with ``b`` branches per node.  Nodes of
a non-recombining tree at step ``k`` are stored in path-lexicographic order, so
the children of node ``i`` sit at ``i*b .. i*b + b - 1`` of step ``k + 1``.  A
recombining binary tree stores ``k + 1`` nodes at step ``k``, indexed by the
number of down moves.

Every expectation is an exact weighted sum over children, accumulated in branch
order, so results are bit-reproducible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_NODE_BUDGET = 2**22


class LatticeError(ValueError):
    """Invalid lattice construction or query."""


class NodeBudgetError(LatticeError):
    """The requested tree exceeds the configured node budget."""


class PathDependenceError(LatticeError):
    """A path-dependent quantity was requested on a recombining tree."""


class MartingaleError(LatticeError):
    """An input expected to be a martingale has drifting increments."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


def _default_increments(branching: int, dim: int, dt: float) -> np.ndarray:
    root = np.sqrt(dt)
    if dim > 1:
        signs = np.array(list(itertools.product((1.0, -1.0), repeat=dim)))
        return root * signs
    if branching == 2:
        return np.array([[root], [-root]])
    # equally spaced symmetric points rescaled to variance dt under uniform weights
    pts = np.arange(branching, dtype=float) - (branching - 1) / 2.0
    pts = pts[::-1]
    scale = np.sqrt(dt / np.mean(pts**2))
    return (scale * pts)[:, None]


@dataclass(frozen=True, eq=False)
class LatticeModel:
    """Finite filtered probability space generated by i.i.d. tree increments.

    Attributes
    ----------
    horizon : float
        Terminal time ``T``.
    steps : int
        Number of time steps ``N``.
    increments : ndarray, shape (b, d)
        Driver increment attached to each branch.
    probabilities : ndarray, shape (b,)
        Branch probabilities.
    recombining : bool
        Whether the binary tree recombines (path-independent workloads only).
    """

    horizon: float
    steps: int
    increments: np.ndarray
    probabilities: np.ndarray
    recombining: bool = False

    def __post_init__(self):
        object.__setattr__(self, "increments", _readonly(self.increments))
        object.__setattr__(self, "probabilities", _readonly(self.probabilities))

    @property
    def branching(self) -> int:
        return self.probabilities.shape[0]

    @property
    def dim(self) -> int:
        return self.increments.shape[1]

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def time(self, k: int) -> float:
        return k * self.dt

    def node_count(self, k: int) -> int:
        """Number of nodes at step ``k``."""
        if self.recombining:
            return k + 1
        return self.branching**k

    @property
    def total_nodes(self) -> int:
        return sum(self.node_count(k) for k in range(self.steps + 1))

    @property
    def leaf_count(self) -> int:
        return self.node_count(self.steps)

    def step_of_size(self, size: int) -> int:
        for k in range(self.steps + 1):
            if self.node_count(k) == size:
                return k
        raise LatticeError(f"no step has {size} nodes")

    def _check_step(self, k: int) -> None:
        if not 0 <= k <= self.steps:
            raise LatticeError(f"step {k} outside 0..{self.steps}")

    def require_tree(self, what: str = "this operation") -> None:
        if self.recombining:
            raise PathDependenceError(f"{what} is path-dependent and needs a non-recombining tree")

    def children(self, next_values: np.ndarray) -> np.ndarray:
        """View next-step values grouped by parent: shape ``(n_k, b, ...)``."""
        next_values = np.asarray(next_values, dtype=float)
        if self.recombining:
            return np.stack([next_values[:-1], next_values[1:]], axis=1)
        b = self.branching
        return next_values.reshape((next_values.shape[0] // b, b) + next_values.shape[1:])

    def average_children(self, grouped: np.ndarray) -> np.ndarray:
        """Probability-weighted sum over axis 1, accumulated in branch order."""
        p = self.probabilities
        out = p[0] * grouped[:, 0]
        for j in range(1, self.branching):
            out = out + p[j] * grouped[:, j]
        return out

    def expect_step(self, next_values: np.ndarray) -> np.ndarray:
        """One-step conditional expectation from step ``k + 1`` to step ``k``."""
        return self.average_children(self.children(next_values))

    def expand(self, values: np.ndarray) -> np.ndarray:
        """Broadcast step-``k`` values to each child at step ``k + 1``."""
        self.require_tree("expanding values to children")
        arr = np.asarray(values)
        if arr.dtype != bool:
            arr = arr.astype(float)
        return np.repeat(arr, self.branching, axis=0)

    def branch_increments(self, k: int) -> np.ndarray:
        """Driver increments arriving at the nodes of step ``k + 1``: shape (n_{k+1}, d)."""
        self.require_tree("per-node increments")
        return np.tile(self.increments, (self.node_count(k), 1))

    def ancestor_index(self, k: int) -> np.ndarray:
        """Index at step ``k`` of the ancestor of every leaf."""
        self.require_tree("leaf ancestry")
        return np.arange(self.leaf_count) // self.branching ** (self.steps - k)


def build_model(
    T: float,
    N: int,
    branching: int = 2,
    recombining: bool = False,
    *,
    dim: int = 1,
    increments: Sequence[float] | np.ndarray | None = None,
    probabilities: Sequence[float] | np.ndarray | None = None,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> LatticeModel:
    """Build a lattice with martingale increments of variance ``T/N``.

    ``dim > 1`` gives ``2**dim`` branches, one for each sign pattern of
    independent binary coordinates.
    """
    if not T > 0:
        raise LatticeError("horizon must be positive")
    if int(N) != N or N < 1:
        raise LatticeError("steps must be an integer >= 1")
    N = int(N)
    if dim < 1:
        raise LatticeError("dimension must be >= 1")
    if dim > 1:
        if branching not in (2, 2**dim):
            raise LatticeError(f"dimension {dim} requires branching {2**dim}")
        branching = 2**dim
    if branching < 2:
        raise LatticeError("branching must be >= 2")
    if recombining and (branching != 2 or dim != 1):
        raise LatticeError("recombining layout is only available for binary one-dimensional trees")
    if not recombining and branching**N > node_budget:
        raise NodeBudgetError(
            f"node budget exceeded: {branching}^{N} leaves > budget {node_budget}"
        )
    dt = T / N
    if increments is None:
        inc = _default_increments(branching, dim, dt)
    else:
        inc = np.asarray(increments, dtype=float)
        if inc.ndim == 1:
            inc = inc[:, None]
        if inc.shape[0] != branching:
            raise LatticeError("one increment per branch is required")
    if probabilities is None:
        prob = np.full(branching, 1.0 / branching)
    else:
        prob = np.asarray(probabilities, dtype=float)
        if prob.shape != (branching,):
            raise LatticeError("one probability per branch is required")
    if np.any(prob <= 0) or abs(prob.sum() - 1.0) > 1e-14:
        raise LatticeError("invalid probability vector: entries must be positive and sum to 1")
    if not np.all(np.isfinite(inc)):
        raise LatticeError("increments must be finite")
    return LatticeModel(float(T), N, inc, prob, bool(recombining))


@dataclass(frozen=True, eq=False)
class AdaptedProcess:
    """A real value at every node of a lattice, one array per step."""

    model: LatticeModel
    values: tuple

    def __post_init__(self):
        vals = tuple(self.values)
        if len(vals) != self.model.steps + 1:
            raise LatticeError("an adapted process needs one array per step")
        fixed = []
        for k, v in enumerate(vals):
            arr = np.asarray(v, dtype=float)
            if arr.ndim == 0:
                arr = np.full(self.model.node_count(k), float(arr))
            if arr.shape != (self.model.node_count(k),):
                raise LatticeError(f"step {k}: expected {self.model.node_count(k)} values, got {arr.shape}")
            fixed.append(_readonly(arr))
        object.__setattr__(self, "values", tuple(fixed))

    def __getitem__(self, k: int) -> np.ndarray:
        return self.values[k]

    @property
    def steps(self) -> int:
        return self.model.steps

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    @property
    def initial(self) -> float:
        return float(self.values[0][0])

    @classmethod
    def constant(cls, model: LatticeModel, c: float) -> "AdaptedProcess":
        return cls(model, tuple(np.full(model.node_count(k), float(c)) for k in range(model.steps + 1)))

    @classmethod
    def deterministic(cls, model: LatticeModel, path: Sequence[float]) -> "AdaptedProcess":
        """Process equal to ``path[k]`` at every node of step ``k``."""
        if len(path) != model.steps + 1:
            raise LatticeError("deterministic path needs N + 1 entries")
        return cls(model, tuple(np.full(model.node_count(k), float(path[k])) for k in range(model.steps + 1)))

    @classmethod
    def from_tree(cls, model: LatticeModel, tree_values: Sequence[np.ndarray]) -> "AdaptedProcess":
        """Build from values laid out on the full binary tree.

        On a recombining model the values are folded by number of down moves;
        paths meeting at a node must agree, otherwise the process is rejected.
        """
        if not model.recombining:
            return cls(model, tuple(tree_values))
        folded = []
        for k, v in enumerate(tree_values):
            v = np.asarray(v, dtype=float)
            if v.shape != (2**k,):
                raise LatticeError(f"step {k}: expected {2**k} tree values")
            downs = np.array([bin(i).count("1") for i in range(2**k)], dtype=int)
            out = np.full(k + 1, np.nan)
            for i, d in enumerate(downs):
                if np.isnan(out[d]):
                    out[d] = v[i]
                elif out[d] != v[i]:
                    raise PathDependenceError(
                        f"path-dependent value at step {k}, node {d}: recombining layout rejected"
                    )
            folded.append(out)
        return cls(model, tuple(folded))

    def map(self, func: Callable[[np.ndarray], np.ndarray]) -> "AdaptedProcess":
        return AdaptedProcess(self.model, tuple(func(v) for v in self.values))

    def _combine(self, other, op) -> "AdaptedProcess":
        if isinstance(other, AdaptedProcess):
            if other.model is not self.model:
                raise LatticeError("processes live on different models")
            return AdaptedProcess(self.model, tuple(op(a, b) for a, b in zip(self.values, other.values)))
        return AdaptedProcess(self.model, tuple(op(a, other) for a in self.values))

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __rsub__(self, other):
        return self._combine(other, lambda a, b: np.subtract(b, a))

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return self.map(np.negative)

    def __abs__(self):
        return self.map(np.abs)

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(v))) for v in self.values)

    def increments(self, k: int) -> np.ndarray:
        """``X_{k+1} - X_k`` on the nodes of step ``k + 1``."""
        return self.values[k + 1] - self.model.expand(self.values[k])

    def path_matrix(self) -> np.ndarray:
        """Values along every path: shape ``(N + 1, leaves)``."""
        m = self.model
        return np.stack([self.values[k][m.ancestor_index(k)] for k in range(m.steps + 1)])

    def allclose(self, other: "AdaptedProcess", atol: float = 1e-12) -> bool:
        return all(np.allclose(a, b, rtol=0.0, atol=atol) for a, b in zip(self.values, other.values))

    def max_distance(self, other: "AdaptedProcess") -> float:
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.values, other.values))


def driver(model: LatticeModel, coordinate: int = 0) -> AdaptedProcess:
    """The driving random walk ``W`` (one coordinate)."""
    inc = model.increments[:, coordinate]
    vals = [np.zeros(1)]
    for k in range(model.steps):
        if model.recombining:
            downs = np.arange(k + 2)
            vals.append((k + 1 - downs) * inc[0] + downs * inc[1])
        else:
            vals.append(model.expand(vals[-1]) + np.tile(inc, model.node_count(k)))
    return AdaptedProcess(model, tuple(vals))


def _as_values(X, model: LatticeModel | None, step: int | None):
    if isinstance(X, AdaptedProcess):
        model = X.model
        j = model.steps if step is None else step
        return model, X.values[j], j
    if model is None:
        raise LatticeError("a model is required for raw value arrays")
    arr = np.asarray(X, dtype=float)
    j = model.step_of_size(arr.shape[0]) if step is None else step
    if arr.shape[0] != model.node_count(j):
        raise LatticeError(f"{arr.shape[0]} values do not match step {j}")
    return model, arr, j


def conditional_expectation(X, k: int, *, model: LatticeModel | None = None, step: int | None = None) -> np.ndarray:
    """``E[X_j | F_k]`` as an array over the nodes of step ``k``.

    ``X`` is an :class:`AdaptedProcess` (terminal values by default) or an
    array of values at step ``j`` together with ``model``.
    """
    model, vals, j = _as_values(X, model, step)
    model._check_step(k)
    if k > j:
        raise LatticeError(f"cannot condition step-{j} values on a later step {k}")
    for _ in range(j - k):
        vals = model.expect_step(vals)
    return np.asarray(vals, dtype=float)


def closure(model: LatticeModel, terminal: np.ndarray) -> AdaptedProcess:
    """The martingale ``E[xi | F_k]`` for ``k = 0..N``."""
    terminal = np.asarray(terminal, dtype=float)
    if terminal.shape != (model.leaf_count,):
        raise LatticeError("terminal values must have one entry per leaf")
    vals = [terminal]
    for _ in range(model.steps):
        vals.append(model.expect_step(vals[-1]))
    return AdaptedProcess(model, tuple(reversed(vals)))


def expectation(model: LatticeModel, terminal: np.ndarray) -> float:
    return float(conditional_expectation(terminal, 0, model=model, step=model.steps)[0])


def one_step_drift(S: AdaptedProcess, k: int) -> np.ndarray:
    """``E[S_{k+1} | F_k] - S_k`` at the nodes of step ``k``."""
    return S.model.expect_step(S.values[k + 1]) - S.values[k]


@dataclass(frozen=True, eq=False)
class Decomposition:
    """``S = initial - V + M`` with ``V`` predictable and ``M`` a martingale."""

    initial: float
    martingale: AdaptedProcess
    finite_variation: AdaptedProcess
    qv: AdaptedProcess

    def reconstruct(self) -> AdaptedProcess:
        return self.initial - self.finite_variation + self.martingale


def _predictable_sum(model: LatticeModel, step_increments: Iterable[np.ndarray]) -> AdaptedProcess:
    vals = [np.zeros(1)]
    for k, inc in enumerate(step_increments):
        vals.append(model.expand(vals[-1] + inc))
    return AdaptedProcess(model, tuple(vals))


def doob_decompose(S: AdaptedProcess) -> Decomposition:
    """Exact Doob decomposition with predictable quadratic variation."""
    model = S.model
    model.require_tree("the Doob decomposition")
    drifts = [one_step_drift(S, k) for k in range(model.steps)]
    V = _predictable_sum(model, (-d for d in drifts))
    M = S - S.initial + V
    qv_inc = []
    for k in range(model.steps):
        dm = M.increments(k)
        qv_inc.append(model.expect_step(dm * dm))
    QV = _predictable_sum(model, qv_inc)
    return Decomposition(S.initial, M, V, QV)


def multiplicative_decompose(S: AdaptedProcess) -> tuple[AdaptedProcess, AdaptedProcess]:
    """Split a positive process as ``S_k = S_0 exp(A_k) E_k``.

    ``E`` is a product of one-step ratios with conditional mean one and ``A``
    is predictable.  Returns ``(E, A)``.
    """
    model = S.model
    model.require_tree("the multiplicative decomposition")
    for k, v in enumerate(S.values):
        if np.any(v <= 0):
            i = int(np.argmin(v))
            raise LatticeError(f"non-positive value {v[i]} at step {k}, node {i}")
    E = [np.ones(1)]
    A = [np.zeros(1)]
    for k in range(model.steps):
        ratio = S.values[k + 1] / model.expand(S.values[k])
        mean = model.expect_step(ratio)
        A.append(model.expand(A[-1] + np.log(mean)))
        E.append(model.expand(E[-1]) * ratio / model.expand(mean))
    return AdaptedProcess(model, tuple(E)), AdaptedProcess(model, tuple(A))


def check_martingale(M: AdaptedProcess, tol: float = 1e-10) -> None:
    scale = max(1.0, M.max_abs())
    for k in range(M.steps):
        d = one_step_drift(M, k)
        worst = float(np.max(np.abs(d)))
        if worst > tol * scale:
            i = int(np.argmax(np.abs(d)))
            raise MartingaleError(f"drift {d[i]:.3e} at step {k}, node {i}")


def predictable_qv(M: AdaptedProcess, tol: float = 1e-10) -> AdaptedProcess:
    """Sum of conditional variances of the martingale increments."""
    M.model.require_tree("predictable quadratic variation")
    check_martingale(M, tol)
    model = M.model
    inc = []
    for k in range(model.steps):
        dm = M.increments(k)
        inc.append(model.expect_step(dm * dm))
    return _predictable_sum(model, inc)


def running_max(X: AdaptedProcess, start: int = 0, absolute: bool = True) -> AdaptedProcess:
    """Pathwise running maximum of ``|X|`` (or ``X``) over ``[start, k]``.

    Before ``start`` the process is returned unchanged (in absolute value when
    ``absolute`` is set).
    """
    model = X.model
    model.require_tree("running maxima")
    base = abs(X) if absolute else X
    vals = list(base.values[: start + 1])
    for k in range(start, model.steps):
        vals.append(np.maximum(model.expand(vals[-1]), base.values[k + 1]))
    return AdaptedProcess(model, tuple(vals))


def total_variation(V: AdaptedProcess) -> AdaptedProcess:
    """Pathwise total variation ``sum |V_{j+1} - V_j|`` up to each step."""
    model = V.model
    vals = [np.zeros(1)]
    for k in range(model.steps):
        vals.append(model.expand(vals[-1]) + np.abs(V.increments(k)))
    return AdaptedProcess(model, tuple(vals))


def remaining_qv(QV: AdaptedProcess) -> AdaptedProcess:
    """``E[QV_N - QV_k | F_k]`` at every node."""
    model = QV.model
    cond = closure(model, QV.terminal)
    return cond - QV


def process_norm(X: AdaptedProcess, kind: str, p: float = 1.0) -> float:
    """Exact lattice norms.

    ``kind`` is one of ``"S"`` (running maximum in L^p), ``"H"`` (square root
    of quadratic variation in L^p), ``"TV"`` (expected total variation) or
    ``"BMO"`` (largest conditional remaining quadratic variation, square
    rooted).  ``"Sp"`` and ``"Hp"`` are accepted aliases.
    """
    if not p > 0:
        raise LatticeError("p must be positive")
    key = kind.upper()
    if key in ("SP", "HP"):
        key = key[0]
    model = X.model
    if key == "S":
        mx = running_max(X).terminal
        return expectation(model, mx**p) ** (1.0 / p)
    if key == "H":
        qv = predictable_qv(X).terminal
        return expectation(model, qv ** (p / 2.0)) ** (1.0 / p)
    if key == "TV":
        return expectation(model, total_variation(X).terminal)
    if key == "BMO":
        rem = remaining_qv(predictable_qv(X))
        return float(np.sqrt(max(0.0, max(float(np.max(v)) for v in rem.values))))
    raise LatticeError(f"unknown norm kind {kind!r}")


@dataclass(frozen=True, eq=False)
class StoppingTime:
    """A stopping rule stored as the adapted flag "has stopped by step k"."""

    model: LatticeModel
    stopped: tuple
    label: str = ""

    def __post_init__(self):
        model = self.model
        model.require_tree("stopping times")
        flags = [np.asarray(s, dtype=bool) for s in self.stopped]
        if len(flags) != model.steps + 1:
            raise LatticeError("one flag array per step is required")
        for k, f in enumerate(flags):
            if f.shape != (model.node_count(k),):
                raise LatticeError(f"step {k}: wrong flag count")
            if k > 0 and np.any(model.expand(flags[k - 1]) & ~f):
                raise LatticeError("stopping flags must stay set once raised")
        if not np.all(flags[-1]):
            raise LatticeError("every path must stop by the final step")
        object.__setattr__(self, "stopped", tuple(flags))

    @classmethod
    def from_flags(cls, model: LatticeModel, stop_here: Sequence[np.ndarray], label: str = "") -> "StoppingTime":
        """Stop at the first node along each path whose flag is set (or at N)."""
        cum = [np.asarray(stop_here[0], dtype=bool).copy()]
        for k in range(1, model.steps + 1):
            cum.append(model.expand(cum[-1]).astype(bool) | np.asarray(stop_here[k], dtype=bool))
        cum[-1] = np.ones(model.node_count(model.steps), dtype=bool)
        return cls(model, tuple(cum), label)

    @classmethod
    def deterministic(cls, model: LatticeModel, k: int) -> "StoppingTime":
        model._check_step(k)
        flags = [np.full(model.node_count(j), j >= k) for j in range(model.steps + 1)]
        return cls(model, tuple(flags), f"t={k}")

    def stops_at(self, k: int) -> np.ndarray:
        """Nodes of step ``k`` where the rule stops exactly at ``k``."""
        if k == 0:
            return self.stopped[0].copy()
        return self.stopped[k] & ~self.model.expand(self.stopped[k - 1]).astype(bool)

    def terminal_steps(self) -> np.ndarray:
        model = self.model
        out = np.full(model.leaf_count, model.steps, dtype=int)
        for k in range(model.steps, -1, -1):
            hit = self.stopped[k][model.ancestor_index(k)]
            out[hit] = k
        return out

    def minimum(self, other: "StoppingTime") -> "StoppingTime":
        return StoppingTime(self.model, tuple(a | b for a, b in zip(self.stopped, other.stopped)),
                            f"min({self.label},{other.label})")

    def maximum(self, other: "StoppingTime") -> "StoppingTime":
        return StoppingTime(self.model, tuple(a & b for a, b in zip(self.stopped, other.stopped)),
                            f"max({self.label},{other.label})")

    def precedes(self, other: "StoppingTime") -> bool:
        """True when ``self <= other`` on every path."""
        return all(np.all(b <= a) for a, b in zip(self.stopped, other.stopped))

    def sample(self, X: AdaptedProcess) -> np.ndarray:
        """``X_tau`` as a terminal (leaf-indexed) variable."""
        model = self.model
        steps = self.terminal_steps()
        out = np.empty(model.leaf_count)
        for k in range(model.steps + 1):
            mask = steps == k
            if np.any(mask):
                out[mask] = X.values[k][model.ancestor_index(k)[mask]]
        return out


def stopping_pairs(times: Sequence[StoppingTime]) -> list[tuple[StoppingTime, StoppingTime]]:
    """All ordered pairs ``(min, max)`` built from a battery of stopping times."""
    pairs = []
    for i, a in enumerate(times):
        for b in times[i:]:
            pairs.append((a.minimum(b), a.maximum(b)))
    return pairs


def hitting_time(X: AdaptedProcess, level: float, start: int = 0, absolute: bool = True) -> StoppingTime:
    """First step ``k >= start`` with ``|X_k| >= level`` (``X_k`` if not absolute)."""
    model = X.model
    base = abs(X) if absolute else X
    flags = [(base.values[k] >= level) & (k >= start) for k in range(model.steps + 1)]
    tag = "|X|" if absolute else "X"
    return StoppingTime.from_flags(model, flags, f"hit({tag}>={level:.6g},from {start})")


def sample_stopping_times(
    model: LatticeModel,
    deterministic: Iterable[int] = (),
    process: AdaptedProcess | None = None,
    count: int = 0,
    seed: int | np.random.SeedSequence = 0,
    levels: Sequence[float] | None = None,
    absolute: bool = True,
) -> list[StoppingTime]:
    """Deterministic times followed by level-hitting times of ``process``.

    Levels are drawn uniformly in ``(0, max |X|]`` and starting steps
    uniformly in ``0..N-1`` from ``seed`` unless ``levels`` is given.
    """
    out = [StoppingTime.deterministic(model, k) for k in deterministic]
    if process is None:
        if count or levels:
            raise LatticeError("hitting times need a process")
        return out
    if levels is not None:
        for lv in levels:
            out.append(hitting_time(process, float(lv), 0, absolute))
        return out
    rng = np.random.default_rng(seed)
    top = process.max_abs() if absolute else max(float(np.max(v)) for v in process.values)
    for _ in range(count):
        lv = float(rng.uniform(0.0, 1.0)) * top
        start = int(rng.integers(0, model.steps))
        out.append(hitting_time(process, lv, start, absolute))
    return out


@dataclass(frozen=True)
class SubmartingaleVerdict:
    passed: bool
    worst_step: int
    worst_node: int
    worst_drift: float
    tol: float

    @property
    def defect(self) -> float:
        return max(0.0, -self.worst_drift)


def is_submartingale(S: AdaptedProcess, tol: float = 0.0, scale: AdaptedProcess | None = None) -> SubmartingaleVerdict:
    """Check ``E[S_{k+1}|F_k] - S_k >= -tol`` at every node.

    With ``scale`` the drift at each node is divided by the positive scale
    value there before comparison.
    """
    worst = (np.inf, 0, 0)
    for k in range(S.steps):
        d = one_step_drift(S, k)
        if scale is not None:
            d = d / scale.values[k]
        i = int(np.argmin(d))
        if d[i] < worst[0]:
            worst = (float(d[i]), k, i)
    return SubmartingaleVerdict(worst[0] >= -tol, worst[1], worst[2], worst[0], tol)
