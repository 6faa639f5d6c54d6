"""The game abstraction: player objectives, gradients and aggregate sums.

Every function here accepts either a :class:`~nashbcd.blockvec.BlockVector`
or a flat float array for the joint point ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .blockvec import BlockLayout, BlockVector

STATIONARITY_EPS = 1e-6

Objective = Callable[[int, np.ndarray], float]
Gradient = Callable[[int, np.ndarray], np.ndarray]
BestResponse = Callable[[int, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ProblemConstants:
    """Smoothness constant ``L`` (max over players) and n-sided PL constant ``mu`` (min over players)."""

    L: Optional[float] = None
    mu: Optional[float] = None
    provenance: str = "unknown"

    def __post_init__(self):
        if self.provenance not in ("analytic", "estimated", "unknown"):
            raise ValueError(f"bad provenance {self.provenance!r}")
        if self.known:
            if self.mu <= 0:
                raise ValueError("mu must be positive")
            if self.L < self.mu:
                raise ValueError(f"L={self.L} < mu={self.mu}: impossible for an L-smooth n-sided PL game")

    @property
    def known(self) -> bool:
        return self.provenance != "unknown" and self.L is not None and self.mu is not None

    @property
    def L_prime(self) -> float:
        if not self.known:
            raise ValueError("constants unknown")
        return self.L + self.L**2 / self.mu


@dataclass(frozen=True)
class GameProblem:
    layout: BlockLayout
    objective: Objective
    full_gradient: Gradient
    constants: ProblemConstants = field(default_factory=ProblemConstants)
    exact_best_response: Optional[BestResponse] = None
    name: str = ""

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def has_exact_best_response(self) -> bool:
        return self.exact_best_response is not None

    def point(self, x) -> BlockVector:
        return BlockVector(self.layout, _flat(x))


def _flat(x) -> np.ndarray:
    if isinstance(x, BlockVector):
        return x.data
    return np.asarray(x, dtype=np.float64).reshape(-1)


def partial_grad_own(p: GameProblem, i: int, x) -> np.ndarray:
    """Gradient of player ``i``'s objective with respect to its own block."""
    x = _flat(x)
    return np.asarray(p.full_gradient(i, x))[p.layout.slice(i)]


def sum_F(p: GameProblem, x) -> float:
    x = _flat(x)
    return float(sum(p.objective(i, x) for i in range(p.n)))


def all_gradients(p: GameProblem, x) -> np.ndarray:
    """Stack of full gradients, row ``j`` is the gradient of f_j."""
    x = _flat(x)
    return np.stack([np.asarray(p.full_gradient(j, x), dtype=np.float64) for j in range(p.n)])


def grad_F_minus_i(p: GameProblem, i: int, x, grads: Optional[np.ndarray] = None) -> np.ndarray:
    """Block ``i`` of the gradient of the other players' summed objectives."""
    sl = p.layout.slice(i)
    if p.n == 1:
        return np.zeros(sl.stop - sl.start)
    if grads is None:
        x = _flat(x)
        return sum(np.asarray(p.full_gradient(j, x))[sl] for j in range(p.n) if j != i)
    return grads[:, sl].sum(axis=0) - grads[i, sl]


def own_gradients(p: GameProblem, x, grads: Optional[np.ndarray] = None) -> list[np.ndarray]:
    if grads is None:
        return [partial_grad_own(p, i, x) for i in range(p.n)]
    return [grads[i, p.layout.slice(i)] for i in range(p.n)]


def grad_sq(p: GameProblem, x, grads: Optional[np.ndarray] = None) -> float:
    """Sum over players of the squared norm of the own-block gradient."""
    return float(sum(np.dot(g, g) for g in own_gradients(p, x, grads)))


def stationarity_residual(p: GameProblem, x, grads: Optional[np.ndarray] = None) -> float:
    """Largest own-block gradient norm; ``x`` is eps-stationary iff this is <= eps."""
    return max(float(np.linalg.norm(g)) for g in own_gradients(p, x, grads))


def is_stationary(p: GameProblem, x, eps: float = STATIONARITY_EPS) -> bool:
    return stationarity_residual(p, x) <= eps


def finite_diff_gradient(p: GameProblem, i: int, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of player ``i``'s objective, all coordinates."""
    if h <= 0:
        raise ValueError("step must be positive")
    x = _flat(x).copy()
    out = np.empty_like(x)
    for k in range(x.size):
        orig = x[k]
        x[k] = orig + h
        fp = p.objective(i, x)
        x[k] = orig - h
        fm = p.objective(i, x)
        x[k] = orig
        out[k] = (fp - fm) / (2 * h)
    return out


def gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """Componentwise error relative to ``max(1, |analytic|)``."""
    analytic = np.asarray(analytic)
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))


def best_response_value(p: GameProblem, i: int, x, y_i) -> float:
    """``f_i(y_i, x_{-i})``."""
    z = _flat(x).copy()
    z[p.layout.slice(i)] = y_i
    return float(p.objective(i, z))

