"""Infinite-horizon n-player linear-quadratic games with linear state feedback.

Player ``i`` plays ``u_i = -K_i s`` and pays ``f_i(K) = tr(P_i Sigma0)`` where
``P_i`` solves ``P_i = Q_i + K_i^T R_i K_i + A_cl^T P_i A_cl`` and
``A_cl = A - sum_j B_j K_j``. Dynamics are noise-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .blockvec import BlockLayout, BlockVector
from .game import GameProblem, ProblemConstants

STABILITY_MARGIN = 1e-9
MAX_FIXED_POINT_ITERS = 100_000
FIXED_POINT_TOL = 1e-12


class UnstableProfileError(ValueError):
    """The closed loop is not Schur stable, so the infinite-horizon cost is +inf."""


class RiccatiError(RuntimeError):
    pass


@dataclass
class LQGameSpec:
    A: np.ndarray
    B: list[np.ndarray]
    Q: list[np.ndarray]
    R: list[np.ndarray]
    Sigma0: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.B = [np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in self.B]
        self.Q = [np.atleast_2d(np.asarray(q, dtype=np.float64)) for q in self.Q]
        self.R = [np.atleast_2d(np.asarray(r, dtype=np.float64)) for r in self.R]
        self.Sigma0 = np.atleast_2d(np.asarray(self.Sigma0, dtype=np.float64))
        d = self.A.shape[0]
        if self.A.shape != (d, d):
            raise ValueError("A must be square")
        if not (len(self.B) == len(self.Q) == len(self.R) >= 1):
            raise ValueError("B, Q, R need one entry per player")
        for i, (b, q, r) in enumerate(zip(self.B, self.Q, self.R)):
            if b.shape[0] != d:
                raise ValueError(f"B[{i}] has {b.shape[0]} rows, expected {d}")
            if q.shape != (d, d) or r.shape != (b.shape[1], b.shape[1]):
                raise ValueError(f"cost matrices of player {i} have wrong shape")
            if not np.allclose(q, q.T) or np.linalg.eigvalsh(q).min() < -1e-12:
                raise ValueError(f"Q[{i}] must be symmetric positive semidefinite")
            if not np.allclose(r, r.T) or np.linalg.eigvalsh(r).min() <= 0:
                raise ValueError(f"R[{i}] must be symmetric positive definite")
        if self.Sigma0.shape != (d, d) or not np.allclose(self.Sigma0, self.Sigma0.T) \
                or np.linalg.eigvalsh(self.Sigma0).min() <= 0:
            raise ValueError("Sigma0 must be symmetric positive definite")

    @property
    def n(self) -> int:
        return len(self.B)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> list[int]:
        return [b.shape[1] for b in self.B]

    @property
    def layout(self) -> BlockLayout:
        return BlockLayout(tuple(ki * self.d for ki in self.k))

    def unflatten(self, x) -> list[np.ndarray]:
        x = np.asarray(x.data if isinstance(x, BlockVector) else x, dtype=np.float64).reshape(-1)
        lay = self.layout
        if x.size != lay.total_dim:
            raise ValueError(f"policy vector has length {x.size}, expected {lay.total_dim}")
        return [x[lay.slice(i)].reshape(ki, self.d) for i, ki in enumerate(self.k)]

    def flatten(self, K: Sequence[np.ndarray]) -> np.ndarray:
        if len(K) != self.n:
            raise ValueError("need one gain per player")
        for i, (Ki, ki) in enumerate(zip(K, self.k)):
            if np.shape(Ki) != (ki, self.d):
                raise ValueError(f"K[{i}] has shape {np.shape(Ki)}, expected {(ki, self.d)}")
        return np.concatenate([np.asarray(Ki, dtype=np.float64).reshape(-1) for Ki in K])

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": [b.tolist() for b in self.B],
            "Q": [q.tolist() for q in self.Q],
            "R": [r.tolist() for r in self.R],
            "Sigma0": self.Sigma0.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LQGameSpec":
        return cls(d["A"], d["B"], d["Q"], d["R"], d["Sigma0"])


@dataclass
class LQEval:
    A_cl: np.ndarray
    spectral_radius: float
    P: list[np.ndarray] = field(default_factory=list)
    Sigma_K: Optional[np.ndarray] = None
    costs: list[float] = field(default_factory=list)


def _gains(spec: LQGameSpec, K) -> list[np.ndarray]:
    if isinstance(K, BlockVector) or (isinstance(K, np.ndarray) and K.ndim <= 1):
        return spec.unflatten(K)
    K = [np.atleast_2d(np.asarray(Ki, dtype=np.float64)) for Ki in K]
    spec.flatten(K)  # shape check
    return K


def closed_loop(spec: LQGameSpec, K) -> tuple[np.ndarray, float, bool]:
    return _closed_loop(spec, _gains(spec, K))


def _closed_loop(spec: LQGameSpec, K: list[np.ndarray]) -> tuple[np.ndarray, float, bool]:
    A_cl = spec.A - sum(b @ Ki for b, Ki in zip(spec.B, K))
    rho = float(np.max(np.abs(np.linalg.eigvals(A_cl))))
    return A_cl, rho, rho < 1 - STABILITY_MARGIN


def _lyap_fixed_point(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve ``X = q + a X a^T`` by iteration."""
    X = q.copy()
    for _ in range(MAX_FIXED_POINT_ITERS):
        X_new = q + a @ X @ a.T
        if np.linalg.norm(X_new - X) <= FIXED_POINT_TOL * max(1.0, np.linalg.norm(X_new)):
            return X_new
        X = X_new
    raise RuntimeError("Lyapunov fixed-point iteration did not converge")


def _lyap_direct(a: np.ndarray, qs: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Solve ``X = q + a X a^T`` for several ``q`` at once via ``(I - a (x) a) vec X = vec q``."""
    d = a.shape[0]
    M = np.eye(d * d) - (a[:, None, :, None] * a[None, :, None, :]).reshape(d * d, d * d)
    rhs = np.stack([np.asarray(q, dtype=np.float64).reshape(-1) for q in qs], axis=1)
    sol = np.linalg.solve(M, rhs)
    return [0.5 * (X + X.T) for X in (sol[:, j].reshape(d, d) for j in range(sol.shape[1]))]


def _lyap(a: np.ndarray, q: np.ndarray, method: str) -> np.ndarray:
    if method == "direct":
        return _lyap_direct(a, [q])[0]
    if method == "scipy":
        X = scipy.linalg.solve_discrete_lyapunov(a, q)
    elif method == "iterate":
        X = _lyap_fixed_point(a, q)
    else:
        raise ValueError(f"unknown method {method!r}")
    return 0.5 * (X + X.T)


def lyapunov_value(spec: LQGameSpec, K, i: int, method: str = "direct") -> np.ndarray:
    """Value matrix ``P_i``; a matrix of ``inf`` when the closed loop is unstable."""
    K = _gains(spec, K)
    A_cl, _, stable = closed_loop(spec, K)
    if not stable:
        return np.full((spec.d, spec.d), np.inf)
    M = spec.Q[i] + K[i].T @ spec.R[i] @ K[i]
    return _lyap(A_cl.T, M, method)


def sigma_K(spec: LQGameSpec, K, method: str = "direct") -> np.ndarray:
    """State correlation ``sum_t E[s_t s_t^T]``, the fixed point of ``S = Sigma0 + A_cl S A_cl^T``."""
    A_cl, _, stable = closed_loop(spec, K)
    if not stable:
        raise UnstableProfileError("closed loop is unstable")
    return _lyap(A_cl, spec.Sigma0, method)


def evaluate(spec: LQGameSpec, K) -> LQEval:
    return _evaluate(spec, _gains(spec, K))


def _evaluate(spec: LQGameSpec, K: list[np.ndarray]) -> LQEval:
    A_cl, rho, stable = _closed_loop(spec, K)
    if not stable:
        return LQEval(A_cl, rho, costs=[math.inf] * spec.n)
    P = _lyap_direct(A_cl.T, [spec.Q[i] + K[i].T @ spec.R[i] @ K[i] for i in range(spec.n)])
    S = _lyap_direct(A_cl, [spec.Sigma0])[0]
    costs = [float(np.trace(Pi @ spec.Sigma0)) for Pi in P]
    return LQEval(A_cl, rho, P, S, costs)


def lq_cost(spec: LQGameSpec, K, i: int) -> float:
    P = lyapunov_value(spec, K, i)
    if not np.all(np.isfinite(P)):
        return math.inf
    return float(np.trace(P @ spec.Sigma0))


def lq_full_gradient(spec: LQGameSpec, K, i: int, ev: Optional[LQEval] = None) -> list[np.ndarray]:
    """Gradient of ``f_i`` with respect to every gain ``K_j``.

    ``2 (delta_ij R_i K_i - B_j^T P_i A_cl) Sigma_K``.
    """
    K = _gains(spec, K)
    if ev is None:
        ev = _evaluate(spec, K)
    if ev.Sigma_K is None:
        raise UnstableProfileError("closed loop is unstable")
    PA = ev.P[i] @ ev.A_cl
    out = []
    for j, b in enumerate(spec.B):
        g = -b.T @ PA
        if j == i:
            g = g + spec.R[i] @ K[i]
        out.append(2 * g @ ev.Sigma_K)
    return out


def lq_cost_and_gradient(spec: LQGameSpec, K, i: int) -> tuple[float, Optional[np.ndarray]]:
    """``(f_i(K), grad_{K_i} f_i)``; ``(inf, None)`` for an unstable profile."""
    K = _gains(spec, K)
    ev = evaluate(spec, K)
    if ev.Sigma_K is None:
        return math.inf, None
    A_minus = spec.A - sum(spec.B[j] @ K[j] for j in range(spec.n) if j != i)
    Bi, Pi = spec.B[i], ev.P[i]
    grad = 2 * ((spec.R[i] + Bi.T @ Pi @ Bi) @ K[i] - Bi.T @ Pi @ A_minus) @ ev.Sigma_K
    return ev.costs[i], grad


def riccati_best_response(spec: LQGameSpec, K, i: int, tol: float = FIXED_POINT_TOL,
                          max_iter: int = MAX_FIXED_POINT_ITERS) -> np.ndarray:
    """Optimal gain of player ``i`` against the others' fixed gains (Riccati value iteration)."""
    K = _gains(spec, K)
    A_m = spec.A - sum(spec.B[j] @ K[j] for j in range(spec.n) if j != i)
    B, Q, R = spec.B[i], spec.Q[i], spec.R[i]
    P = Q.copy()
    for _ in range(max_iter):
        BtPA = B.T @ P @ A_m
        P_new = Q + A_m.T @ P @ A_m - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)
        P_new = 0.5 * (P_new + P_new.T)
        if not np.all(np.isfinite(P_new)):
            break
        if np.linalg.norm(P_new - P) <= tol * max(1.0, np.linalg.norm(P_new)):
            P = P_new
            Ki = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A_m)
            rho = np.max(np.abs(np.linalg.eigvals(A_m - B @ Ki)))
            if rho >= 1 - STABILITY_MARGIN:
                raise RiccatiError(f"player {i}: pair (A_-i, B_i) is not stabilizable")
            return Ki
        P = P_new
    raise RiccatiError(f"player {i}: Riccati iteration did not converge in {max_iter} steps")


def gd_best_response(spec: LQGameSpec, K, i: int, step: Optional[float] = None,
                     tol: float = 1e-11, max_iter: int = 200_000) -> np.ndarray:
    """Best response by plain policy-gradient descent on ``K_i``; an independent check of the Riccati route."""
    K = [Kj.copy() for Kj in _gains(spec, K)]
    if step is None:
        # curvature along K_i is bounded by 2 ||R_i + B_i^T P_i B_i|| ||Sigma_K|| near the start
        ev = evaluate(spec, K)
        if ev.Sigma_K is None:
            raise UnstableProfileError("starting profile is unstable")
        H = spec.R[i] + spec.B[i].T @ ev.P[i] @ spec.B[i]
        step = 0.25 / (np.linalg.norm(H, 2) * np.linalg.norm(ev.Sigma_K, 2))
    for _ in range(max_iter):
        f, g = lq_cost_and_gradient(spec, K, i)
        if g is None:
            raise UnstableProfileError("gradient descent left the stable set")
        if np.linalg.norm(g) <= tol:
            return K[i]
        K[i] = K[i] - step * g
    raise RuntimeError("policy gradient best response did not converge")


def simulated_cost(spec: LQGameSpec, K, i: int, horizon: int) -> float:
    """Truncated cost averaged over the eigen-directions of Sigma0."""
    K = _gains(spec, K)
    A_cl, _, _ = closed_loop(spec, K)
    M = spec.Q[i] + K[i].T @ spec.R[i] @ K[i]
    w, V = np.linalg.eigh(spec.Sigma0)
    total = 0.0
    for lam, v in zip(w, V.T):
        s = math.sqrt(lam) * v
        for _ in range(horizon + 1):
            total += float(s @ M @ s)
            s = A_cl @ s
    return total


# ---------------------------------------------------------------------------
# instances


def random_instance(n: int = 3, d: int = 2, k: int = 1, seed: int = 0, radius: float = 0.9) -> LQGameSpec:
    """Random game with an open-loop matrix of spectral radius ``radius``.

    ``B_i`` entries are uniform(0, 1) / (n d), ``Q_i = I + W W^T / d``, ``R_i = I``, ``Sigma0 = I``.
    """
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, d))
    A *= radius / np.max(np.abs(np.linalg.eigvals(A)))
    B = [rng.random((d, k)) / (n * d) for _ in range(n)]
    Q = []
    for _ in range(n):
        W = rng.standard_normal((d, d))
        Q.append(np.eye(d) + W @ W.T / d)
    R = [np.eye(k) for _ in range(n)]
    return LQGameSpec(A, B, Q, R, np.eye(d))


def scalar_state_instance(n: int = 3, k: int = 2, seed: int = 0, a: float = 0.9) -> LQGameSpec:
    """Scalar-state game where each player steers with a ``k``-dimensional input.

    ``B_i`` entries are uniform(0, 1) / (n k), ``Q_i`` uniform(0, 1), the
    diagonal of ``R_i`` uniform(0, 1), ``Sigma0 = 1``. Any profile with all
    gain entries in [0, 1] keeps the closed loop inside (a - 1, a].
    """
    rng = np.random.default_rng(seed)
    B = [rng.random((1, k)) / (n * k) for _ in range(n)]
    Q = [np.array([[rng.random()]]) for _ in range(n)]
    R = [np.diag(rng.random(k)) for _ in range(n)]
    return LQGameSpec(np.array([[a]]), B, Q, R, np.eye(1))


def unit_box_profile(spec: LQGameSpec, rng: np.random.Generator) -> np.ndarray:
    """Gains with entries uniform(0, 1), flattened."""
    return rng.random(spec.layout.total_dim)


def counterexample() -> tuple[LQGameSpec, np.ndarray, np.ndarray, np.ndarray]:
    """Two-player instance showing the cost is not convex in a player's own gain.

    Returns ``(spec, K1, K1_prime, K2)``; ``(K1, K2)`` and ``(K1', K2)`` are stable but
    the midpoint ``((K1 + K1') / 2, K2)`` is not.
    """
    I3 = np.eye(3)
    spec = LQGameSpec(I3, [I3, I3], [I3, I3], [I3, I3], I3)
    K1 = np.array([[0.0, 0, -10], [-1, 0, 0], [0, 0, 0]])
    K1p = np.array([[0.0, -10, 0], [0, 0, 0], [-1, 0, 0]])
    K2 = np.eye(3)
    return spec, K1, K1p, K2


# ---------------------------------------------------------------------------
# generic game wrapper


def lq_as_game(spec: LQGameSpec, policy_box: float = 0.5,
               constants: Optional[ProblemConstants] = None) -> GameProblem:
    """Expose the LQ game through the generic game interface on flattened gains.

    Unstable profiles evaluate to ``inf`` with a ``nan`` gradient. ``policy_box``
    is recorded for samplers only; the objective is defined everywhere.
    """

    @lru_cache(maxsize=64)
    def _ev(key: bytes):
        x = np.frombuffer(key, dtype=np.float64)
        K = spec.unflatten(x)
        return K, _evaluate(spec, K)

    def objective(i, x):
        _, ev = _ev(np.ascontiguousarray(x, dtype=np.float64).tobytes())
        return ev.costs[i]

    def full_gradient(i, x):
        K, ev = _ev(np.ascontiguousarray(x, dtype=np.float64).tobytes())
        if ev.Sigma_K is None:
            return np.full(spec.layout.total_dim, np.nan)
        return np.concatenate([g.reshape(-1) for g in lq_full_gradient(spec, K, i, ev)])

    def best_response(i, x):
        return riccati_best_response(spec, spec.unflatten(x), i).reshape(-1)

    return GameProblem(spec.layout, objective, full_gradient,
                       constants or ProblemConstants(), best_response, name="lq")


def sample_stable_profiles(spec: LQGameSpec, rng: np.random.Generator, count: int,
                           box: float = 0.5, max_tries: int = 100_000) -> np.ndarray:
    """Uniform samples from ``[-box, box]^D`` filtered to Schur-stable profiles."""
    D = spec.layout.total_dim
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("could not find enough stable profiles in the policy box")
        x = rng.uniform(-box, box, D)
        if closed_loop(spec, x)[2]:
            out.append(x)
    return np.array(out).reshape(count, D)


def lq_problem_spec(n: int = 3, d: int = 2, k: int = 1, seed: int = 0, box: float = 0.5,
                    kind: str = "state", spec: Optional[LQGameSpec] = None):
    """Registry entry for LQ games.

    ``kind="state"`` draws a ``d``-dimensional state with ``k`` inputs per
    player and samples stable gains from ``[-box, box]``; ``kind="scalar"``
    uses a scalar state with ``k`` inputs per player and gains in ``[0, 1]``.
    """
    from .problems import ProblemSpec

    if spec is None:
        if kind == "state":
            spec = random_instance(n, d, k, seed)
        elif kind == "scalar":
            spec = scalar_state_instance(n, k, seed)
        else:
            raise ValueError(f"kind must be 'state' or 'scalar', got {kind!r}")
    game = lq_as_game(spec, box)
    notes = f"LQ game n={spec.n}, d={spec.d}, k={spec.k}, seed={seed}"
    if kind == "scalar":
        return ProblemSpec("lq", game, [], np.tile([0.0, 1.0], (spec.layout.total_dim, 1)),
                           notes=notes, sampler=lambda rng: unit_box_profile(spec, rng), lq=spec)
    return ProblemSpec(
        "lq", game, [], np.tile([-box, box], (spec.layout.total_dim, 1)),
        notes=notes,
        sampler=lambda rng: sample_stable_profiles(spec, rng, 1, box)[0],
        lq=spec,
    )
