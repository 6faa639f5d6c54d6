"""Best responses, the gap ``F - G_F`` and the gradient of ``G_F``.

``G_F(x) = sum_i f_i(x_i^*(x), x_{-i})`` and its gradient is obtained by
evaluating each player's full gradient at its own best response.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .game import GameProblem, _flat, best_response_value


@dataclass
class BestResponseResult:
    responses: list[np.ndarray]
    grad_G: np.ndarray
    source: str  # "exact" or "abr"
    abr_iters: int = 0


def _grad_G(p: GameProblem, x: np.ndarray, responses) -> np.ndarray:
    total = np.zeros_like(x)
    z = x.copy()
    for i, y in enumerate(responses):
        sl = p.layout.slice(i)
        z[sl] = y
        total += p.full_gradient(i, z)
        z[sl] = x[sl]
    return total


def abr(p: GameProblem, x, beta: float, T_prime: int) -> BestResponseResult:
    """Approximate every best response by ``T_prime`` own-block gradient steps.

    Player ``j`` starts from ``x_j`` and descends ``f_j(., x_{-j})`` with step
    ``beta``; the other blocks stay frozen at ``x``.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if T_prime < 0:
        raise ValueError("T_prime must be non-negative")
    x = _flat(x)
    responses = []
    z = x.copy()
    for j in range(p.n):
        sl = p.layout.slice(j)
        for _ in range(T_prime):
            z[sl] = z[sl] - beta * p.full_gradient(j, z)[sl]
        responses.append(z[sl].copy())
        z[sl] = x[sl]
    return BestResponseResult(responses, _grad_G(p, x, responses), "abr", T_prime)


def exact_best_responses(p: GameProblem, x) -> BestResponseResult:
    if p.exact_best_response is None:
        raise ValueError(f"problem {p.name or '<anonymous>'} has no closed-form best response")
    x = _flat(x)
    responses = [np.atleast_1d(np.asarray(p.exact_best_response(i, x), dtype=np.float64)) for i in range(p.n)]
    return BestResponseResult(responses, _grad_G(p, x, responses), "exact", 0)


def best_responses(p: GameProblem, x, beta: Optional[float] = None, T_prime: Optional[int] = None) -> BestResponseResult:
    """Exact responses when the problem provides them, ABR otherwise."""
    if p.exact_best_response is not None:
        return exact_best_responses(p, x)
    if beta is None or T_prime is None:
        raise ValueError(f"problem {p.name or '<anonymous>'} needs ABR parameters (beta, T_prime)")
    return abr(p, x, beta, T_prime)


def G_value(p: GameProblem, x, br: BestResponseResult) -> float:
    return float(sum(best_response_value(p, i, x, y) for i, y in enumerate(br.responses)))


def gap(p: GameProblem, x, br: BestResponseResult) -> float:
    """``F(x) - G_F(x)`` summed player by player to limit cancellation."""
    x = _flat(x)
    return float(sum(p.objective(i, x) - best_response_value(p, i, x, y) for i, y in enumerate(br.responses)))


def abr_iters_for(delta: float, n: int, L: float, mu: float, beta: float) -> int:
    """ABR iteration count giving ``|grad G - grad G~|^2 <= delta * D``.

    ``ceil(log(n L^2 / (mu^2 delta)) / log(1 / (1 - mu beta)))``, floored at 0.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    q = mu * beta
    if not 0 < q < 1:
        raise ValueError(f"need 0 < mu*beta < 1, got {q}")
    ratio = n * L**2 / (mu**2 * delta)
    if ratio <= 1 + 1e-12:
        return 0
    num = math.log(ratio)
    if num <= 0:
        return 0
    return math.ceil(num / -math.log1p(-q))


def abr_iters_squared(delta: float, n: int, L: float, mu: float, beta: float) -> int:
    """Variant with ``delta**2`` inside the logarithm (the form used in the per-player distance bound)."""
    return abr_iters_for(delta**2, n, L, mu, beta)


def abr_iters_for_step(alpha: float, n: int, L: float, mu: float, beta: float) -> int:
    """Inner iteration count tied to the outer step: ``log(n L^2 / (mu^2 alpha^4)) / log(1/(1 - mu beta))``."""
    return abr_iters_for(alpha**4, n, L, mu, beta)

