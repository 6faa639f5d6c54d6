"""Block coordinate descent solvers for n-player games.

Variants
--------
``rbcd``     uniformly random block, own-gradient step.
``cyclic``   blocks 1..n in order each sweep, each seeing the freshest blocks.
``ia_rbcd``  adaptive direction ``grad_i f_i + k (grad_i G_F - grad_i F_-i)`` with exact best responses.
``a_rbcd``   the same with best responses approximated by ABR and the practical Case-2 test.
``bm2``      ABR-based direction with ``k = -1`` fixed.

Records use player numbers starting at 1 in the ``block`` field; 0 marks the
initial record and full cyclic sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .blockvec import BlockVector
from .bestresponse import BestResponseResult, abr, exact_best_responses, gap
from .game import GameProblem, ProblemConstants, _flat, all_gradients, grad_sq, own_gradients, sum_F

VARIANTS = ("rbcd", "cyclic", "ia_rbcd", "a_rbcd", "bm2")
CASE1, CASE2, CASE3, CONVERGED = "Case1", "Case2", "Case3", "Converged"
DIVERGENCE_NORM = 1e8


@dataclass
class SolverConfig:
    alpha: float = 0.05
    beta: Optional[float] = None
    gamma: float = 0.5
    C: float = 0.5
    T: int = 1000
    T_prime: int = 0
    seed: int = 0
    variant: str = "rbcd"
    tol: float = 1e-9
    case_tol: float = 1e-18

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.alpha is None or self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.beta is not None and self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.T < 0 or self.T_prime < 0:
            raise ValueError("iteration budgets must be non-negative")

    def replace(self, **changes) -> "SolverConfig":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass
class CaseDecision:
    A: float
    B: float
    D: float
    tag: str
    k: float


@dataclass
class IterationRecord:
    iter: int
    block: int
    tag: Optional[str]
    gap: float
    grad_sq: float
    k: Optional[float] = None
    # gap measured with the ABR responses that drove the update, when those were used
    gap_abr: Optional[float] = None
    # sum of all players' objectives at the iterate
    sum_f: float = math.nan


@dataclass
class SolverResult:
    records: list[IterationRecord]
    x: BlockVector
    stop_reason: str  # "budget", "converged" or "diverged"
    decisions: list[CaseDecision] = field(default_factory=list)
    # iterate behind every record, kept only on request
    states: list[np.ndarray] = field(default_factory=list)

    @property
    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.records])

    @property
    def sum_f(self) -> np.ndarray:
        return np.array([r.sum_f for r in self.records])

    def case_histogram(self) -> dict[str, int]:
        hist: dict[str, int] = {}
        for r in self.records:
            if r.tag is not None:
                hist[r.tag] = hist.get(r.tag, 0) + 1
        return hist


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def draw_block(rng: np.random.Generator, n: int) -> int:
    """Uniform block index as ``floor(n u)`` from one 64-bit uniform draw."""
    return min(int(n * rng.random()), n - 1)


# ---------------------------------------------------------------------------
# case logic


def case_quantities(p: GameProblem, x, br: BestResponseResult,
                    grads: Optional[np.ndarray] = None) -> tuple[float, float, float]:
    """``A = sum <grad_i G - grad_i F_-i, grad_i f_i>``, ``B = sum |grad_i G - grad_i F_-i|^2``, ``D = sum |grad_i f_i|^2``."""
    x = _flat(x)
    if grads is None:
        grads = all_gradients(p, x)
    A = B = D = 0.0
    total = grads.sum(axis=0)
    for i in range(p.n):
        sl = p.layout.slice(i)
        own = grads[i, sl]
        corr = br.grad_G[sl] - (total[sl] - own)
        A += float(np.dot(corr, own))
        B += float(np.dot(corr, corr))
        D += float(np.dot(own, own))
    return A, B, D


def correction_terms(p: GameProblem, br: BestResponseResult, grads: np.ndarray) -> list[np.ndarray]:
    """Per-block ``grad_i G_F - grad_i F_-i``."""
    total = grads.sum(axis=0)
    out = []
    for i in range(p.n):
        sl = p.layout.slice(i)
        out.append(br.grad_G[sl] - (total[sl] - grads[i, sl]))
    return out


def select_case(A: float, B: float, D: float, gamma: float, C: float,
                variant: str = "ideal", tol: float = 1e-18) -> CaseDecision:
    """Pick the update regime and mixing coefficient ``k``.

    Case 2 compares ``(B - A)^2`` with ``C A^2`` (``ideal``) or ``2 C A^2``
    (``practical``). With ``B <= tol`` the Case-2 coefficient is undefined and
    Case 1 is used instead.
    """
    if variant not in ("ideal", "practical"):
        raise ValueError(f"variant must be 'ideal' or 'practical', got {variant!r}")
    if D <= tol:
        return CaseDecision(A, B, D, CONVERGED, 0.0)
    if A <= gamma * D:
        return CaseDecision(A, B, D, CASE1, 0.0)
    factor = C if variant == "ideal" else 2 * C
    if (B - A) ** 2 >= factor * A * A:
        if B <= tol:
            return CaseDecision(A, B, D, CASE1, 0.0)
        return CaseDecision(A, B, D, CASE2, -2.0 + A / B)
    return CaseDecision(A, B, D, CASE3, -1.0)


# ---------------------------------------------------------------------------
# directions


def _need_abr(cfg: SolverConfig):
    if cfg.beta is None:
        raise ValueError(f"variant {cfg.variant} needs beta for the ABR subroutine")


def step_directions(p: GameProblem, x: np.ndarray, grads: np.ndarray, cfg: SolverConfig,
                    variant: str) -> tuple[Optional[CaseDecision], list[np.ndarray], Optional[BestResponseResult]]:
    """Decision at ``x`` and the update direction for every block.

    The step on block ``i`` is ``x_i <- x_i - alpha * directions[i]``.
    """
    own = own_gradients(p, x, grads)
    if variant == "rbcd":
        return None, own, None
    if variant == "ia_rbcd":
        br = exact_best_responses(p, x)
        mode = "ideal"
    elif variant in ("a_rbcd", "bm2"):
        _need_abr(cfg)
        br = abr(p, x, cfg.beta, cfg.T_prime)
        mode = "practical"
    else:
        raise ValueError(f"no single-block direction for variant {variant!r}")
    A, B, D = case_quantities(p, x, br, grads)
    if variant == "bm2":
        decision = CaseDecision(A, B, D, CONVERGED, 0.0) if D <= cfg.case_tol else CaseDecision(A, B, D, CASE3, -1.0)
    else:
        decision = select_case(A, B, D, cfg.gamma, cfg.C, mode, cfg.case_tol)
    corr = correction_terms(p, br, grads)
    dirs = [g + decision.k * c for g, c in zip(own, corr)]
    return decision, dirs, br


# ---------------------------------------------------------------------------
# runners


def _gap_at(p: GameProblem, x: np.ndarray, cfg: SolverConfig) -> float:
    if not np.all(np.isfinite(x)):
        return math.inf
    try:
        if p.exact_best_response is not None:
            return gap(p, x, exact_best_responses(p, x))
        if cfg.beta is not None:
            return gap(p, x, abr(p, x, cfg.beta, cfg.T_prime))
    except (ValueError, RuntimeError, ArithmeticError):
        return math.inf
    return math.nan


def _diverged(x: np.ndarray, grads: np.ndarray) -> bool:
    return (not np.all(np.isfinite(x))) or (not np.all(np.isfinite(grads))) \
        or float(np.linalg.norm(x)) > DIVERGENCE_NORM


def _safe_grads(p: GameProblem, x: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        return np.full((p.n, x.size), np.nan)
    with np.errstate(all="ignore"):
        return all_gradients(p, x)


def _safe_grad_sq(p: GameProblem, x: np.ndarray, grads: np.ndarray) -> float:
    with np.errstate(all="ignore"):
        return grad_sq(p, x, grads)


def _safe_sum_f(p: GameProblem, x: np.ndarray) -> float:
    with np.errstate(all="ignore"):
        try:
            return sum_F(p, x)
        except (ValueError, ArithmeticError):
            return math.inf


def _residual(p: GameProblem, grads: np.ndarray) -> float:
    return max(float(np.linalg.norm(grads[i, p.layout.slice(i)])) for i in range(p.n))


def _run_random(p: GameProblem, x0, cfg: SolverConfig, variant: str, keep_states: bool = False) -> SolverResult:
    x = _flat(x0).astype(np.float64).copy()
    if x.size != p.layout.total_dim:
        raise ValueError("starting point does not match the problem layout")
    rng = make_rng(cfg.seed)
    grads = _safe_grads(p, x)
    records = [IterationRecord(0, 0, None, _gap_at(p, x, cfg), _safe_grad_sq(p, x, grads), sum_f=_safe_sum_f(p, x))]
    decisions: list[CaseDecision] = []
    states = [x] if keep_states else []
    reason = "budget"
    if _diverged(x, grads):
        return SolverResult(records, BlockVector(p.layout, x), "diverged", states=states)
    for t in range(cfg.T):
        if _residual(p, grads) <= cfg.tol:
            reason = "converged"
            break
        i = draw_block(rng, p.n)
        decision, dirs, br = step_directions(p, x, grads, cfg, variant)
        if br is not None and br.source == "abr":
            records[-1].gap_abr = gap(p, x, br)
        if decision is not None:
            decisions.append(decision)
            if decision.tag == CONVERGED:
                reason = "converged"
                break
        sl = p.layout.slice(i)
        x = x.copy()
        with np.errstate(all="ignore"):
            x[sl] = x[sl] - cfg.alpha * dirs[i]
        grads = _safe_grads(p, x)
        records.append(IterationRecord(
            t + 1, i + 1,
            decision.tag if decision else None,
            _gap_at(p, x, cfg),
            _safe_grad_sq(p, x, grads),
            decision.k if decision else None,
            sum_f=_safe_sum_f(p, x),
        ))
        if keep_states:
            states.append(x)
        if _diverged(x, grads):
            reason = "diverged"
            break
    return SolverResult(records, BlockVector(p.layout, x), reason, decisions, states)


def run_rbcd(p: GameProblem, x0, cfg: SolverConfig, keep_states: bool = False) -> SolverResult:
    """Random block coordinate descent: one uniformly chosen block takes an own-gradient step."""
    return _run_random(p, x0, cfg, "rbcd", keep_states)


def run_ia_rbcd(p: GameProblem, x0, cfg: SolverConfig, keep_states: bool = False) -> SolverResult:
    if p.exact_best_response is None:
        raise ValueError(f"IA-RBCD needs exact best responses; problem {p.name!r} has none")
    return _run_random(p, x0, cfg, "ia_rbcd", keep_states)


def run_a_rbcd(p: GameProblem, x0, cfg: SolverConfig, keep_states: bool = False) -> SolverResult:
    _need_abr(cfg)
    return _run_random(p, x0, cfg, "a_rbcd", keep_states)


def run_bm2(p: GameProblem, x0, cfg: SolverConfig, keep_states: bool = False) -> SolverResult:
    """A-RBCD with the Case-3 coefficient ``k = -1`` used unconditionally."""
    _need_abr(cfg)
    return _run_random(p, x0, cfg, "bm2", keep_states)


def run_cyclic_bcd(p: GameProblem, x0, cfg: SolverConfig, keep_states: bool = False) -> SolverResult:
    """Cyclic BCD; one record per full sweep over the blocks."""
    x = _flat(x0).astype(np.float64).copy()
    grads = _safe_grads(p, x)
    records = [IterationRecord(0, 0, None, _gap_at(p, x, cfg), _safe_grad_sq(p, x, grads), sum_f=_safe_sum_f(p, x))]
    states = [x] if keep_states else []
    reason = "budget"
    for t in range(cfg.T):
        if _residual(p, grads) <= cfg.tol:
            reason = "converged"
            break
        x = x.copy()
        with np.errstate(all="ignore"):
            for i in range(p.n):
                sl = p.layout.slice(i)
                x[sl] = x[sl] - cfg.alpha * np.asarray(p.full_gradient(i, x))[sl]
        grads = _safe_grads(p, x)
        records.append(IterationRecord(t + 1, 0, None, _gap_at(p, x, cfg), _safe_grad_sq(p, x, grads),
                                       sum_f=_safe_sum_f(p, x)))
        if keep_states:
            states.append(x)
        if _diverged(x, grads):
            reason = "diverged"
            break
    return SolverResult(records, BlockVector(p.layout, x), reason, states=states)


RUNNERS = {
    "rbcd": run_rbcd,
    "cyclic": run_cyclic_bcd,
    "ia_rbcd": run_ia_rbcd,
    "a_rbcd": run_a_rbcd,
    "bm2": run_bm2,
}


def run(p: GameProblem, x0, cfg: SolverConfig, keep_states: bool = False) -> SolverResult:
    return RUNNERS[cfg.variant](p, x0, cfg, keep_states)


# ---------------------------------------------------------------------------
# theory


@dataclass
class StepSizes:
    case1: float
    case2: float
    case3: float
    plain_bcd: Optional[float]
    alpha: float
    beta: float


def theorem_step_sizes(consts: ProblemConstants, n: int, gamma: float, C: float,
                       kappa: Optional[float] = None) -> StepSizes:
    """Step-size bounds under which the per-case contraction guarantees apply.

    With ``S = n (L + L')``: Case 1 ``(1 - gamma)/S``, Case 2
    ``min(1, C) / (2 S)``, Case 3 ``1/S``; the plain-BCD bound under the
    ratio condition with constant ``kappa`` is ``(1 - kappa)/S`` (0 for
    ``kappa >= 1``). ``alpha`` is the minimum of the three case bounds and
    ``beta = 1/L``.
    """
    if not consts.known:
        raise ValueError("theorem step sizes need known constants L and mu")
    S = n * (consts.L + consts.L_prime)
    case1 = (1 - gamma) / S
    case2 = min(1 / (2 * S), C / (2 * S))
    case3 = 1 / S
    plain = None if kappa is None else max(0.0, (1 - kappa) / S)
    return StepSizes(case1, case2, case3, plain, min(case1, case2, case3), 1 / consts.L)


def expected_one_step(p: GameProblem, x, cfg: SolverConfig, variant: Optional[str] = None) -> float:
    """Exact conditional expectation of the next gap, averaging over all ``n`` block choices."""
    variant = variant or cfg.variant
    x = _flat(x).astype(np.float64)
    grads = all_gradients(p, x)
    if variant == "cyclic":
        raise ValueError("cyclic BCD is deterministic; no block expectation")
    decision, dirs, _ = step_directions(p, x, grads, cfg, variant)
    if decision is not None and decision.tag == CONVERGED:
        return gap(p, x, exact_best_responses(p, x))
    total = 0.0
    for i in range(p.n):
        y = x.copy()
        sl = p.layout.slice(i)
        y[sl] = y[sl] - cfg.alpha * dirs[i]
        total += gap(p, y, exact_best_responses(p, y))
    return total / p.n


def decide(p: GameProblem, x, cfg: SolverConfig, variant: Optional[str] = None) -> Optional[CaseDecision]:
    """Case decision the given variant would take at ``x``."""
    x = _flat(x).astype(np.float64)
    decision, _, _ = step_directions(p, x, all_gradients(p, x), cfg, variant or cfg.variant)
    return decision
