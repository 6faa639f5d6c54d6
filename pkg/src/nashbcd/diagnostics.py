"""Sample-based certificates for the game assumptions and rate classification of traces.

All checks are deterministic given the problem, the seed and the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .bestresponse import BestResponseResult, abr, exact_best_responses, gap
from .game import GameProblem, ProblemConstants, _flat, all_gradients, best_response_value, grad_sq
from .problems import ProblemSpec
from .solvers import (CASE1, CASE2, CASE3, CONVERGED, SolverConfig, case_quantities, expected_one_step,
                      select_case, step_directions)

NE_TOL = 1e-18
PL_DENOM_TOL = 1e-12
CONTRACTION_SLACK = 1e-10

ProblemLike = Union[ProblemSpec, GameProblem]


def _unpack(problem: ProblemLike, box=None) -> tuple[GameProblem, Optional[ProblemSpec], np.ndarray]:
    if isinstance(problem, ProblemSpec):
        spec, p = problem, problem.game
        box = spec.test_box if box is None else box
    else:
        spec, p = None, problem
        if box is None:
            box = np.tile([-2.0, 2.0], (p.layout.total_dim, 1))
    return p, spec, np.asarray(box, dtype=np.float64).reshape(-1, 2)


def sample_points(problem: ProblemLike, count: int, seed: int = 0, box=None) -> list[np.ndarray]:
    """Uniform samples over the test box (or the problem's own sampler, when it has one)."""
    own_box = box is None
    p, spec, box = _unpack(problem, box)
    rng = np.random.default_rng(seed)
    if own_box and spec is not None and spec.sampler is not None:
        return [np.asarray(spec.sample(rng), dtype=np.float64) for _ in range(count)]
    return [rng.uniform(box[:, 0], box[:, 1]) for _ in range(count)]


# ---------------------------------------------------------------------------
# PL and smoothness estimates


@dataclass
class PLProfile:
    mu_hat: float
    L_hat: float
    sample_count: int
    test_box: np.ndarray
    argmin: Optional[np.ndarray] = None
    skipped: int = 0
    theta_hat: Optional[float] = None
    nu_hat: Optional[float] = None


def _accurate_responses(p: GameProblem, x: np.ndarray, beta: Optional[float], T_prime: int) -> BestResponseResult:
    if p.exact_best_response is not None:
        return exact_best_responses(p, x)
    if beta is None:
        raise ValueError(f"problem {p.name!r} has no exact best response; supply beta for ABR")
    return abr(p, x, beta, T_prime)


def hessian_fd(p: GameProblem, i: int, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of player ``i``'s full gradient, symmetrised."""
    x = _flat(x).astype(np.float64)
    d = x.size
    H = np.empty((d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        H[:, k] = (np.asarray(p.full_gradient(i, x + e)) - np.asarray(p.full_gradient(i, x - e))) / (2 * h)
    return 0.5 * (H + H.T)


def estimate_smoothness(problem: ProblemLike, samples: int = 200, seed: int = 0, box=None) -> float:
    """Largest spectral norm of a finite-difference Hessian over sampled points and players."""
    p, _, _ = _unpack(problem, box)
    L = 0.0
    for x in sample_points(problem, samples, seed, box):
        for i in range(p.n):
            L = max(L, float(np.linalg.norm(hessian_fd(p, i, x), 2)))
    return L


def pl_ratios(p: GameProblem, x, br: BestResponseResult) -> list[Optional[float]]:
    """Per-player ``|grad_i f_i|^2 / (2 (f_i(x) - f_i(br_i, x_-i)))``; ``None`` where the denominator vanishes."""
    x = _flat(x)
    grads = all_gradients(p, x)
    out: list[Optional[float]] = []
    for i in range(p.n):
        g = grads[i, p.layout.slice(i)]
        denom = 2 * (p.objective(i, x) - best_response_value(p, i, x, br.responses[i]))
        out.append(None if denom <= PL_DENOM_TOL else float(np.dot(g, g)) / denom)
    return out


def estimate_pl(problem: ProblemLike, samples: int = 500, seed: int = 0, box=None,
                beta: Optional[float] = None, T_prime: int = 2000) -> PLProfile:
    """Sampled n-sided PL constant (minimum ratio over points and players) and smoothness constant."""
    p, _, boxv = _unpack(problem, box)
    mu_hat, argmin, skipped = math.inf, None, 0
    for x in sample_points(problem, samples, seed, box):
        br = _accurate_responses(p, x, beta, T_prime)
        for r in pl_ratios(p, x, br):
            if r is None:
                skipped += 1
            elif r < mu_hat:
                mu_hat, argmin = r, x.copy()
    L_hat = estimate_smoothness(problem, min(samples, 200), seed, box)
    return PLProfile(mu_hat, L_hat, samples, boxv, argmin, skipped)


def estimated_constants(problem: ProblemLike, samples: int = 200, seed: int = 0, **kw) -> ProblemConstants:
    prof = estimate_pl(problem, samples, seed, **kw)
    return ProblemConstants(max(prof.L_hat, prof.mu_hat), prof.mu_hat, "estimated")


# ---------------------------------------------------------------------------
# kappa and the global bounds on A, B


def kappa_ratio(p: GameProblem, x, br: Optional[BestResponseResult] = None, tol: float = NE_TOL) -> float:
    """``A / D``; undefined (``ValueError``) at a Nash equilibrium."""
    x = _flat(x)
    if br is None:
        br = exact_best_responses(p, x)
    A, _, D = case_quantities(p, x, br)
    if D <= tol:
        raise ValueError("D vanishes: x is a Nash equilibrium and the ratio is undefined")
    return A / D


@dataclass
class BoundReport:
    bound_A: float
    bound_B: float
    max_A_over_D: float = -math.inf
    max_B_over_D: float = 0.0
    checked: int = 0
    violations: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def kappa_global_bound_check(problem: ProblemLike, samples: int = 200, seed: int = 0, box=None,
                             constants: Optional[ProblemConstants] = None,
                             points: Optional[Iterable] = None) -> BoundReport:
    """Check ``A <= sqrt(3n) (L/mu) D`` and ``B <= 3 n L^2/mu^2 D`` at sampled points."""
    p, _, _ = _unpack(problem, box)
    c = constants or p.constants
    if not c.known:
        raise ValueError("the bounds need known constants L and mu")
    n = p.n
    rep = BoundReport(math.sqrt(3 * n) * c.L / c.mu, 3 * n * c.L**2 / c.mu**2)
    pts = sample_points(problem, samples, seed, box) if points is None else [_flat(q) for q in points]
    for x in pts:
        A, B, D = case_quantities(p, x, exact_best_responses(p, x))
        rep.checked += 1
        if D <= NE_TOL:
            continue
        rep.max_A_over_D = max(rep.max_A_over_D, A / D)
        rep.max_B_over_D = max(rep.max_B_over_D, B / D)
        tol = 1e-9 * max(1.0, D)
        if A > rep.bound_A * D + tol or B > rep.bound_B * D + tol:
            rep.violations.append({"x": x.tolist(), "A": A, "B": B, "D": D})
    return rep


# ---------------------------------------------------------------------------
# rate classification


@dataclass
class RateFit:
    kind: str  # linear, sublinear, stalled, diverged
    rate: float
    r2: float
    window: tuple[int, int]
    tail_ratio: float = math.nan

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rate": self.rate, "r2": self.r2,
                "window": list(self.window), "tail_ratio": self.tail_ratio}


MIN_TRACE = 50
TAIL = 100


def _linfit(t: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Slope and r2 of a least-squares line."""
    A = np.vstack([t, np.ones_like(t)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return float(coef[0]), r2


def fit_rate(trace, min_length: int = MIN_TRACE, floor: float = 0.0) -> RateFit:
    """Classify a gap trace as linear, sublinear, stalled or diverged.

    ``trace`` holds gap values or records with a ``gap`` attribute.

    * diverged: a non-finite gap or a final gap above ``1e3`` times the initial one.
    * The trace is cut where the gap first drops to ``floor`` times the initial
      gap (by default: where it first reaches exactly 0 or goes negative through
      round-off); everything below uses the part before the cut.
    * sublinear (only for traces that never reach the cut, and whose last gap
      is below the first): the mean successive ratio over the last 100 steps
      is at least 0.999, or it is at least 0.99 and on the trailing half
      ``log gap`` is fitted better by a power of ``t`` than by a geometric
      sequence (the ratio trends to 1).
    * linear: a least-squares fit of ``log gap`` on the trailing half has
      ``r2 >= 0.99`` and a per-step factor at most 0.9999.
    * stalled: anything else.
    """
    g = np.asarray([getattr(r, "gap", r) for r in trace], dtype=np.float64)
    if g.size < min_length:
        raise ValueError(f"trace too short for a rate fit ({g.size} < {min_length})")
    g0 = g[0]
    if not np.all(np.isfinite(g)) or g[-1] > 1e3 * g0:
        return RateFit("diverged", math.nan, math.nan, (0, g.size))
    if g0 <= 0:
        return RateFit("stalled", math.nan, math.nan, (0, g.size))
    hit = np.flatnonzero(g <= floor * g0)
    end = int(hit[0]) if hit.size else g.size
    body = g[:end]
    if body.size < 3:
        # reached the floor almost at once; report the factor that would get there in ``end`` steps
        last = max(float(g[end]) if end < g.size else 0.0, np.finfo(float).tiny)
        rate = (last / g0) ** (1.0 / max(end, 1))
        return RateFit("linear", rate, 1.0, (0, end), rate)
    ratios = body[1:] / body[:-1]
    tail_ratio = float(np.mean(ratios[-TAIL:]))
    start = end // 2 if end >= 6 else 0
    t = np.arange(start, end, dtype=np.float64)
    y = np.log(body[start:])
    slope, r2 = _linfit(t, y)
    _, r2_pow = _linfit(np.log1p(t), y)
    rate = math.exp(slope)
    window = (start, end)
    if not hit.size and g[-1] < g0 and (tail_ratio >= 0.999 or (tail_ratio >= 0.99 and r2_pow > r2)):
        return RateFit("sublinear", rate, r2, window, tail_ratio)
    if r2 >= 0.99 and 0 < rate <= 0.9999:
        return RateFit("linear", rate, r2, window, tail_ratio)
    return RateFit("stalled", rate, r2, window, tail_ratio)


# ---------------------------------------------------------------------------
# case regions


@dataclass
class CaseRegion:
    fraction: float
    case3: int
    counted: int
    excluded: int
    max_case3_gap: float


def grid_points(box, num: int) -> list[np.ndarray]:
    """``num`` points per axis over a two-column box, row-major."""
    box = np.asarray(box, dtype=np.float64).reshape(-1, 2)
    axes = [np.linspace(lo, hi, num) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return [np.array(v) for v in zip(*(m.ravel() for m in mesh))]


def case_region_measure(p: GameProblem, gamma: float, C: float, grid: Sequence,
                        variant: str = "ideal", tol: float = NE_TOL) -> CaseRegion:
    """Fraction of non-equilibrium grid points classified Case 3, and the largest gap among them."""
    case3 = counted = excluded = 0
    worst = 0.0
    for x in grid:
        x = _flat(x)
        br = exact_best_responses(p, x)
        A, B, D = case_quantities(p, x, br)
        dec = select_case(A, B, D, gamma, C, variant, tol)
        if dec.tag == CONVERGED:
            excluded += 1
            continue
        counted += 1
        if dec.tag == CASE3:
            case3 += 1
            worst = max(worst, gap(p, x, br))
    frac = case3 / counted if counted else 0.0
    return CaseRegion(frac, case3, counted, excluded, worst)


# ---------------------------------------------------------------------------
# local (theta, nu) fit


def gap_gradient(p: GameProblem, x, br: Optional[BestResponseResult] = None) -> np.ndarray:
    """``grad F - grad G_F``."""
    x = _flat(x)
    if br is None:
        br = exact_best_responses(p, x)
    return all_gradients(p, x).sum(axis=0) - br.grad_G


def theta_nu_fit(gaps, grad_norms) -> tuple[float, float]:
    """Exploratory fit of ``|grad h|^theta >= (2 nu)^(theta/2) h`` taken with equality.

    ``log h = theta log|grad h| - (theta/2) log(2 nu)``, so the slope of
    ``log h`` on ``log |grad h|`` estimates theta and the intercept gives nu.
    """
    h = np.asarray(gaps, dtype=np.float64)
    g = np.asarray(grad_norms, dtype=np.float64)
    mask = (h > 0) & (g > 0) & np.isfinite(h) & np.isfinite(g)
    if mask.sum() < 20:
        raise ValueError("need at least 20 pairs with positive gap and gradient")
    lg, lh = np.log(g[mask]), np.log(h[mask])
    A = np.vstack([lg, np.ones_like(lg)]).T
    (theta, b), *_ = np.linalg.lstsq(A, lh, rcond=None)
    nu = 0.5 * math.exp(-2 * b / theta)
    return float(theta), float(nu)


# ---------------------------------------------------------------------------
# contraction checks via exact expectation


@dataclass
class ContractionReport:
    mode: str
    checked: int = 0
    by_case: dict = field(default_factory=dict)
    violations: list[dict] = field(default_factory=list)
    # Case-2 states where only the bound weakened by 1/n holds
    soft_violations: list[dict] = field(default_factory=list)
    max_ratio: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.violations


def contraction_factor(consts: ProblemConstants, n: int, alpha: float, tag: str,
                       gamma: float = 0.5, kappa: Optional[float] = None, weakened: bool = False) -> float:
    """Multiplier on the current gap bounding the expected next gap."""
    mu, S = consts.mu, consts.L + consts.L_prime
    if tag == "rbcd":
        if kappa is None:
            raise ValueError("plain BCD bound needs kappa")
        return 1 - (1 - kappa) * mu * alpha / (2 * n)
    if tag == CASE1:
        return 1 - mu * alpha * (1 - gamma) / (2 * n)
    if tag == CASE2:
        return 1 - S * mu * alpha**2 / (2 * n if weakened else 2)
    return 1.0


def verify_contraction_theorems(p: GameProblem, cfg: SolverConfig, states: Iterable,
                                kappa: Optional[float] = None,
                                constants: Optional[ProblemConstants] = None,
                                slack: float = CONTRACTION_SLACK) -> ContractionReport:
    """Compare the exact expected next gap with the case-wise bound at every state.

    ``cfg.variant`` selects the check: ``rbcd`` uses the plain-BCD factor with
    the given ``kappa``; ``ia_rbcd`` uses the Case-1/2 factors and
    non-increase in Case 3; ``a_rbcd`` and ``bm2`` assert non-increase of the
    expected gap whatever the case.
    """
    c = constants or p.constants
    rep = ContractionReport(cfg.variant)
    for x in states:
        x = _flat(x).astype(np.float64)
        cur = gap(p, x, exact_best_responses(p, x))
        if cfg.variant == "rbcd":
            tag = "rbcd"
        else:
            dec, _, _ = step_directions(p, x, all_gradients(p, x), cfg, cfg.variant)
            tag = dec.tag
        nxt = expected_one_step(p, x, cfg, cfg.variant)
        rep.checked += 1
        rep.by_case[tag] = rep.by_case.get(tag, 0) + 1
        if cur > 0:
            rep.max_ratio[tag] = max(rep.max_ratio.get(tag, -math.inf), nxt / cur)
        if tag == CONVERGED:
            continue
        if cfg.variant in ("a_rbcd", "bm2"):
            factor = 1.0
        else:
            factor = contraction_factor(c, p.n, cfg.alpha, tag, cfg.gamma, kappa)
        entry = {"x": x.tolist(), "case": tag, "gap": cur, "expected_next": nxt, "factor": factor}
        if nxt <= factor * cur + slack:
            continue
        if tag == CASE2:
            weak = contraction_factor(c, p.n, cfg.alpha, tag, cfg.gamma, weakened=True)
            if nxt <= weak * cur + slack:
                rep.soft_violations.append(entry | {"weakened_factor": weak})
                continue
        rep.violations.append(entry)
    return rep


def expected_monotone_along(p: GameProblem, cfg: SolverConfig, points: Iterable,
                            slack: float = CONTRACTION_SLACK) -> list[dict]:
    """States along a trace where the exact expected next gap exceeds the current gap."""
    bad = []
    for t, x in enumerate(points):
        x = _flat(x).astype(np.float64)
        cur = gap(p, x, exact_best_responses(p, x))
        nxt = expected_one_step(p, x, cfg, cfg.variant)
        if nxt > cur + slack:
            bad.append({"index": t, "x": x.tolist(), "gap": cur, "expected_next": nxt})
    return bad


def sandwich_violations(p: GameProblem, points: Iterable, constants: Optional[ProblemConstants] = None,
                        slack: float = 1e-9) -> list[dict]:
    """Points breaking ``D/(2L) <= F - G_F <= D/(2 mu)``."""
    c = constants or p.constants
    bad = []
    for x in points:
        x = _flat(x)
        h = gap(p, x, exact_best_responses(p, x))
        D = grad_sq(p, x)
        if not (D / (2 * c.L) - slack <= h <= D / (2 * c.mu) + slack):
            bad.append({"x": x.tolist(), "gap": h, "D": D})
    return bad


def abr_accuracy_violations(p: GameProblem, points: Iterable, delta: float, beta: float, T_prime: int) -> list[dict]:
    """Points where ``|grad G - grad G~|^2 > delta * D`` for ABR with the given budget."""
    bad = []
    for x in points:
        x = _flat(x)
        exact = exact_best_responses(p, x).grad_G
        approx = abr(p, x, beta, T_prime).grad_G
        err = float(np.sum((exact - approx) ** 2))
        D = grad_sq(p, x)
        if err > delta * D:
            bad.append({"x": x.tolist(), "err": err, "D": D})
    return bad
