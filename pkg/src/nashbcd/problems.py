"""Benchmark games with analytic gradients, best responses and known equilibria."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .blockvec import BlockLayout, BlockVector
from .game import GameProblem, ProblemConstants, _flat

PAIR = BlockLayout((1, 1))


@dataclass
class ProblemSpec:
    name: str
    game: GameProblem
    known_ne: list[BlockVector] = field(default_factory=list)
    test_box: np.ndarray = field(default_factory=lambda: np.array([[-2.0, 2.0], [-2.0, 2.0]]))
    notes: str = ""
    # Membership test for equilibrium sets that are not finite.
    ne_predicate: Optional[Callable[[np.ndarray], bool]] = None
    # Replaces uniform box sampling, e.g. to keep only stable LQ profiles.
    sampler: Optional[Callable[[np.random.Generator], np.ndarray]] = None
    lq: Optional[object] = None

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        if self.sampler is not None:
            if size is None:
                return self.sampler(rng)
            return np.array([self.sampler(rng) for _ in range(size)])
        lo, hi = self.test_box[:, 0], self.test_box[:, 1]
        if size is None:
            return lo + (hi - lo) * rng.random(lo.size)
        return lo + (hi - lo) * rng.random((size, lo.size))


class UnknownProblemError(KeyError):
    pass


# ---------------------------------------------------------------------------
# scalar minimisation helpers for best responses without a closed form


def _increasing_root(dfun: Callable[[float], float], lo: float, hi: float) -> float:
    """Root of a derivative known to be negative at ``lo`` and positive at ``hi``."""
    dlo, dhi = dfun(lo), dfun(hi)
    if dlo == 0:
        return lo
    if dhi == 0:
        return hi
    if dlo > 0 or dhi < 0:
        raise RuntimeError(f"bracket [{lo}, {hi}] does not enclose a minimiser")
    return brentq(dfun, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def _global_min_scan(fun, dfun, lo: float, hi: float, anchor: float, points: int = 64) -> float:
    """Global minimiser on ``[lo, hi]`` of a 1-D function whose critical points all lie inside.

    Local minima are located from sign changes of the derivative on a grid and
    refined with Brent's method; ties go to the minimiser closest to ``anchor``.
    Both callables must accept arrays. A cell whose lower endpoint value
    exceeds the grid minimum by more than twice its width times the endpoint
    slope cannot hold the global minimiser and is skipped.
    """
    grid = np.linspace(lo, hi, points)
    d = np.asarray(dfun(grid), dtype=np.float64)
    f = np.asarray(fun(grid), dtype=np.float64)
    h = grid[1] - grid[0] if points > 1 else 0.0
    fmin = float(f.min())
    tiny = 1e-12 * max(1.0, abs(fmin))
    slope = np.maximum(np.abs(d[:-1]), np.abs(d[1:]))
    keep = np.minimum(f[:-1], f[1:]) - 2.0 * h * slope <= fmin + tiny
    zero = np.flatnonzero((d[:-1] == 0) & np.concatenate(([True], d[:-2] < 0)) & keep)
    cross = np.flatnonzero((d[:-1] < 0) & (d[1:] > 0) & keep)
    cands = []
    for k in sorted(set(zero.tolist()) | set(cross.tolist())):
        if d[k] == 0:
            cands.append(float(grid[k]))
        else:
            cands.append(float(brentq(dfun, grid[k], grid[k + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)))
    if d[-1] == 0:
        cands.append(float(grid[-1]))
    if not cands:
        raise RuntimeError("no local minimiser found in scan interval")
    vals = np.array([float(fun(c)) for c in cands])
    best = vals.min()
    tied = [c for c, v in zip(cands, vals) if v <= best + 1e-12 * max(1.0, abs(best))]
    return min(tied, key=lambda c: abs(c - anchor))


# ---------------------------------------------------------------------------
# f1 / f2: potential games with three equilibria


def _f1(x1, x2):
    return (x1 - 1) ** 2 * (x2 + 1) ** 2 + (x1 + 1) ** 2 * (x2 - 1) ** 2


def _f1_grad(x1, x2):
    return np.array([
        2 * (x1 - 1) * (x2 + 1) ** 2 + 2 * (x1 + 1) * (x2 - 1) ** 2,
        2 * (x2 - 1) * (x1 + 1) ** 2 + 2 * (x2 + 1) * (x1 - 1) ** 2,
    ])


def _f1_br(i, x):
    # f1 is quadratic in each coordinate with curvature 4(other^2 + 1) > 0.
    other = x[1 - i]
    return np.array([2 * other / (other**2 + 1)])


def make_f1() -> ProblemSpec:
    game = GameProblem(
        PAIR,
        lambda i, x: float(_f1(x[0], x[1])),
        lambda i, x: _f1_grad(x[0], x[1]),
        ProblemConstants(L=60.0, mu=4.0, provenance="analytic"),
        _f1_br,
        name="f1",
    )
    ne = [BlockVector(PAIR, p) for p in ((1.0, 1.0), (-1.0, -1.0), (0.0, 0.0))]
    return ProblemSpec(
        "f1", game, ne,
        notes="potential game (x1-1)^2(x2+1)^2 + (x1+1)^2(x2-1)^2; L is the Hessian bound on [-2,2]^2, "
        "mu is the smallest own-coordinate curvature 4(x^2+1)",
    )


def _f2(x1, x2):
    return _f1(x1, x2) + math.exp(-((x2 - 1) ** 2))


def _f2_grad(x1, x2):
    g = _f1_grad(x1, x2)
    g[1] -= 2 * (x2 - 1) * math.exp(-((x2 - 1) ** 2))
    return g


def _f2_br(i, x):
    if i == 0:
        return _f1_br(0, x)
    x1 = x[0]
    c = 4 * (x1**2 + 1)

    def d(y):
        return c * y - 8 * x1 - 2 * (y - 1) * math.exp(-((y - 1) ** 2))

    # |2u exp(-u^2)| <= 0.86, and the coordinate curvature is at least 2.
    lo, hi = (8 * x1 - 0.9) / c, (8 * x1 + 0.9) / c
    return np.array([_increasing_root(d, lo, hi)])


# Equilibria of f2 located by high-precision root finding on the partial-stationarity system.
F2_EQUILIBRIA = (
    (1.0, 1.0),
    (-0.9999609457355728, -1.0088772176347774),
    (0.13104940671762464, 0.06580847481896475),
)


def make_f2() -> ProblemSpec:
    game = GameProblem(
        PAIR,
        lambda i, x: float(_f2(x[0], x[1])),
        lambda i, x: _f2_grad(x[0], x[1]),
        ProblemConstants(L=62.0, mu=2.0, provenance="analytic"),
        _f2_br,
        name="f2",
    )
    return ProblemSpec(
        "f2", game, [BlockVector(PAIR, p) for p in F2_EQUILIBRIA],
        notes="f1 + exp(-(x2-1)^2); the origin is not partial-stationary for this game",
    )


# ---------------------------------------------------------------------------
# exponentially flat term exp(-1/u^2), u = x1 - x2, extended by 0 at u = 0

_FLAT_CUTOFF = 1e-2  # below this |u| the term and its derivative are < exp(-1e4)


def flat_term(u: float) -> float:
    if abs(u) < _FLAT_CUTOFF:
        return 0.0
    return math.exp(-1.0 / (u * u))


def flat_term_deriv(u: float) -> float:
    if abs(u) < _FLAT_CUTOFF:
        return 0.0
    return 2.0 / u**3 * math.exp(-1.0 / (u * u))


def _f3(x1, x2):
    return (x1 + x2) ** 2 + flat_term(x1 - x2)


def _f3_grad(x1, x2):
    s = 2 * (x1 + x2)
    g = flat_term_deriv(x1 - x2)
    return np.array([s + g, s - g])


def _flat_br(i, x):
    # minimise (y + other)^2 + flat(+-(y - other)); curvature >= 2 - 0.71 > 0 and the flat
    # term's slope is bounded by 0.82, so the minimiser lies within 0.41 of -other.
    other = x[1 - i]
    sign = 1.0 if i == 0 else -1.0

    def d(y):
        return 2 * (y + other) + sign * flat_term_deriv(sign * (y - other))

    return np.array([_increasing_root(d, -other - 0.5, -other + 0.5)])


def make_f3() -> ProblemSpec:
    game = GameProblem(
        PAIR,
        lambda i, x: float(_f3(x[0], x[1])),
        lambda i, x: _f3_grad(x[0], x[1]),
        ProblemConstants(),
        _flat_br,
        name="f3",
    )
    return ProblemSpec("f3", game, [BlockVector(PAIR, (0.0, 0.0))],
                       notes="potential game (x1+x2)^2 + exp(-1/(x1-x2)^2)")


def _f5_obj(i, x):
    return float(_f3(x[0], x[1])) if i == 0 else float((x[0] + x[1]) ** 2)


def _f5_grad(i, x):
    if i == 0:
        return _f3_grad(x[0], x[1])
    s = 2 * (x[0] + x[1])
    return np.array([s, s])


def _f5_br(i, x):
    if i == 0:
        return _flat_br(0, x)
    return np.array([-x[0]])


def make_f5() -> ProblemSpec:
    game = GameProblem(PAIR, _f5_obj, _f5_grad, ProblemConstants(), _f5_br, name="f5")
    return ProblemSpec("f5", game, [BlockVector(PAIR, (0.0, 0.0))],
                       notes="f1 = (x1+x2)^2 + exp(-1/(x1-x2)^2), f2 = (x1+x2)^2")


# ---------------------------------------------------------------------------
# quadratic games


def make_f4() -> ProblemSpec:
    def grad(i, x):
        s = 2 * (x[0] + x[1])
        return np.array([s, s])

    game = GameProblem(
        PAIR,
        lambda i, x: float((x[0] + x[1]) ** 2),
        grad,
        ProblemConstants(L=4.0, mu=2.0, provenance="analytic"),
        lambda i, x: np.array([-x[1 - i]]),
        name="f4",
    )
    ne = [BlockVector(PAIR, p) for p in ((0.0, 0.0), (1.0, -1.0), (-0.5, 0.5))]
    return ProblemSpec("f4", game, ne, notes="potential game (x1+x2)^2; equilibria form the line x1 = -x2",
                       ne_predicate=lambda x: abs(x[0] + x[1]) <= 1e-12)


def make_f6() -> ProblemSpec:
    def obj(i, x):
        return float(x[0] ** 2 + x[1] ** 2) if i == 0 else float((x[0] + x[1]) ** 2)

    def grad(i, x):
        if i == 0:
            return np.array([2 * x[0], 2 * x[1]])
        s = 2 * (x[0] + x[1])
        return np.array([s, s])

    def br(i, x):
        return np.array([0.0]) if i == 0 else np.array([-x[0]])

    game = GameProblem(PAIR, obj, grad, ProblemConstants(L=4.0, mu=2.0, provenance="analytic"), br, name="f6")
    return ProblemSpec("f6", game, [BlockVector(PAIR, (0.0, 0.0))],
                       notes="f1 = x1^2 + x2^2, f2 = (x1+x2)^2")


def make_resource() -> ProblemSpec:
    def obj(i, x):
        a, b = x
        return float(a * a - 2 * a * b) if i == 0 else float(b * b - 2 * a * b)

    def grad(i, x):
        a, b = x
        return np.array([2 * a - 2 * b, -2 * a]) if i == 0 else np.array([-2 * b, 2 * b - 2 * a])

    game = GameProblem(
        PAIR, obj, grad,
        ProblemConstants(L=1.0 + math.sqrt(5.0), mu=2.0, provenance="analytic"),
        lambda i, x: np.array([x[1 - i]]),
        name="resource",
    )
    return ProblemSpec(
        "resource", game, [BlockVector(PAIR, (0.0, 0.0))],
        notes="f_A = xA^2 - 2 xA xB, f_B = xB^2 - 2 xA xB; every point of the diagonal xA = xB "
        "is partial-stationary and a Nash equilibrium",
        ne_predicate=lambda x: abs(x[0] - x[1]) <= 1e-12,
    )


# ---------------------------------------------------------------------------
# game whose only equilibrium is a strict saddle of both objectives

SADDLE_NE = (-0.13231736785731920, 0.55878652357398373)


def _saddle_obj(i, x):
    x1, x2 = x
    if i == 0:
        return float((x1 - 1) ** 2 + 4 * (x1 + 0.1 * math.cos(x1)) * x2 + (x2 + 0.1 * math.sin(x2)) ** 2)
    return float((x1 - 1) ** 2 + 4 * (x1 - 0.1 * math.cos(x1)) * x2 + (x2 - 0.1 * math.sin(x2)) ** 2)


def _saddle_grad(i, x):
    x1, x2 = x
    if i == 0:
        phi = x2 + 0.1 * math.sin(x2)
        return np.array([
            2 * (x1 - 1) + 4 * (1 - 0.1 * math.sin(x1)) * x2,
            4 * (x1 + 0.1 * math.cos(x1)) + 2 * phi * (1 + 0.1 * math.cos(x2)),
        ])
    phi = x2 - 0.1 * math.sin(x2)
    return np.array([
        2 * (x1 - 1) + 4 * (1 + 0.1 * math.sin(x1)) * x2,
        4 * (x1 - 0.1 * math.cos(x1)) + 2 * phi * (1 - 0.1 * math.cos(x2)),
    ])


def _saddle_br(i, x):
    x1, x2 = float(x[0]), float(x[1])
    if i == 0:
        # roots of 2(y-1) + 4 x2 (1 - 0.1 sin y) satisfy |y - 1 + 2 x2| <= 0.2 |x2|
        c, w = 1 - 2 * x2, 0.2 * abs(x2) + 1e-9

        def fun(y):
            return (y - 1) ** 2 + 4 * (y + 0.1 * np.cos(y)) * x2 + (x2 + 0.1 * math.sin(x2)) ** 2

        def d(y):
            return 2 * (y - 1) + 4 * (1 - 0.1 * np.sin(y)) * x2

        anchor = x1
    else:
        # roots of 4c + 2 phi(y) phi'(y), phi' in [0.9, 1.1], |y - phi(y)| <= 0.1
        c4 = 4 * (x1 - 0.1 * math.cos(x1))
        ends = (-c4 / (2 * 0.9), -c4 / (2 * 1.1))
        c, w = 0.5 * (ends[0] + ends[1]), 0.5 * abs(ends[0] - ends[1]) + 0.1 + 1e-9

        def fun(y):
            return (x1 - 1) ** 2 + 4 * (x1 - 0.1 * math.cos(x1)) * y + (y - 0.1 * np.sin(y)) ** 2

        def d(y):
            return c4 + 2 * (y - 0.1 * np.sin(y)) * (1 - 0.1 * np.cos(y))

        anchor = x2
    points = min(4096, max(64, int(math.ceil(2 * w / 0.05))))
    return np.array([_global_min_scan(fun, d, c - w, c + w, anchor, points)])


def make_saddle() -> ProblemSpec:
    game = GameProblem(PAIR, _saddle_obj, _saddle_grad, ProblemConstants(), _saddle_br, name="saddle")
    return ProblemSpec(
        "saddle", game, [BlockVector(PAIR, SADDLE_NE)],
        notes="f1 = (x1-1)^2 + 4(x1 + 0.1cos x1)x2 + (x2 + 0.1 sin x2)^2, "
        "f2 = (x1-1)^2 + 4(x1 - 0.1cos x1)x2 + (x2 - 0.1 sin x2)^2",
    )


# ---------------------------------------------------------------------------
# Cournot oligopoly with linear production costs


def build_cournot(n: int = 2, demand: str = "linear", a: float = 10.0, b: float = 1.0,
                  costs: float | Sequence[float] = 1.0) -> ProblemSpec:
    """Cournot game ``f_i(q) = -(P(Q) q_i - c_i q_i)`` with ``P(Q) = a - bQ`` or ``a - bQ^2``."""
    n = int(n)
    if n < 1:
        raise ValueError("need at least one firm")
    c = np.broadcast_to(np.asarray(costs, dtype=np.float64), (n,)).copy()
    if demand not in ("linear", "quadratic"):
        raise ValueError(f"demand must be 'linear' or 'quadratic', got {demand!r}")
    if not (b > 0 and np.all(c > 0) and a > c.max()):
        raise ValueError("need a > max(c) > 0 and b > 0")
    layout = BlockLayout.uniform(n)

    if demand == "linear":
        def obj(i, q):
            return float(-((a - b * q.sum()) * q[i] - c[i] * q[i]))

        def grad(i, q):
            g = np.full(n, b * q[i])
            g[i] = b * q.sum() + b * q[i] - a + c[i]
            return g

        def br(i, q):
            rest = q.sum() - q[i]
            return np.array([(a - c[i] - b * rest) / (2 * b)])

        game = GameProblem(layout, obj, grad,
                           ProblemConstants(L=b * (1 + math.sqrt(n)), mu=2 * b, provenance="analytic"),
                           br, name="cournot-linear")
        q_star = (a - (n + 1) * c + c.sum()) / (b * (n + 1))
        known = [BlockVector(layout, q_star)]
        notes = "linear inverse demand; unconstrained quantities"
    else:
        def obj(i, q):
            Q = q.sum()
            return float(-((a - b * Q * Q) * q[i] - c[i] * q[i]))

        def grad(i, q):
            Q = q.sum()
            g = np.full(n, 2 * b * Q * q[i])
            g[i] = -a + c[i] + b * Q * Q + 2 * b * Q * q[i]
            return g

        game = GameProblem(layout, obj, grad, ProblemConstants(), None, name="cournot-quadratic")
        known = []
        notes = "quadratic inverse demand; cubic profit, best responses by ABR only"
    box = np.tile([0.1, a / (2 * b)], (n, 1))
    return ProblemSpec(game.name, game, known, box, notes)


# ---------------------------------------------------------------------------
# registry


def _make_lq(**params) -> ProblemSpec:
    from .lqgame import lq_problem_spec
    return lq_problem_spec(**params)


_REGISTRY: dict[str, Callable[..., ProblemSpec]] = {
    "f1": make_f1,
    "f2": make_f2,
    "f3": make_f3,
    "f4": make_f4,
    "f5": make_f5,
    "f6": make_f6,
    "saddle": make_saddle,
    "cournot-linear": lambda **kw: build_cournot(demand="linear", **kw),
    "cournot-quadratic": lambda **kw: build_cournot(demand="quadratic", **kw),
    "resource": make_resource,
    "lq": _make_lq,
}

PROBLEM_NAMES = tuple(_REGISTRY)


def registry_get(name: str, **params) -> ProblemSpec:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise UnknownProblemError(f"unknown problem {name!r}; choose from {', '.join(PROBLEM_NAMES)}") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# closed-form values for cross-checking the best-response machinery


def known_function_values(name: str, x) -> dict:
    """Objective values plus the closed-form best-response values and G_F, where available."""
    x = _flat(x)
    x1, x2 = float(x[0]), float(x[1])
    if name == "f1":
        v = _f1(x1, x2)
        br_vals = [2 * (x2**2 - 1) ** 2 / (x2**2 + 1), 2 * (x1**2 - 1) ** 2 / (x1**2 + 1)]
        f = [v, v]
    elif name == "f2":
        v = _f2(x1, x2)
        f = [v, v]
        # only player 1's best value is closed-form: the exp term does not depend on x1
        br_vals = [2 * (x2**2 - 1) ** 2 / (x2**2 + 1) + math.exp(-((x2 - 1) ** 2)), None]
    elif name == "f4":
        v = (x1 + x2) ** 2
        f = [v, v]
        br_vals = [0.0, 0.0]
    elif name == "f6":
        f = [x1**2 + x2**2, (x1 + x2) ** 2]
        br_vals = [x2**2, 0.0]
    elif name == "resource":
        f = [x1 * x1 - 2 * x1 * x2, x2 * x2 - 2 * x1 * x2]
        br_vals = [-(x2**2), -(x1**2)]
    else:
        raise KeyError(f"no closed form registered for {name!r}")
    out = {"f": f, "best_values": br_vals, "F": sum(f), "G": None, "gap": None}
    if all(v is not None for v in br_vals):
        out["G"] = sum(br_vals)
        out["gap"] = sum(fi - gi for fi, gi in zip(f, br_vals))
    return out
