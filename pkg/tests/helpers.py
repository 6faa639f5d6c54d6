"""Small games shared by the unit tests."""

import numpy as np

from nashbcd.blockvec import BlockLayout
from nashbcd.game import GameProblem, ProblemConstants


def quadratic_single(c: float = 1.5) -> GameProblem:
    """One player, ``f(x) = (x - c)^2``."""
    return GameProblem(
        BlockLayout((1,)),
        lambda i, x: float((x[0] - c) ** 2),
        lambda i, x: np.array([2 * (x[0] - c)]),
        ProblemConstants(2.0, 2.0, "analytic"),
        lambda i, x: np.array([c]),
        name="quad1",
    )


def zero_game(n: int = 2) -> GameProblem:
    return GameProblem(BlockLayout.uniform(n), lambda i, x: 0.0, lambda i, x: np.zeros(n), name="zero")


def separable_quadratic(c=(1.0, -2.0)) -> GameProblem:
    """``f_j(x) = (x_j - c_j)^2``; every player ignores the others."""
    c = np.asarray(c, dtype=np.float64)
    n = c.size

    def grad(j, x):
        g = np.zeros(n)
        g[j] = 2 * (x[j] - c[j])
        return g

    return GameProblem(BlockLayout.uniform(n), lambda j, x: float((x[j] - c[j]) ** 2), grad,
                       ProblemConstants(2.0, 2.0, "analytic"), lambda j, x: np.array([c[j]]), name="sepquad")


def broken_gradient() -> GameProblem:
    """``f = x1^2 + x2^2`` with a wrong second gradient coordinate (negative control)."""
    return GameProblem(BlockLayout.uniform(2), lambda i, x: float(x[0] ** 2 + x[1] ** 2),
                       lambda i, x: np.array([2 * x[0], 3 * x[1]]), name="broken")


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def report(number: int, passed: bool, detail: str) -> bool:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed
