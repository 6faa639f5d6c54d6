import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nashbcd.bestresponse import exact_best_responses, gap
from nashbcd.diagnostics import estimate_pl
from nashbcd.game import finite_diff_gradient, gradient_error
from nashbcd.lqgame import (
    LQGameSpec,
    RiccatiError,
    UnstableProfileError,
    _lyap,
    closed_loop,
    counterexample,
    evaluate,
    gd_best_response,
    lq_as_game,
    lq_cost,
    lq_cost_and_gradient,
    lq_full_gradient,
    lyapunov_value,
    random_instance,
    riccati_best_response,
    sample_stable_profiles,
    scalar_state_instance,
    sigma_K,
    simulated_cost,
    unit_box_profile,
)
from nashbcd.problems import registry_get


def scalar_game(a=1.0, b=1.0, q=1.0, r=1.0, s0=1.0):
    return LQGameSpec([[a]], [[[b]]], [[[q]]], [[[r]]], [[s0]])


def joint_ne(spec, K, sweeps=400):
    """Gauss-Seidel best-response iteration; converges on the weakly coupled test instances."""
    K = [k.copy() for k in spec.unflatten(K)]
    for _ in range(sweeps):
        for i in range(spec.n):
            K[i] = riccati_best_response(spec, K, i)
    return spec.flatten(K)


# ---------------------------------------------------------------------------
# closed loop, Lyapunov and correlation matrices


def test_counterexample_stability():
    spec, K1, K1p, K2 = counterexample()
    assert closed_loop(spec, [K1, K2])[2]
    assert closed_loop(spec, [K1p, K2])[2]
    assert not closed_loop(spec, [(K1 + K1p) / 2, K2])[2]
    costs = [lq_cost(spec, [K, K2], 0) for K in (K1, K1p, (K1 + K1p) / 2)]
    assert math.isfinite(costs[0]) and math.isfinite(costs[1]) and costs[2] == math.inf


def test_scalar_closed_loop():
    A_cl, rho, stable = closed_loop(scalar_game(), [np.array([[0.5]])])
    assert A_cl.item() == 0.5 and rho == 0.5 and stable
    assert not closed_loop(scalar_game(a=1.2), [np.array([[0.0]])])[2]


def test_scalar_lyapunov_and_sigma():
    spec = scalar_game(q=1.0, r=1.0)
    K = [np.array([[0.5]])]
    # Q + K R K = 1.25, a_cl = 0.5
    for method in ("direct", "scipy", "iterate"):
        assert lyapunov_value(spec, K, 0, method).item() == pytest.approx(5 / 3, rel=1e-12)
        assert sigma_K(spec, K, method).item() == pytest.approx(4 / 3, rel=1e-12)


def test_zero_closed_loop():
    spec = scalar_game(a=0.5, q=2.0, r=3.0, s0=0.7)
    K = [np.array([[0.5]])]
    assert lyapunov_value(spec, K, 0).item() == pytest.approx(2 + 0.25 * 3)
    assert sigma_K(spec, K).item() == pytest.approx(0.7)


def test_diagonal_sigma():
    spec = LQGameSpec(np.diag([0.5, 0.0]), [np.zeros((2, 1))], [np.eye(2)], [np.eye(1)], np.eye(2))
    np.testing.assert_allclose(sigma_K(spec, [np.zeros((1, 2))]), np.diag([4 / 3, 1]), atol=1e-14)


def test_unstable_markers():
    spec = scalar_game(a=1.5)
    K = [np.array([[0.0]])]
    assert np.all(np.isinf(lyapunov_value(spec, K, 0)))
    assert lq_cost(spec, K, 0) == math.inf
    assert lq_cost_and_gradient(spec, K, 0) == (math.inf, None)
    with pytest.raises(UnstableProfileError):
        sigma_K(spec, K)
    with pytest.raises(UnstableProfileError):
        lq_full_gradient(spec, K, 0)
    with pytest.raises(ValueError):
        _lyap(np.eye(1), np.eye(1), "nope")


def test_spec_validation():
    with pytest.raises(ValueError):
        LQGameSpec([[1.0, 0.0]], [[[1.0]]], [[[1.0]]], [[[1.0]]], [[1.0]])
    with pytest.raises(ValueError):
        LQGameSpec([[1.0]], [[[1.0]]], [[[-1.0]]], [[[1.0]]], [[1.0]])
    with pytest.raises(ValueError):
        LQGameSpec([[1.0]], [[[1.0]]], [[[1.0]]], [[[0.0]]], [[1.0]])
    with pytest.raises(ValueError):
        LQGameSpec([[1.0]], [[[1.0]]], [[[1.0]]], [[[1.0]]], [[0.0]])


def test_spec_round_trip():
    spec = random_instance(3, 2, 2, seed=4)
    back = LQGameSpec.from_dict(spec.to_dict())
    for a, b in zip(back.B + back.Q + back.R, spec.B + spec.Q + spec.R):
        assert np.array_equal(a, b)
    x = np.arange(spec.layout.total_dim, dtype=float)
    assert np.array_equal(spec.flatten(spec.unflatten(x)), x)


@given(st.integers(0, 200))
def test_lyapunov_residuals(seed):
    spec = random_instance(2, 3, 2, seed=seed)
    x = sample_stable_profiles(spec, np.random.default_rng(seed), 1)[0]
    K = spec.unflatten(x)
    ev = evaluate(spec, K)
    for i in range(spec.n):
        M = spec.Q[i] + K[i].T @ spec.R[i] @ K[i]
        assert np.linalg.norm(ev.P[i] - (M + ev.A_cl.T @ ev.P[i] @ ev.A_cl)) <= 1e-9
        assert np.linalg.eigvalsh(ev.P[i]).min() >= -1e-12
    S = ev.Sigma_K
    assert np.linalg.norm(S - (spec.Sigma0 + ev.A_cl @ S @ ev.A_cl.T)) <= 1e-9
    assert ev.spectral_radius < 1


@given(st.integers(0, 200))
def test_solver_methods_agree(seed):
    spec = random_instance(2, 2, 1, seed=seed)
    x = sample_stable_profiles(spec, np.random.default_rng(seed), 1)[0]
    P = [lyapunov_value(spec, x, 0, m) for m in ("direct", "scipy", "iterate")]
    np.testing.assert_allclose(P[0], P[1], atol=1e-9)
    np.testing.assert_allclose(P[0], P[2], atol=1e-9)


def test_cost_matches_simulation():
    for spec in (scalar_game(a=0.9, b=1.0), random_instance(2, 2, 1, seed=1)):
        x = sample_stable_profiles(spec, np.random.default_rng(0), 1, box=0.3)[0] if spec.d > 1 else np.array([0.5])
        K = spec.unflatten(x)
        rho = closed_loop(spec, K)[1]
        H = 400
        c = lq_cost(spec, K, 0)
        sim = simulated_cost(spec, K, 0, H)
        assert abs(c - sim) <= c * rho ** (2 * (H + 1)) * 10 + 1e-12


# ---------------------------------------------------------------------------
# gradients


def test_scalar_gradient_finite_difference():
    spec = scalar_game(a=0.9, b=1.0, q=1.0, r=1.0)
    _, g = lq_cost_and_gradient(spec, [np.array([[0.5]])], 0)
    h = 1e-6
    fd = (lq_cost(spec, [np.array([[0.5 + h]])], 0) - lq_cost(spec, [np.array([[0.5 - h]])], 0)) / (2 * h)
    assert g.item() == pytest.approx(fd, abs=1e-6)


@pytest.mark.parametrize("seed", range(20))
def test_policy_gradient_matches_finite_differences(seed):
    spec = random_instance(n=2, d=2, k=1, seed=seed)
    p = lq_as_game(spec)
    x = sample_stable_profiles(spec, np.random.default_rng(seed), 1)[0]
    for i in range(2):
        err = gradient_error(np.asarray(p.full_gradient(i, x)), finite_diff_gradient(p, i, x))
        assert err.max() <= 1e-5


def test_own_gradient_two_formulas_agree():
    spec = random_instance(3, 2, 2, seed=7)
    x = sample_stable_profiles(spec, np.random.default_rng(7), 1)[0]
    K = spec.unflatten(x)
    for i in range(spec.n):
        _, g = lq_cost_and_gradient(spec, K, i)
        np.testing.assert_allclose(lq_full_gradient(spec, K, i)[i], g, atol=1e-12)
        np.testing.assert_allclose(lq_full_gradient(spec, x, i, evaluate(spec, K))[i], g, atol=1e-12)


# ---------------------------------------------------------------------------
# best responses


def test_scalar_riccati_against_line_search():
    from scipy.optimize import minimize_scalar
    spec = scalar_game(a=0.5, b=1.0, q=1.0, r=1.0)
    k = riccati_best_response(spec, [np.array([[0.0]])], 0).item()
    res = minimize_scalar(lambda v: lq_cost(spec, [np.array([[v]])], 0), bounds=(-1.4, 1.4),
                          method="bounded", options={"xatol": 1e-12})
    assert k == pytest.approx(res.x, abs=1e-6)
    # scalar DARE with a = 0.5, b = q = r = 1 reduces to p^2 - p/4 - 1 = 0
    p = (0.25 + math.sqrt(0.25**2 + 4)) / 2
    assert k == pytest.approx(0.5 * p / (1 + p), rel=1e-10)


def test_zero_state_cost_gives_zero_gain():
    spec = LQGameSpec(np.diag([0.5, 0.2]), [np.ones((2, 1))], [np.zeros((2, 2))], [np.eye(1)], np.eye(2))
    np.testing.assert_allclose(riccati_best_response(spec, [np.zeros((1, 2))], 0), 0, atol=1e-12)


def test_not_stabilizable():
    spec = LQGameSpec([[2.0]], [[[0.0]]], [[[1.0]]], [[[1.0]]], [[1.0]])
    with pytest.raises(RiccatiError):
        riccati_best_response(spec, [np.array([[0.0]])], 0)


@pytest.mark.parametrize("seed", range(5))
def test_riccati_matches_gradient_descent(seed):
    spec = random_instance(n=2, d=2, k=1, seed=seed)
    x = sample_stable_profiles(spec, np.random.default_rng(seed), 1)[0]
    K = spec.unflatten(x)
    for i in range(spec.n):
        np.testing.assert_allclose(riccati_best_response(spec, K, i), gd_best_response(spec, K, i), atol=1e-6)


def test_riccati_best_response_is_stationary():
    spec = random_instance(3, 2, 1, seed=2)
    K = spec.unflatten(sample_stable_profiles(spec, np.random.default_rng(2), 1)[0])
    for i in range(spec.n):
        Kb = list(K)
        Kb[i] = riccati_best_response(spec, K, i)
        assert np.abs(lq_cost_and_gradient(spec, Kb, i)[1]).max() <= 1e-8


def test_nash_profile_is_fixed_point_with_zero_gap():
    spec = scalar_state_instance(3, 2, seed=19)
    x = joint_ne(spec, unit_box_profile(spec, np.random.default_rng(0)))
    K = spec.unflatten(x)
    for i in range(spec.n):
        np.testing.assert_allclose(riccati_best_response(spec, K, i), K[i], atol=1e-9)
    p = lq_as_game(spec)
    assert abs(gap(p, x, exact_best_responses(p, x))) <= 1e-12


def test_single_player_game_is_policy_gradient():
    spec = scalar_game(a=0.9, b=1.0)
    p = lq_as_game(spec)
    x = np.array([0.3])
    _, g = lq_cost_and_gradient(spec, [np.array([[0.3]])], 0)
    np.testing.assert_allclose(p.full_gradient(0, x), g.reshape(-1))


def test_game_wrapper_marks_unstable_profiles():
    p = lq_as_game(scalar_game(a=0.9, b=1.0))
    assert p.objective(0, np.array([-1.0])) == math.inf
    assert np.all(np.isnan(p.full_gradient(0, np.array([-1.0]))))


# ---------------------------------------------------------------------------
# instances


def test_scalar_instance_unit_box_is_stable():
    spec = scalar_state_instance(3, 2, seed=0)
    rng = np.random.default_rng(1)
    for _ in range(200):
        assert closed_loop(spec, unit_box_profile(spec, rng))[2]


def test_random_instance_open_loop_radius():
    spec = random_instance(3, 2, 1, seed=5)
    assert np.max(np.abs(np.linalg.eigvals(spec.A))) == pytest.approx(0.9)
    assert closed_loop(spec, np.zeros(spec.layout.total_dim))[2]


def test_registry_kinds():
    s = registry_get("lq", kind="scalar", n=3, k=2, seed=19)
    assert s.lq.d == 1 and s.lq.k == [2, 2, 2]
    assert np.all(s.test_box == [0.0, 1.0])
    s = registry_get("lq", n=2, d=3, k=1, seed=0)
    assert s.lq.d == 3 and s.game.layout.total_dim == 6
    with pytest.raises(ValueError):
        registry_get("lq", kind="other")


def test_pl_constant_positive_on_stable_box():
    spec = registry_get("lq", n=2, d=2, k=1, seed=3)
    prof = estimate_pl(spec, samples=200, seed=0)
    assert prof.mu_hat > 0
