import numpy as np
import pytest

from mfglearn.core import ActionSpace, StateSpace, UnifiedParameter
from mfglearn.envs import EnvironmentModel, toy_finite_env
from mfglearn.lfa import (
    one_hot_feature_map,
    one_hot_measure_basis,
    tan_normal_basis,
)
from mfglearn.metrics import (
    MetricSnapshot,
    MetricsError,
    exploitability,
    induced_population,
    mean_path_semigradient,
    mse,
    policy_evaluation,
    resample_masses,
    span_residual,
    stationary_distribution,
    value_iteration,
)
from mfglearn.policy import argmax_operator, policy_matrix

from .test_envs import eigen_stationary


def make_env(kernel_rows, rewards, gamma=0.5, feasible=None):
    """Tiny hand-specified environment; kernel_rows has shape (S, A, S)."""
    kernel_rows = np.asarray(kernel_rows, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    n_s, n_a, _ = kernel_rows.shape
    idx = np.broadcast_to(np.arange(n_s)[None, None, :], kernel_rows.shape)

    def sample_next(s, a, mu, rng):
        return int(np.searchsorted(np.cumsum(kernel_rows[s, a]), rng.random(), side="right"))

    return EnvironmentModel(
        name="inline",
        states=StateSpace(size=n_s, kind="edges"),
        actions=ActionSpace(size=n_a, feasible=feasible),
        gamma=gamma,
        reward=lambda s, a, mu: float(rewards[s, a]),
        reward_matrix=lambda mu: rewards.copy(),
        sample_next=sample_next,
        exact_kernel=lambda s, a, mu: kernel_rows[s, a].copy(),
        kernel_support=lambda mu: (idx, kernel_rows),
        initial_state=np.full(n_s, 1.0 / n_s),
        reward_bound=float(np.abs(rewards).max()) or 1.0,
        population_independent=True,
    )


def cycle_env(n):
    kernel = np.zeros((n, 1, n))
    for s in range(n):
        kernel[s, 0, (s + 1) % n] = 1.0
    return make_env(kernel, np.zeros((n, 1)))


# -- mse ----------------------------------------------------------------------


def test_mse_zero_on_equal():
    m = np.array([0.25, 0.75])
    assert mse(m, m) == 0.0


def test_mse_opposite_vertices():
    assert mse(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 2.0


def test_mse_rejects_length_mismatch():
    with pytest.raises(ValueError):
        mse(np.ones(3) / 3, np.ones(4) / 4)


def test_mse_composes_with_represented_measure():
    basis = tan_normal_basis(StateSpace(size=50, kind="grid", delta=0.02), 2)
    eta = np.array([0.3, 0.7])
    ref = np.full(50, 0.02)
    assert mse(basis.represent(eta), ref) >= 0.0


# -- induced populations -------------------------------------------------------


def test_induced_population_cycle_is_uniform():
    env = cycle_env(6)
    pi = np.ones((6, 1))
    np.testing.assert_allclose(induced_population(pi, env), 1.0 / 6.0, atol=1e-12)


def test_induced_population_fully_mixing_kernel():
    rho = np.array([0.1, 0.2, 0.7])
    kernel = np.broadcast_to(rho, (3, 2, 3)).copy()
    env = make_env(kernel, np.zeros((3, 2)))
    pi = np.full((3, 2), 0.5)
    np.testing.assert_allclose(induced_population(pi, env), rho, atol=1e-12)


def test_induced_population_matches_eigen_oracle(toy_env):
    rng = np.random.default_rng(0)
    pi = rng.dirichlet(np.ones(2), size=3)
    mu = induced_population(pi, toy_env)
    # feed the converged population back into the kernel for the oracle
    from mfglearn.metrics import dense_policy_kernel

    p = dense_policy_kernel(pi, toy_env, mu)
    np.testing.assert_allclose(mu, eigen_stationary(p), atol=1e-9)
    assert abs(mu.sum() - 1.0) <= 1e-12
    assert mu.min() >= 0.0


def test_stationary_distribution_frozen_kernel(toy_env):
    rng = np.random.default_rng(1)
    pi = rng.dirichlet(np.ones(2), size=3)
    mu_env = rng.dirichlet(np.ones(3))
    mu = stationary_distribution(pi, toy_env, mu_env)
    from mfglearn.metrics import dense_policy_kernel

    p = dense_policy_kernel(pi, toy_env, mu_env)
    np.testing.assert_allclose(mu @ p, mu, atol=1e-11)


# -- value iteration and policy evaluation -------------------------------------


def test_value_iteration_gamma_zero_single_sweep():
    env = toy_finite_env(3, 2, seed=4, gamma=0.0)
    mu = env.initial_state
    v, q, pi = value_iteration(env, mu)
    np.testing.assert_allclose(v, env.reward_matrix(mu).max(axis=1), atol=1e-12)


def test_value_iteration_geometric_series():
    env = make_env(np.ones((1, 1, 1)), np.ones((1, 1)), gamma=0.5)
    v, q, pi = value_iteration(env, env.initial_state, tol=1e-12)
    assert v[0] == pytest.approx(2.0, abs=1e-9)


def test_value_iteration_matches_enumeration_oracle():
    # 2-state, 2-action chain solved by enumerating all deterministic
    # policies with exact linear solves
    kernel = np.zeros((2, 2, 2))
    kernel[0, 0] = [1.0, 0.0]
    kernel[0, 1] = [0.2, 0.8]
    kernel[1, 0] = [0.6, 0.4]
    kernel[1, 1] = [0.0, 1.0]
    rewards = np.array([[1.0, 0.0], [0.5, -0.2]])
    env = make_env(kernel, rewards, gamma=0.9)
    v, q, pi = value_iteration(env, env.initial_state, tol=1e-12)

    best = np.full(2, -np.inf)
    for a0 in range(2):
        for a1 in range(2):
            p = np.stack([kernel[0, a0], kernel[1, a1]])
            r = np.array([rewards[0, a0], rewards[1, a1]])
            v_pi = np.linalg.solve(np.eye(2) - 0.9 * p, r)
            best = np.maximum(best, v_pi)
    np.testing.assert_allclose(v, best, atol=1e-8)


def test_value_iteration_respects_feasibility():
    kernel = np.zeros((2, 2, 2))
    kernel[:, :, 0] = 1.0
    rewards = np.array([[0.0, 100.0], [1.0, 100.0]])
    feasible = (np.array([0]), np.array([0]))
    env = make_env(kernel, rewards, gamma=0.0, feasible=feasible)
    v, q, pi = value_iteration(env, env.initial_state)
    np.testing.assert_allclose(v, [0.0, 1.0], atol=1e-12)
    np.testing.assert_array_equal(pi.argmax(axis=1), [0, 0])


def test_value_iteration_strict_raises_with_residual():
    env = toy_finite_env(3, 2, seed=4, gamma=0.9)
    with pytest.raises(MetricsError) as err:
        value_iteration(env, env.initial_state, tol=1e-12, max_iters=2)
    assert np.isfinite(err.value.residual)


def test_policy_evaluation_consistency_with_value_iteration(toy_env):
    mu = toy_env.initial_state
    v, q, pi = value_iteration(toy_env, mu, tol=1e-11)
    v_pi = policy_evaluation(toy_env, pi, mu, tol=1e-11)
    np.testing.assert_allclose(v_pi, v, atol=1e-8)


def test_policy_evaluation_gamma_zero():
    env = toy_finite_env(3, 2, seed=4, gamma=0.0)
    mu = env.initial_state
    pi = np.full((3, 2), 0.5)
    v = policy_evaluation(env, pi, mu)
    np.testing.assert_allclose(v, (pi * env.reward_matrix(mu)).sum(axis=1), atol=1e-12)


def test_policy_evaluation_uniform_policy_linear_solve_oracle():
    kernel = np.zeros((2, 2, 2))
    kernel[0, 0] = [0.5, 0.5]
    kernel[0, 1] = [1.0, 0.0]
    kernel[1, 0] = [0.3, 0.7]
    kernel[1, 1] = [0.0, 1.0]
    rewards = np.array([[1.0, -1.0], [0.0, 2.0]])
    env = make_env(kernel, rewards, gamma=0.8)
    pi = np.full((2, 2), 0.5)
    p_pi = np.einsum("sa,san->sn", pi, kernel)
    r_pi = (pi * rewards).sum(axis=1)
    expected = np.linalg.solve(np.eye(2) - 0.8 * p_pi, r_pi)
    np.testing.assert_allclose(policy_evaluation(env, pi, env.initial_state, tol=1e-12), expected, atol=1e-9)


# -- exploitability -------------------------------------------------------------


def test_exploitability_zero_for_single_action_env():
    env = toy_finite_env(3, 1, seed=2)
    pi = np.ones((3, 1))
    assert exploitability(pi, env) == 0.0


def test_exploitability_zero_at_reference(toy_env, toy_reference):
    pi = policy_matrix(argmax_operator(), toy_reference.q_star)
    assert exploitability(pi, toy_env) <= 1e-8


def test_exploitability_of_suboptimal_policy_matches_enumeration(toy_env):
    # deliberately play the worst greedy action everywhere
    mu_probe = toy_env.initial_state
    _, q, _ = value_iteration(toy_env, mu_probe, tol=1e-11)
    worst = np.zeros_like(q)
    worst[np.arange(3), q.argmin(axis=1)] = 1.0
    got = exploitability(worst, toy_env)

    mu_pi = induced_population(worst, toy_env)
    v_pi = policy_evaluation(toy_env, worst, mu_pi, tol=1e-11)
    best = np.full(3, -np.inf)
    for a0 in range(2):
        for a1 in range(2):
            for a2 in range(2):
                pi = np.zeros((3, 2))
                pi[np.arange(3), [a0, a1, a2]] = 1.0
                best = np.maximum(best, policy_evaluation(toy_env, pi, mu_pi, tol=1e-11))
    expected = float(mu_pi @ (best - v_pi))
    assert got == pytest.approx(expected, abs=1e-7)
    assert got > 0.0


# -- stationarity certificate ---------------------------------------------------


def test_mean_path_semigradient_eta_block_zero_at_stationary(toy_env):
    phi = one_hot_feature_map(toy_env.states, toy_env.actions)
    basis = one_hot_measure_basis(toy_env.states)
    rng = np.random.default_rng(3)
    theta = rng.normal(size=6)
    pol = argmax_operator()
    q = theta.reshape(3, 2)
    pi = policy_matrix(pol, q)
    # the consistency fixed point: eta equals the stationary distribution of
    # the chain frozen at eta itself
    eta = induced_population(pi, toy_env)
    xi = UnifiedParameter(theta=theta, eta=eta)
    g = mean_path_semigradient(xi, toy_env, phi, basis, pol)
    assert np.abs(g[6:]).max() <= 1e-10


def test_mean_path_semigradient_detects_perturbation(toy_env, toy_reference):
    phi = one_hot_feature_map(toy_env.states, toy_env.actions)
    basis = one_hot_measure_basis(toy_env.states)
    pol = argmax_operator()
    theta = toy_reference.q_star.ravel().copy()
    theta[0] += 0.1
    xi = UnifiedParameter(theta=theta, eta=toy_reference.mu_star)
    g = mean_path_semigradient(xi, toy_env, phi, basis, pol)
    assert np.linalg.norm(g) > 0.0


# -- span residual ----------------------------------------------------------------


def test_span_residual_zero_for_basis_member():
    basis = tan_normal_basis(StateSpace(size=50, kind="grid", delta=0.02), 3)
    mu = basis.masses[1]
    assert span_residual(mu, basis) <= 1e-10


def test_span_residual_zero_for_full_one_hot_basis():
    basis = one_hot_measure_basis(StateSpace(size=5, kind="edges"))
    rng = np.random.default_rng(4)
    for _ in range(10):
        mu = rng.dirichlet(np.ones(5))
        assert span_residual(mu, basis) <= 1e-10


def test_span_residual_positive_off_span():
    basis = tan_normal_basis(StateSpace(size=50, kind="grid", delta=0.02), 2)
    mu = np.zeros(50)
    mu[7] = 1.0
    assert span_residual(mu, basis) > 0.1


# -- plumbing ---------------------------------------------------------------------


def test_metric_snapshot_rejects_negative_mse():
    with pytest.raises(ValueError):
        MetricSnapshot(step=0, mse=-1.0)
    MetricSnapshot(step=0, mse=0.0, exploitability=None)


def test_resample_masses_preserves_mass():
    w = resample_masses(5, 200)
    np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)
    mu = np.random.default_rng(5).dirichlet(np.ones(5))
    fine = w @ mu
    assert fine.sum() == pytest.approx(1.0, abs=1e-12)
    # each coarse cell spreads uniformly over its 40 fine cells
    np.testing.assert_allclose(fine[:40], mu[0] / 40.0, atol=1e-15)


def test_resample_masses_identity():
    np.testing.assert_allclose(resample_masses(7, 7), np.eye(7), atol=1e-12)
