"""Online learners and the model-based reference solver.

``run_semisgd`` performs the single-loop, uni-timescale update: every online
observation updates the value-function weights and the population weights
simultaneously, with the same step size, followed by the ball and simplex
projections.  ``run_online_fpi`` is the forward-backward baseline: each
outer loop advances the chain K steps under a frozen policy while updating
only the population estimate, then replays the same K observations to
update only the value function.  With K = 1 the two produce identical
parameter trajectories under the same seed.

``model_based_fpi_fp`` computes the reference equilibrium by alternating
value iteration, exact induced-population computation, and fictitious-play
averaging of the population iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import (
    ConfigError,
    RunConfig,
    StepSizeSchedule,
    UnifiedParameter,
    SIMPLEX_TOL,
)
from .envs import EnvironmentModel
from .lfa import (
    FeatureMap,
    MeasureBasis,
    one_hot_feature_map,
    one_hot_measure_basis,
    project_simplex,
)
from .metrics import (
    _exploitability_at,
    induced_population,
    q_table,
    value_iteration,
)
from .policy import PolicyOperator, policy_matrix, policy_row, sample_action, softmax_operator

ER_TEMPERATURE_DIVISOR = 1e5


def step_size(schedule: StepSizeSchedule, t: int) -> float:
    """Step size at step t; raises if the value leaves (0, 1)."""
    if t < 0:
        raise ConfigError(f"step index must be >= 0, got {t}")
    if schedule.kind == "constant":
        alpha = schedule.a0
    else:
        alpha = schedule.a0 / (1.0 + schedule.b * t)
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"step size {alpha} at t={t} is outside (0, 1)")
    return alpha


@dataclass
class LearnerState:
    """State of one online run: unified parameter, chain position, step
    counter, and the run's random generator (shared, mutated by steps)."""

    xi: UnifiedParameter
    s: int
    a: int
    t: int
    rng: np.random.Generator


@dataclass(frozen=True)
class ReferenceSolution:
    """Model-based reference equilibrium."""

    q_star: np.ndarray  # (S, A)
    mu_star: np.ndarray  # (S,)
    iterations: int
    final_exploitability: float
    expl_iterations: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    expl_trace: np.ndarray = field(default_factory=lambda: np.empty(0))


@dataclass(frozen=True)
class RunRecord:
    """Metrics of one seeded run, snapshotted at the configured cadence."""

    seed: int
    algorithm: str
    steps: np.ndarray
    mse: Optional[np.ndarray]
    expl_steps: Optional[np.ndarray]
    expl_values: Optional[np.ndarray]
    final: UnifiedParameter
    param_trace: Optional[List[UnifiedParameter]] = None

    def snapshots(self):
        """The run's metric trace as MetricSnapshot values."""
        from .metrics import MetricSnapshot

        expl = {}
        if self.expl_steps is not None:
            expl = dict(zip(self.expl_steps.tolist(), self.expl_values.tolist()))
        out = []
        for i, t in enumerate(self.steps.tolist()):
            m = float(self.mse[i]) if self.mse is not None else 0.0
            out.append(MetricSnapshot(step=t, mse=m, exploitability=expl.get(t)))
        return out


class _OnlineRun:
    """Shared chain/update plumbing for SemiSGD and online FPI.

    Holds flat parameter vectors plus a tabular (S, A) view of theta when
    the feature map is one-hot, the current chain position, and the run's
    generator.  All update arithmetic lives here so the two learners stay
    bitwise comparable.
    """

    def __init__(
        self,
        env: EnvironmentModel,
        phi: FeatureMap,
        basis: MeasureBasis,
        pol: PolicyOperator,
        gamma: float,
        radius: float,
        project: bool = True,
    ):
        self.env = env
        self.phi = phi
        self.basis = basis
        self.pol = pol
        self.project = project
        self.gamma = gamma
        self.radius = radius
        self.tabular_q = phi.one_hot
        self.tabular_m = basis.identity_gram and basis.d2 == env.n_states
        self.feasible = env.actions.feasible
        self.theta = np.zeros(phi.d1)
        self.eta = np.full(basis.d2, 1.0 / basis.d2)
        self.theta2d = None
        self._bind_theta_view()
        self.s = 0
        self.a = 0
        self.t = 0
        self.rng = None

    def _bind_theta_view(self):
        if self.tabular_q:
            self.theta2d = self.theta.reshape(self.env.n_states, self.env.n_actions)

    def init_from_seed(self, seed: int):
        """Default initialization: zero Q, random simplex population,
        uniform initial state, on-policy initial action."""
        rng = np.random.default_rng(seed)
        self.rng = rng
        self.theta[:] = 0.0
        self.eta = project_simplex(rng.random(self.basis.d2))
        self.s = self._sample_index(self.env.initial_state, rng)
        self.a = self._draw_action(self.q_table_now(), self.s, rng)
        self.t = 0

    def init_from_state(self, state: LearnerState):
        self.theta = state.xi.theta.copy()
        self._bind_theta_view()
        self.eta = state.xi.eta.copy()
        self.s, self.a, self.t = state.s, state.a, state.t
        self.rng = state.rng

    # -- policy / sampling helpers -------------------------------------

    def q_table_now(self) -> np.ndarray:
        if self.tabular_q:
            return self.theta2d
        return q_table(self.theta, self.phi, self.env)

    @staticmethod
    def _sample_index(dist: np.ndarray, rng: np.random.Generator) -> int:
        cdf = np.cumsum(dist)
        idx = int(np.searchsorted(cdf, rng.random(), side="right"))
        return min(idx, dist.shape[0] - 1)

    def _draw_action(self, q2d: np.ndarray, s: int, rng: np.random.Generator) -> int:
        if self.feasible is None:
            return sample_action(policy_row(self.pol, q2d[s]), rng)
        feas = self.feasible[s]
        j = sample_action(policy_row(self.pol, q2d[s, feas]), rng)
        return int(feas[j])

    def represent(self) -> np.ndarray:
        if self.tabular_m:
            return self.eta
        return self.basis.masses.T @ self.eta

    # -- chain and updates ----------------------------------------------

    def chain_step(self, q2d_policy: np.ndarray):
        """Advance the chain one transition; the chain is never reset.

        The next action is drawn from the supplied Q table (the current one
        for SemiSGD, the frozen one inside an FPI pass).  Returns the
        observation (s, a, r, s_next, a_next).
        """
        env = self.env
        m = self.represent()
        s, a = self.s, self.a
        r = env.reward(s, a, m)
        s_next = env.sample_next(s, a, m, self.rng)
        a_next = self._draw_action(q2d_policy, s_next, self.rng)
        self.s, self.a = s_next, a_next
        self.t += 1
        return s, a, r, s_next, a_next

    def update_eta(self, s_next: int, alpha: float):
        eta = self.eta
        if self.tabular_m:
            eta *= 1.0 - alpha
            eta[s_next] += alpha
        else:
            g = self.basis.gram @ eta - self.basis.densities[:, s_next]
            eta -= alpha * g
        if self.project:
            if not (eta.min() >= 0.0 and abs(float(eta.sum()) - 1.0) <= SIMPLEX_TOL):
                self.eta = project_simplex(eta)

    def update_theta(self, s, a, r, s_next, a_next, alpha: float):
        if self.tabular_q:
            q = self.theta2d
            td = (q[s, a] - self.gamma * q[s_next, a_next]) - r
            q[s, a] -= alpha * td
        else:
            f = self.phi.evaluate(s, a)
            f_next = self.phi.evaluate(s_next, a_next)
            td = (float(f @ self.theta) - self.gamma * float(f_next @ self.theta)) - r
            self.theta -= alpha * (f * td)
        if self.project:
            norm = float(np.sqrt(self.theta @ self.theta))
            if norm > self.radius:
                self.theta *= self.radius / norm

    def parameter(self) -> UnifiedParameter:
        return UnifiedParameter(theta=self.theta.copy(), eta=self.eta.copy())


class _Recorder:
    """Collects MSE / exploitability snapshots at the configured cadences."""

    def __init__(
        self,
        run: _OnlineRun,
        cadence: int,
        expl_every: Optional[int],
        mu_ref: Optional[np.ndarray],
        ref_map: Optional[np.ndarray],
        record_params: bool,
    ):
        self.run = run
        self.cadence = cadence
        self.expl_every = expl_every
        self.mu_ref = mu_ref
        self.ref_map = ref_map
        self.steps: List[int] = []
        self.mse: List[float] = []
        self.expl_steps: List[int] = []
        self.expl: List[float] = []
        self.trace: Optional[List[UnifiedParameter]] = [] if record_params else None

    def snapshot(self, t: int):
        self.steps.append(t)
        if self.mu_ref is not None:
            m = self.run.represent()
            if self.ref_map is not None:
                m = self.ref_map @ m
            d = m - self.mu_ref
            self.mse.append(float(d @ d))
        if self.expl_every and t % self.expl_every == 0:
            pi = policy_matrix(self.run.pol, self.run.q_table_now(), self.run.feasible)
            mu_pi = induced_population(pi, self.run.env)
            self.expl_steps.append(t)
            self.expl.append(_exploitability_at(pi, self.run.env, mu_pi))

    def maybe_snapshot(self, t: int):
        if t % self.cadence == 0:
            self.snapshot(t)

    def record_param(self):
        if self.trace is not None:
            self.trace.append(self.run.parameter())

    def to_record(self, seed: int, algorithm: str) -> RunRecord:
        return RunRecord(
            seed=seed,
            algorithm=algorithm,
            steps=np.array(self.steps, dtype=int),
            mse=np.array(self.mse) if self.mse else None,
            expl_steps=np.array(self.expl_steps, dtype=int) if self.expl else None,
            expl_values=np.array(self.expl) if self.expl else None,
            final=self.run.parameter(),
            param_trace=self.trace,
        )


def _defaults(env, cfg, phi, basis, pol):
    if phi is None:
        phi = one_hot_feature_map(env.states, env.actions)
    if basis is None:
        basis = one_hot_measure_basis(env.states)
    if pol is None:
        pol = softmax_operator(cfg.inverse_temperature)
    return phi, basis, pol


def init_learner_state(
    env: EnvironmentModel,
    cfg: RunConfig,
    phi: Optional[FeatureMap] = None,
    basis: Optional[MeasureBasis] = None,
    pol: Optional[PolicyOperator] = None,
) -> LearnerState:
    """Initial learner state as used by the run functions."""
    phi, basis, pol = _defaults(env, cfg, phi, basis, pol)
    run = _OnlineRun(env, phi, basis, pol, cfg.gamma, cfg.ball_radius)
    run.init_from_seed(cfg.seed)
    return LearnerState(xi=run.parameter(), s=run.s, a=run.a, t=0, rng=run.rng)


def semisgd_step(
    state: LearnerState,
    env: EnvironmentModel,
    phi: FeatureMap,
    basis: MeasureBasis,
    pol: PolicyOperator,
    alpha: float,
    radius: float = np.inf,
) -> LearnerState:
    """One SemiSGD update from one fresh on-policy observation.

    Both semi-gradients are computed from the same observation and applied
    with the same step size; the chain advances to (s', a') and is never
    reset.  The state's generator is shared with the returned state.
    """
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"step size must lie in (0, 1), got {alpha}")
    run = _OnlineRun(env, phi, basis, pol, env.gamma, radius)
    run.init_from_state(state)
    s, a, r, s_next, a_next = run.chain_step(run.q_table_now())
    run.update_eta(s_next, alpha)
    run.update_theta(s, a, r, s_next, a_next, alpha)
    return LearnerState(xi=run.parameter(), s=run.s, a=run.a, t=run.t, rng=run.rng)


def run_semisgd(
    env: EnvironmentModel,
    cfg: RunConfig,
    phi: Optional[FeatureMap] = None,
    basis: Optional[MeasureBasis] = None,
    pol: Optional[PolicyOperator] = None,
    mu_ref: Optional[np.ndarray] = None,
    ref_map: Optional[np.ndarray] = None,
    record_params: bool = False,
    project: bool = True,
) -> RunRecord:
    """T sequential SemiSGD steps from the default initialization.

    Snapshots are taken at t = 0, every ``cfg.cadence`` steps, and at t = T.
    The record is a deterministic function of (env, cfg).
    """
    phi, basis, pol = _defaults(env, cfg, phi, basis, pol)
    run = _OnlineRun(env, phi, basis, pol, cfg.gamma, cfg.ball_radius, project=project)
    run.init_from_seed(cfg.seed)
    rec = _Recorder(run, cfg.cadence, cfg.expl_every, mu_ref, ref_map, record_params)
    rec.snapshot(0)
    total = cfg.total_steps
    schedule = cfg.schedule
    for t in range(total):
        alpha = step_size(schedule, t)
        s, a, r, s_next, a_next = run.chain_step(run.q_table_now())
        run.update_eta(s_next, alpha)
        run.update_theta(s, a, r, s_next, a_next, alpha)
        rec.record_param()
        if run.t != total:
            rec.maybe_snapshot(run.t)
    if total > 0:
        rec.snapshot(total)
    return rec.to_record(cfg.seed, "semisgd")


_VARIANTS = ("vanilla", "fp", "md", "er")


def fp_mix(eta_hist: np.ndarray, eta_new: np.ndarray, alpha: float) -> np.ndarray:
    """Fictitious-play damping of the population estimate toward its history,
    followed by l1 renormalization.  alpha = 1 keeps the fresh estimate."""
    mixed = (1.0 - alpha) * eta_hist + alpha * eta_new
    mass = float(mixed.sum())
    return mixed / mass if mass > 0 else mixed


def md_mix(theta_hist: np.ndarray, theta_new: np.ndarray, alpha: float) -> np.ndarray:
    """Incremental Q mixing of the mirror-descent baseline.  alpha = 0 keeps
    the historical value function unchanged."""
    return (1.0 - alpha) * theta_hist + alpha * theta_new


def run_online_fpi(
    env: EnvironmentModel,
    cfg: RunConfig,
    variant: Optional[str] = None,
    phi: Optional[FeatureMap] = None,
    basis: Optional[MeasureBasis] = None,
    pol: Optional[PolicyOperator] = None,
    mu_ref: Optional[np.ndarray] = None,
    ref_map: Optional[np.ndarray] = None,
    record_params: bool = False,
) -> RunRecord:
    """Online fixed-point iteration with K inner samples per outer loop.

    Each outer loop freezes the policy at the current Q, advances the chain
    K steps while updating only the population weights (forward pass), then
    replays the same K observations in order to update only the value
    weights with the rewards as observed (backward pass).  The FP variant
    damps the population toward its history after the forward pass, MD
    damps Q after the backward pass, and ER runs with the softmax inverse
    temperature divided by 1e5.
    """
    if variant is None:
        if not cfg.algorithm.startswith("fpi-"):
            raise ConfigError(f"config algorithm {cfg.algorithm!r} is not an FPI variant")
        variant = cfg.algorithm.split("-", 1)[1]
    if variant not in _VARIANTS:
        raise ConfigError(f"unknown FPI variant {variant!r}")
    k = cfg.inner_k
    if k is None or k < 1:
        raise ConfigError("online FPI needs inner_k >= 1")
    if k > cfg.total_steps:
        raise ConfigError(f"inner_k = {k} exceeds the sample budget T = {cfg.total_steps}")

    phi, basis, pol = _defaults(env, cfg, phi, basis, pol)
    if variant == "er":
        if pol.kind != "softmax":
            raise ConfigError("the ER variant needs a softmax policy operator")
        pol = softmax_operator(pol.inverse_temperature / ER_TEMPERATURE_DIVISOR)

    run = _OnlineRun(env, phi, basis, pol, cfg.gamma, cfg.ball_radius)
    run.init_from_seed(cfg.seed)
    rec = _Recorder(run, cfg.cadence, cfg.expl_every, mu_ref, ref_map, record_params)
    rec.snapshot(0)
    schedule = cfg.schedule
    total = cfg.total_steps

    eta_hist = run.eta.copy() if variant == "fp" else None
    theta_hist = run.theta.copy() if variant == "md" else None

    obs_s = np.empty(k, dtype=int)
    obs_a = np.empty(k, dtype=int)
    obs_r = np.empty(k)
    obs_sn = np.empty(k, dtype=int)
    obs_an = np.empty(k, dtype=int)

    outer = 0
    while run.t < total:
        k_eff = min(k, total - run.t)
        frozen_q = run.q_table_now().copy()
        base_t = run.t
        # forward pass: population updates along the live chain
        for i in range(k_eff):
            alpha = step_size(schedule, base_t + i)
            s, a, r, s_next, a_next = run.chain_step(frozen_q)
            run.update_eta(s_next, alpha)
            obs_s[i], obs_a[i], obs_r[i] = s, a, r
            obs_sn[i], obs_an[i] = s_next, a_next
            if run.t != total:
                rec.maybe_snapshot(run.t)
        if variant == "fp":
            run.eta = fp_mix(eta_hist, run.eta, step_size(schedule, outer))
            eta_hist = run.eta.copy()
        # backward pass: replay the same observations for the value update
        for i in range(k_eff):
            alpha = step_size(schedule, base_t + i)
            run.update_theta(
                int(obs_s[i]), int(obs_a[i]), float(obs_r[i]),
                int(obs_sn[i]), int(obs_an[i]), alpha,
            )
        if variant == "md":
            run.theta = md_mix(theta_hist, run.theta, step_size(schedule, outer))
            run._bind_theta_view()
            theta_hist = run.theta.copy()
        rec.record_param()
        outer += 1
    rec.snapshot(total)
    return rec.to_record(cfg.seed, f"fpi-{variant}")


def model_based_fpi_fp(
    env: EnvironmentModel,
    outer_iters: int = 300,
    vi_iters: Optional[int] = None,
    vi_tol: float = 1e-10,
    expl_every: Optional[int] = 1,
    pop_tol: float = 1e-12,
) -> ReferenceSolution:
    """Reference equilibrium by model-based FPI with fictitious play.

    Alternates (i) value iteration at the averaged population, (ii) exact
    induced-population computation for the greedy policy (population fed
    back into the kernel), and (iii) fictitious-play averaging
    mu <- (k*mu + mu_new)/(k+1).  Once the greedy policy and its induced
    population stop changing, a final consistency pass recomputes the value
    function at the exact induced population, so the returned pair
    satisfies both fixed points up to the stated tolerances.
    """
    if outer_iters < 1:
        raise ConfigError("outer_iters must be >= 1")
    mu_avg = env.initial_state.copy()
    v = None
    expl_iters: List[int] = []
    expl_vals: List[float] = []
    greedy_prev = None
    mu_ind_prev = None
    iterations = 0

    for k in range(outer_iters):
        v, q, pi = value_iteration(
            env, mu_avg, tol=vi_tol, max_iters=vi_iters, v0=v, strict=False
        )
        mu_ind = induced_population(pi, env, tol=pop_tol)
        iterations = k + 1
        if expl_every and k % expl_every == 0:
            expl_iters.append(k)
            expl_vals.append(_exploitability_at(pi, env, mu_ind, tol=vi_tol, v0=v))
        greedy_actions = np.argmax(pi, axis=1)
        if (
            greedy_prev is not None
            and np.array_equal(greedy_actions, greedy_prev)
            and float(np.abs(mu_ind - mu_ind_prev).sum()) < 10.0 * pop_tol
        ):
            break
        greedy_prev = greedy_actions
        mu_ind_prev = mu_ind
        mu_avg = (k * mu_avg + mu_ind) / (k + 1.0)

    # consistency pass at the final greedy policy
    pi_last = np.zeros((env.n_states, env.n_actions))
    pi_last[np.arange(env.n_states), greedy_prev] = 1.0
    mu_star = induced_population(pi_last, env, tol=pop_tol)
    v_star, q_star, pi_star = value_iteration(
        env, mu_star, tol=vi_tol, max_iters=vi_iters, v0=v, strict=False
    )
    if np.array_equal(np.argmax(pi_star, axis=1), greedy_prev):
        final_expl = _exploitability_at(pi_star, env, mu_star, tol=vi_tol, v0=v_star)
    else:
        mu_pi = induced_population(pi_star, env, tol=pop_tol)
        final_expl = _exploitability_at(pi_star, env, mu_pi, tol=vi_tol, v0=v_star)
    return ReferenceSolution(
        q_star=q_star,
        mu_star=mu_star,
        iterations=iterations,
        final_exploitability=final_expl,
        expl_iterations=np.array(expl_iters, dtype=int),
        expl_trace=np.array(expl_vals),
    )
