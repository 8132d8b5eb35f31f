"""Benchmark environments: speed control on a ring road, flocking on the
unit interval, routing on a 24-node road network, and a small synthetic
finite game for tests and stationarity checks.

Every environment exposes sampled transitions, a scalar and a vectorized
reward, and exact transition-kernel access (dense rows via ``exact_kernel``
and a bulk sparse form via ``kernel_support``) for the model-based solver
and the exploitability metric.

Grid dynamics: the continuous move s' = s + a*dt (mod 1) is mapped back to
the grid by stochastic rounding of the displacement in cells, which keeps
the mean displacement exact and the chain ergodic.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np

from .core import ActionSpace, StateSpace


class NetworkLoadError(ValueError):
    """Raised when a routing network file is malformed or unusable."""


@dataclass(frozen=True)
class EnvironmentModel:
    """A mean field game environment on finite state and action spaces.

    ``reward`` and ``sample_next`` take the population as a per-cell mass
    vector.  ``kernel_support(mu)`` returns ``(idx, probs)`` of shape
    (S, A, m): the m possible successors of each state-action pair and
    their probabilities.
    """

    name: str
    states: StateSpace
    actions: ActionSpace
    gamma: float
    reward: Callable[[int, int, np.ndarray], float]
    reward_matrix: Callable[[np.ndarray], np.ndarray]
    sample_next: Callable[[int, int, np.ndarray, np.random.Generator], int]
    exact_kernel: Callable[[int, int, np.ndarray], np.ndarray]
    kernel_support: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]
    initial_state: np.ndarray
    reward_bound: float
    population_independent: bool
    extras: Optional[dict] = None

    @property
    def n_states(self) -> int:
        return self.states.size

    @property
    def n_actions(self) -> int:
        return self.actions.size


def _grid_shift_table(size: int, delta_a: float, delta_t: float, delta_s: float):
    """Per-action (base shift, fractional carry) for stochastic rounding."""
    disp = np.arange(size) * delta_a * delta_t / delta_s
    lo = np.floor(disp).astype(np.int64)
    frac = disp - lo
    return lo, frac


def _grid_kernel_support(size: int, lo: np.ndarray, frac: np.ndarray):
    """Sparse (S, A, 2) kernel arrays for a wrap-around shift grid."""
    s = np.arange(size)[:, None]
    idx0 = (s + lo[None, :]) % size
    idx1 = (s + lo[None, :] + 1) % size
    idx = np.stack([idx0, idx1], axis=-1)
    p1 = np.broadcast_to(frac[None, :], (size, size))
    probs = np.stack([1.0 - p1, p1], axis=-1)
    return idx, probs


def _grid_transition_fns(size: int, lo: np.ndarray, frac: np.ndarray):
    """sample_next / exact_kernel / kernel_support closures for shift grids."""
    idx_cache, prob_cache = _grid_kernel_support(size, lo, frac)

    def sample_next(s, a, mu, rng):
        shift = lo[a]
        if rng.random() < frac[a]:
            shift += 1
        return (s + shift) % size

    def exact_kernel(s, a, mu):
        row = np.zeros(size)
        row[(s + lo[a]) % size] += 1.0 - frac[a]
        row[(s + lo[a] + 1) % size] += frac[a]
        return row

    def kernel_support(mu):
        return idx_cache, prob_cache

    return sample_next, exact_kernel, kernel_support


def ring_road_env(size: int = 50) -> EnvironmentModel:
    """Speed control on a ring road discretized into ``size`` cells.

    Locations and speeds share the grid {0, 1/size, ...}; one decision step
    covers dt = 1/size.  The cost penalizes deviation from a location-
    dependent stimulus speed corrected by local congestion:

        r(s, a, mu) = -1/2 (b(s) + 1/2 (1 - mu(s)/mu_jam) - a)^2 ds

    with b(s) = 0.2 (sin(4 pi s) + 2), mu_jam = 3/size, and discount
    gamma = 1 - ds.
    """
    delta = 1.0 / size
    states = StateSpace(size=size, kind="grid", delta=delta, wrap=True)
    actions = ActionSpace(size=size)
    coords = np.arange(size) * delta
    a_vals = np.arange(size) * delta  # a_max = 1
    b = 0.2 * (np.sin(4.0 * np.pi * coords) + 2.0)
    mu_jam = 3.0 / size
    gamma = 1.0 - delta

    lo, frac = _grid_shift_table(size, delta, delta, delta)
    sample_next, exact_kernel, kernel_support = _grid_transition_fns(size, lo, frac)

    def reward(s, a, mu):
        bracket = b[s] + 0.5 * (1.0 - mu[s] / mu_jam) - a_vals[a]
        return -0.5 * bracket * bracket * delta

    def reward_matrix(mu):
        bracket = (b + 0.5 * (1.0 - mu / mu_jam))[:, None] - a_vals[None, :]
        return -0.5 * bracket * bracket * delta

    # worst case over mu(s) in [0, 1] and the action grid
    lo_term = 0.5 * (1.0 - 1.0 / mu_jam)
    worst = max(
        abs(b.max() + 0.5 - a_vals.min()),
        abs(b.min() + lo_term - a_vals.max()),
    )
    bound = 0.5 * worst * worst * delta

    return EnvironmentModel(
        name=f"ring-road-{size}",
        states=states,
        actions=actions,
        gamma=gamma,
        reward=reward,
        reward_matrix=reward_matrix,
        sample_next=sample_next,
        exact_kernel=exact_kernel,
        kernel_support=kernel_support,
        initial_state=np.full(size, 1.0 / size),
        reward_bound=bound,
        population_independent=True,
    )


def neighbor(mu: np.ndarray, s: int, radius: float) -> float:
    """Mass-weighted mean location of the cells within ``radius`` of state s.

    The window is truncated at the interval boundary (zero padding outside
    [0, 1]); a window with zero mass returns the location of s itself.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    n = mu.shape[0]
    delta = 1.0 / n
    half = int(np.floor(radius / delta + 1e-9))
    lo = max(0, s - half)
    hi = min(n - 1, s + half)
    window = mu[lo : hi + 1]
    mass = float(window.sum())
    if mass == 0.0:
        return s * delta
    coords = np.arange(lo, hi + 1) * delta
    return float(coords @ window) / mass


def flocking_env(
    size: int = 50,
    c: float = 0.5,
    radius: float = 0.1,
    s_det: float = 1.0,
) -> EnvironmentModel:
    """Flocking on [0, 1] with the destination wrapped back to the start.

    Same grid and shift dynamics as the ring road.  The cost charges the
    squared speed plus ``c`` times the squared distance between the
    destination ``s_det`` and the mean location of the neighbors within
    ``radius`` (population zero-padded beyond the boundary):

        r(s, a, mu) = -(a^2 + c (s_det - neighbor(mu, s))^2) ds
    """
    delta = 1.0 / size
    states = StateSpace(size=size, kind="grid", delta=delta, wrap=True)
    actions = ActionSpace(size=size)
    coords = np.arange(size) * delta
    a_vals = np.arange(size) * delta
    gamma = 1.0 - delta
    half = int(np.floor(radius / delta + 1e-9))
    win_lo = np.maximum(0, np.arange(size) - half)
    win_hi = np.minimum(size - 1, np.arange(size) + half)

    lo, frac = _grid_shift_table(size, delta, delta, delta)
    sample_next, exact_kernel, kernel_support = _grid_transition_fns(size, lo, frac)

    def _neighbor_all(mu):
        cs_mass = np.concatenate([[0.0], np.cumsum(mu)])
        cs_mom = np.concatenate([[0.0], np.cumsum(coords * mu)])
        mass = cs_mass[win_hi + 1] - cs_mass[win_lo]
        mom = cs_mom[win_hi + 1] - cs_mom[win_lo]
        out = coords.copy()
        nz = mass > 0.0
        out[nz] = mom[nz] / mass[nz]
        return out

    def reward(s, a, mu):
        nb = neighbor(mu, s, radius)
        gap = s_det - nb
        return -(a_vals[a] * a_vals[a] + c * gap * gap) * delta

    def reward_matrix(mu):
        gap = s_det - _neighbor_all(mu)
        return -(a_vals[None, :] ** 2 + c * (gap * gap)[:, None]) * delta

    worst_gap = max(abs(s_det), abs(s_det - coords.max()))
    bound = (a_vals.max() ** 2 + c * worst_gap * worst_gap) * delta

    return EnvironmentModel(
        name=f"flocking-{size}",
        states=states,
        actions=actions,
        gamma=gamma,
        reward=reward,
        reward_matrix=reward_matrix,
        sample_next=sample_next,
        exact_kernel=exact_kernel,
        kernel_support=kernel_support,
        initial_state=np.full(size, 1.0 / size),
        reward_bound=bound,
        population_independent=True,
    )


def default_network_path() -> Path:
    """Path of the bundled 24-node, 74-edge routing network."""
    return Path(importlib.resources.files("mfglearn.data") / "sioux_falls_24x74.txt")


def _parse_network_file(path) -> tuple[int, list]:
    n_nodes = n_edges = None
    edges = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise NetworkLoadError(f"cannot read network file {path}: {exc}") from exc
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "nodes" and len(parts) == 2:
            n_nodes = int(parts[1])
        elif parts[0] == "edges" and len(parts) == 2:
            n_edges = int(parts[1])
        elif len(parts) == 2:
            edges.append((int(parts[0]), int(parts[1])))
        else:
            raise NetworkLoadError(f"{path}:{line_no}: cannot parse {raw!r}")
    if n_nodes is None or n_edges is None:
        raise NetworkLoadError(f"{path}: missing 'nodes'/'edges' header lines")
    if len(edges) != n_edges:
        raise NetworkLoadError(
            f"{path}: header declares {n_edges} edges, found {len(edges)}"
        )
    for u, v in edges:
        if not (1 <= u <= n_nodes and 1 <= v <= n_nodes):
            raise NetworkLoadError(f"{path}: edge ({u}, {v}) has node out of range")
    return n_nodes, edges


def sioux_falls_env(path=None) -> EnvironmentModel:
    """Routing game on a 24-node, 74-edge network with a restart edge.

    States and actions are the 75 directed edges (the loader appends the
    restart edge from node 20 back to node 1).  From an edge, a vehicle may
    only select among the outgoing edges of that edge's head node, and the
    transition to the chosen edge is deterministic.  The cost is a quadratic
    congestion cost off the restart edge plus a terminal reward on it:

        r(s, a, mu) = -c1 * mu(s)^2 * 1{s != restart} + c2 * 1{s == restart}

    with c1 = 1e5, c2 = 10, discount gamma = 0.5, uniform initial state.
    """
    if path is None:
        path = default_network_path()
    n_nodes, edges = _parse_network_file(path)
    if n_nodes != 24 or len(edges) != 74:
        raise NetworkLoadError(
            f"{path}: expected 24 nodes / 74 edges, got {n_nodes} nodes / {len(edges)} edges"
        )

    start_node, dest_node = 1, 20
    edges = edges + [(dest_node, start_node)]  # restart edge, index 74
    n_e = len(edges)
    tails = np.array([u - 1 for u, v in edges])
    heads = np.array([v - 1 for u, v in edges])
    restart = n_e - 1

    out_edges = [np.nonzero(tails == node)[0] for node in range(n_nodes)]
    # reachability of the destination from the start along directed edges
    seen = {start_node - 1}
    frontier = [start_node - 1]
    while frontier:
        node = frontier.pop()
        for e in out_edges[node]:
            h = int(heads[e])
            if h not in seen:
                seen.add(h)
                frontier.append(h)
    if (dest_node - 1) not in seen:
        raise NetworkLoadError(f"{path}: destination node {dest_node} unreachable")

    feasible = tuple(out_edges[int(heads[e])] for e in range(n_e))
    for e, feas in enumerate(feasible):
        if len(feas) == 0:
            raise NetworkLoadError(
                f"{path}: edge {e + 1} ends at node {heads[e] + 1} with no outgoing edge"
            )

    states = StateSpace(size=n_e, kind="edges")
    actions = ActionSpace(size=n_e, feasible=feasible)
    c1, c2 = 1e5, 10.0

    def reward(s, a, mu):
        if s == restart:
            return c2
        return -c1 * mu[s] * mu[s]

    def reward_matrix(mu):
        per_state = -c1 * mu * mu
        per_state[restart] = c2
        return np.repeat(per_state[:, None], n_e, axis=1)

    idx_cache = np.broadcast_to(np.arange(n_e)[None, :, None], (n_e, n_e, 1))
    prob_cache = np.ones((n_e, n_e, 1))

    def sample_next(s, a, mu, rng):
        return a

    def exact_kernel(s, a, mu):
        row = np.zeros(n_e)
        row[a] = 1.0
        return row

    def kernel_support(mu):
        return idx_cache, prob_cache

    return EnvironmentModel(
        name="sioux-falls",
        states=states,
        actions=actions,
        gamma=0.5,
        reward=reward,
        reward_matrix=reward_matrix,
        sample_next=sample_next,
        exact_kernel=exact_kernel,
        kernel_support=kernel_support,
        initial_state=np.full(n_e, 1.0 / n_e),
        reward_bound=max(c1, c2),
        population_independent=True,
        extras={"edges": edges, "restart_index": restart},
    )


def toy_finite_env(
    n_states: int,
    n_actions: int,
    seed: int,
    eps: float = 0.1,
    gamma: float = 0.5,
    kernel_rank: Optional[int] = None,
    reward_pop_scale: float = 0.02,
) -> EnvironmentModel:
    """Small random finite game, fully reproducible from the seed.

    The kernel mixes a fixed random base kernel with the population,
    P(s'|s,a,mu) = (1-eps) P0(s'|s,a) + eps mu(s'), and the reward is
    linear in mu.  With eps = 0 the kernel is population independent.
    ``kernel_rank`` restricts the rows of P0 to the span of that many
    random base measures, which keeps every induced population inside a
    low-dimensional span.
    """
    if n_states > 6 or n_actions > 6:
        raise ValueError("toy environment is limited to at most 6 states/actions")
    if not (0.0 <= eps < 1.0):
        raise ValueError(f"eps must lie in [0,1), got {eps}")
    rng = np.random.default_rng(seed)

    if kernel_rank is not None:
        if not (1 <= kernel_rank <= n_states):
            raise ValueError(f"kernel_rank must lie in [1, {n_states}]")
        factors = rng.random((kernel_rank, n_states)) + 0.2
        factors /= factors.sum(axis=1, keepdims=True)
        weights = rng.random((n_states, n_actions, kernel_rank)) + 0.2
        weights /= weights.sum(axis=2, keepdims=True)
        p0 = np.einsum("sar,rn->san", weights, factors)
    else:
        factors = None
        p0 = rng.random((n_states, n_actions, n_states)) + 0.1
        p0 /= p0.sum(axis=2, keepdims=True)

    r_base = 0.05 * rng.random((n_states, n_actions))
    r_pop = reward_pop_scale * (2.0 * rng.random((n_states, n_actions, n_states)) - 1.0)

    states = StateSpace(size=n_states, kind="edges")
    actions = ActionSpace(size=n_actions)

    def reward(s, a, mu):
        return float(r_base[s, a] + r_pop[s, a] @ mu)

    def reward_matrix(mu):
        return r_base + r_pop @ mu

    def mixed_kernel(mu):
        return (1.0 - eps) * p0 + eps * mu[None, None, :]

    def exact_kernel(s, a, mu):
        return (1.0 - eps) * p0[s, a] + eps * mu

    def sample_next(s, a, mu, rng_):
        row = (1.0 - eps) * p0[s, a] + eps * mu
        cdf = np.cumsum(row)
        u = rng_.random()
        idx = int(np.searchsorted(cdf, u, side="right"))
        return min(idx, n_states - 1)

    idx_cache = np.broadcast_to(
        np.arange(n_states)[None, None, :], (n_states, n_actions, n_states)
    )

    def kernel_support(mu):
        return idx_cache, mixed_kernel(mu)

    bound = float(np.max(np.abs(r_base)[..., None] + np.abs(r_pop)))

    return EnvironmentModel(
        name=f"toy-{n_states}x{n_actions}-seed{seed}",
        states=states,
        actions=actions,
        gamma=gamma,
        reward=reward,
        reward_matrix=reward_matrix,
        sample_next=sample_next,
        exact_kernel=exact_kernel,
        kernel_support=kernel_support,
        initial_state=np.full(n_states, 1.0 / n_states),
        reward_bound=bound,
        population_independent=(eps == 0.0),
        extras={"base_kernel": p0, "kernel_factors": factors, "mix_eps": eps},
    )
