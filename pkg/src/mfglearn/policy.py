"""Policy operators mapping Q-values to per-state action distributions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import ConfigError


@dataclass(frozen=True)
class PolicyOperator:
    """Softmax (with inverse temperature) or argmax policy operator."""

    kind: str  # "softmax" | "argmax"
    inverse_temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in ("softmax", "argmax"):
            raise ConfigError(f"unknown policy operator {self.kind!r}")
        if self.kind == "softmax" and self.inverse_temperature <= 0:
            raise ConfigError("softmax inverse temperature must be positive")


def softmax_operator(inverse_temperature: float) -> PolicyOperator:
    return PolicyOperator(kind="softmax", inverse_temperature=inverse_temperature)


def argmax_operator() -> PolicyOperator:
    return PolicyOperator(kind="argmax")


def policy_row(op: PolicyOperator, q_row: np.ndarray) -> np.ndarray:
    """Distribution over the entries of one Q row (all entries feasible).

    Softmax subtracts the row max before exponentiating so that huge inverse
    temperatures (e.g. 1e9) cannot overflow.  Argmax puts probability one on
    the lowest-index maximizer.
    """
    if op.kind == "softmax":
        z = np.exp(op.inverse_temperature * (q_row - q_row.max()))
        return z / z.sum()
    out = np.zeros(q_row.shape[0])
    out[int(np.argmax(q_row))] = 1.0
    return out


def apply_policy(
    op: PolicyOperator,
    q_values: Callable[[int, int], float],
    s: int,
    n_actions: int,
    mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Action distribution at state s, zero on infeasible actions.

    ``mask`` is the increasing array of feasible action indices; ``None``
    means every action is feasible.
    """
    if mask is None:
        q_row = np.array([q_values(s, a) for a in range(n_actions)])
        return policy_row(op, q_row)
    mask = np.asarray(mask)
    if mask.size == 0:
        raise ValueError(f"state {s} has an empty feasibility mask")
    q_feas = np.array([q_values(s, int(a)) for a in mask])
    dist = np.zeros(n_actions)
    dist[mask] = policy_row(op, q_feas)
    return dist


def sample_action(dist: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF sample over action indices in increasing order."""
    cdf = np.cumsum(dist)
    u = rng.random()
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= dist.shape[0]:
        idx = dist.shape[0] - 1
    if dist[idx] == 0.0:  # guard against u landing past the float total mass
        idx = int(np.nonzero(dist)[0][-1])
    return idx


def policy_matrix(
    op: PolicyOperator,
    q_matrix: np.ndarray,
    feasible: Optional[tuple] = None,
) -> np.ndarray:
    """Full (S, A) policy table from a Q table, respecting feasibility masks."""
    n_s, n_a = q_matrix.shape
    pi = np.zeros((n_s, n_a))
    for s in range(n_s):
        if feasible is None:
            pi[s] = policy_row(op, q_matrix[s])
        else:
            feas = feasible[s]
            pi[s, feas] = policy_row(op, q_matrix[s, feas])
    return pi
