"""Brute-force reference computations used to check the learned components.

Everything here is plain numpy and deliberately independent of the rest of
the package: no imports from ``vdfp_lab``. Each function favours the most
literal computation over speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

MAX_STATES = 5
MAX_ACTIONS = 5

FeatureMap = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class FiniteMDP:
    """Tabular MDP with deterministic rewards ``R[s, a]`` and a fixed horizon."""

    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float
    horizon: int

    def __post_init__(self) -> None:
        p = np.asarray(self.transitions, dtype=np.float64)
        r = np.asarray(self.rewards, dtype=np.float64)
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "rewards", r)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError("transitions must have shape (S, A, S)")
        if r.shape != p.shape[:2]:
            raise ValueError("rewards must have shape (S, A)")
        if p.shape[0] > MAX_STATES or p.shape[1] > MAX_ACTIONS:
            raise ValueError(f"at most {MAX_STATES} states and {MAX_ACTIONS} actions")
        if (p < 0).any() or np.abs(p.sum(axis=-1) - 1.0).max() > 1e-12:
            raise ValueError("transition rows must be probability vectors")
        if not 0.0 <= self.gamma <= 1.0 or self.horizon < 1:
            raise ValueError("need gamma in [0, 1] and horizon >= 1")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


def backward_induction_q(mdp: FiniteMDP, policy: np.ndarray) -> np.ndarray:
    """Exact finite-horizon ``Q_t`` for ``t = 0..H-1``, shape ``(H, S, A)``."""

    q = np.zeros((mdp.horizon + 1, mdp.n_states, mdp.n_actions))
    for t in range(mdp.horizon - 1, -1, -1):
        v_next = (policy * q[t + 1]).sum(axis=1)
        q[t] = mdp.rewards + mdp.gamma * mdp.transitions @ v_next
    return q[:-1]


def analytic_q(mdp: FiniteMDP, policy: np.ndarray) -> np.ndarray:
    """Infinite-horizon ``Q`` by solving ``(I - gamma P_pi) q = R``; shape ``(S, A)``."""

    pairs = mdp.n_states * mdp.n_actions
    p_pi = _pair_transition_matrix(mdp, policy)
    q = np.linalg.solve(np.eye(pairs) - mdp.gamma * p_pi, mdp.rewards.reshape(pairs))
    return q.reshape(mdp.n_states, mdp.n_actions)


def _pair_transition_matrix(mdp: FiniteMDP, policy: np.ndarray) -> np.ndarray:
    s, a = mdp.n_states, mdp.n_actions
    matrix = np.zeros((s * a, s * a))
    for state in range(s):
        for action in range(a):
            for nxt in range(s):
                for nxt_action in range(a):
                    matrix[state * a + action, nxt * a + nxt_action] = (
                        mdp.transitions[state, action, nxt] * policy[nxt, nxt_action]
                    )
    return matrix


def rollout(
    mdp: FiniteMDP,
    policy: np.ndarray,
    state: int,
    action: int,
    n_rollouts: int,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample ``n_rollouts`` trajectories of length H from a fixed first pair.

    Returns ``(states, actions, rewards)``, each of shape ``(n, H)``.
    """

    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    n, horizon = n_rollouts, mdp.horizon
    states = np.zeros((n, horizon), dtype=np.int64)
    actions = np.zeros((n, horizon), dtype=np.int64)
    rewards = np.zeros((n, horizon))
    s = np.full(n, state)
    a = np.full(n, action)
    for t in range(horizon):
        states[:, t], actions[:, t] = s, a
        rewards[:, t] = mdp.rewards[s, a]
        cumulative = np.cumsum(mdp.transitions[s, a], axis=1)
        s = np.minimum((rng.random((n, 1)) > cumulative).sum(axis=1), mdp.n_states - 1)
        policy_cdf = np.cumsum(policy[s], axis=1)
        a = np.minimum((rng.random((n, 1)) > policy_cdf).sum(axis=1), mdp.n_actions - 1)
    return states, actions, rewards


def mc_q_estimate(
    mdp: FiniteMDP,
    policy: np.ndarray,
    state: int,
    action: int,
    n_rollouts: int,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, float]:
    """Monte-Carlo mean and standard error of the discounted return."""

    rng = rng or np.random.default_rng(0)
    _, _, rewards = rollout(mdp, policy, state, action, n_rollouts, rng)
    discounts = mdp.gamma ** np.arange(mdp.horizon)
    returns = rewards @ discounts
    return float(returns.mean()), _stderr(returns)


def _stderr(samples: np.ndarray) -> float:
    if len(samples) < 2:
        return 0.0
    return float(samples.std(ddof=1) / math.sqrt(len(samples)))


def occupancy_feature_map(n_states: int, n_actions: int, gamma: float) -> FeatureMap:
    """Discounted one-hot occupancy of (state, action) pairs along a trajectory."""

    def feature(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        n, horizon = states.shape
        out = np.zeros((n, n_states * n_actions))
        for t in range(horizon):
            out[np.arange(n), states[:, t] * n_actions + actions[:, t]] += gamma**t
        return out

    return feature


def mc_repr_expectation(
    mdp: FiniteMDP,
    policy: np.ndarray,
    feature_map: FeatureMap,
    state: int,
    action: int,
    n_rollouts: int,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo mean and per-coordinate standard error of ``f(tau)``."""

    rng = rng or np.random.default_rng(0)
    states, actions, _ = rollout(mdp, policy, state, action, n_rollouts, rng)
    features = feature_map(states, actions)
    if n_rollouts < 2:
        return features.mean(axis=0), np.zeros(features.shape[1])
    return features.mean(axis=0), features.std(axis=0, ddof=1) / math.sqrt(n_rollouts)


def analytic_discounted_occupancy(
    mdp: FiniteMDP, policy: np.ndarray, horizon: Optional[float] = None
) -> np.ndarray:
    """Rows: expected discounted (state, action) occupancy from each starting pair.

    ``horizon=None`` uses the MDP's horizon; ``math.inf`` solves the linear system.
    """

    p_pi = _pair_transition_matrix(mdp, policy)
    pairs = p_pi.shape[0]
    horizon = mdp.horizon if horizon is None else horizon
    if math.isinf(horizon):
        return np.linalg.inv(np.eye(pairs) - mdp.gamma * p_pi)
    total = np.zeros((pairs, pairs))
    power = np.eye(pairs)
    for t in range(int(horizon)):
        total += mdp.gamma**t * power
        power = power @ p_pi
    return total


def analytic_state_occupancy(state_transitions: np.ndarray, gamma: float) -> np.ndarray:
    """Successor matrix ``(I - gamma P)^-1`` of a state chain."""

    n = state_transitions.shape[0]
    return np.linalg.solve(np.eye(n) - gamma * state_transitions, np.eye(n))


def jensen_gap(
    u: Callable[[np.ndarray], np.ndarray], features: np.ndarray
) -> Tuple[float, float]:
    """``mean(u(m_i)) - u(mean(m_i))`` and the standard error of ``mean(u(m_i))``."""

    values = np.asarray(u(features), dtype=np.float64).reshape(-1)
    at_mean = float(np.asarray(u(features.mean(axis=0, keepdims=True))).reshape(-1)[0])
    return float(values.mean()) - at_mean, _stderr(values)


def finite_difference_gradient(
    objective: Callable[[np.ndarray], float], point: np.ndarray, step: float = 1e-6
) -> np.ndarray:
    """Central differences, one coordinate at a time."""

    if step <= 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=np.float64)
    grad = np.zeros_like(point)
    for i in range(point.size):
        forward, backward = point.copy(), point.copy()
        forward.flat[i] += step
        backward.flat[i] -= step
        grad.flat[i] = (objective(forward) - objective(backward)) / (2.0 * step)
    return grad


def naive_conv_features(
    matrix: np.ndarray,
    length: int,
    filters: Sequence[Tuple[np.ndarray, np.ndarray]],
) -> np.ndarray:
    """Sliding-window ReLU features max-pooled over windows inside ``length`` rows.

    ``filters`` holds ``(W, b)`` per height with ``W`` of shape ``(n, h, row_dim)``.
    A height with no complete window pools to 0.
    """

    features: List[float] = []
    for weights, bias in filters:
        count, height, _ = weights.shape
        for k in range(count):
            best = 0.0
            for start in range(0, length - height + 1):
                window = matrix[start : start + height]
                value = max(0.0, float((weights[k] * window).sum() + bias[k]))
                best = max(best, value)
            features.append(best)
    return np.array(features)


def reversed_return(rewards: Sequence[float], gamma: float) -> float:
    total = 0.0
    for reward in reversed(list(rewards)):
        total = reward + gamma * total
    return total


def recursive_gae(
    rewards: Sequence[float],
    values: Sequence[float],
    gamma: float,
    lam: float,
    last_value: float = 0.0,
) -> np.ndarray:
    """Advantages as the explicit forward sum ``sum_l (gamma lam)**l delta_{t+l}``."""

    horizon = len(rewards)
    extended = list(values) + [last_value]
    deltas = [rewards[t] + gamma * extended[t + 1] - extended[t] for t in range(horizon)]
    out = np.zeros(horizon)
    for t in range(horizon):
        out[t] = sum((gamma * lam) ** k * deltas[t + k] for k in range(horizon - t))
    return out


def point_mass_pd_action(
    state: np.ndarray, kp: float = 1.0, kd: float = 2.0, limit: float = 1.0
) -> np.ndarray:
    """Proportional-derivative force steering the 2-D point mass to the origin."""

    position, velocity = np.asarray(state[:2]), np.asarray(state[2:4])
    return np.clip(-kp * position - kd * velocity, -limit, limit)
