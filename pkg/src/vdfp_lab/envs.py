"""Toy continuous-control environments and delayed-reward wrappers."""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass
from typing import Callable, Deque, Dict, List, Optional

import numpy as np

from .config import DelayConfig
from .errors import UsageError
from .schemas import EnvSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class StepResult:
    next_state: np.ndarray
    reward: float
    done: bool
    base_reward: Optional[float] = None

    @property
    def true_reward(self) -> float:
        return self.reward if self.base_reward is None else self.base_reward


class ToyEnv(ABC):
    """Single-threaded episodic environment with clipped continuous actions."""

    spec: EnvSpec

    def __init__(self) -> None:
        self._low = np.asarray(self.spec.action_low, dtype=np.float64)
        self._high = np.asarray(self.spec.action_high, dtype=np.float64)
        self._t = 0
        self._done = True
        self._state = np.zeros(self.spec.state_dim, dtype=np.float64)
        self.clipped_actions = 0

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self._state = self._initial_state(rng)
        self._t = 0
        self._done = False
        return self._observe()

    def step(self, action: np.ndarray) -> StepResult:
        if self._done:
            raise UsageError("step() called on a finished episode; call reset() first")
        raw = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        clipped = np.clip(raw, self._low, self._high)
        if not np.array_equal(clipped, raw):
            self.clipped_actions += 1
            logger.debug("%s: clipped out-of-range action %s", self.spec.name, raw)
        reward = self._advance(clipped)
        self._t += 1
        self._done = self._t >= self.spec.max_episode_steps
        return StepResult(next_state=self._observe(), reward=float(reward), done=self._done)

    @property
    def elapsed_steps(self) -> int:
        return self._t

    def _observe(self) -> np.ndarray:
        return self._state.copy()

    @abstractmethod
    def _initial_state(self, rng: np.random.Generator) -> np.ndarray: ...

    @abstractmethod
    def _advance(self, action: np.ndarray) -> float:
        """Integrate one step in place and return the base reward."""


class PointMass2D(ToyEnv):
    """Force-driven point mass on a bounded plane; reward is negative distance to the goal."""

    dt = 0.1
    position_limit = 5.0
    velocity_limit = 2.0
    goal = np.zeros(2)
    spec = EnvSpec(
        name="point_mass_2d",
        state_dim=4,
        action_dim=2,
        action_low=(-1.0, -1.0),
        action_high=(1.0, 1.0),
        max_episode_steps=200,
        reward_low=-(5.0 * math.sqrt(2.0) + 0.02),
        reward_high=0.0,
        start_region="position uniform in [-2, 2]^2, velocity zero",
    )

    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        position = rng.uniform(-2.0, 2.0, size=2)
        return np.concatenate([position, np.zeros(2)])

    def _advance(self, action: np.ndarray) -> float:
        velocity = np.clip(
            self._state[2:] + action * self.dt, -self.velocity_limit, self.velocity_limit
        )
        position = np.clip(
            self._state[:2] + velocity * self.dt, -self.position_limit, self.position_limit
        )
        self._state = np.concatenate([position, velocity])
        distance = float(np.linalg.norm(position - self.goal))
        return -distance - 0.01 * float(action @ action)


class DoubleIntegrator1D(ToyEnv):
    """Position/velocity pair driven by a bounded acceleration with quadratic cost."""

    dt = 0.1
    position_limit = 5.0
    velocity_limit = 3.0
    spec = EnvSpec(
        name="double_integrator_1d",
        state_dim=2,
        action_dim=1,
        action_low=(-1.0,),
        action_high=(1.0,),
        max_episode_steps=100,
        reward_low=-(25.0 + 0.1 * 9.0 + 0.01),
        reward_high=0.0,
        start_region="position uniform in [-2, 2], velocity zero",
    )

    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.uniform(-2.0, 2.0), 0.0])

    def _advance(self, action: np.ndarray) -> float:
        x, v = self._state
        u = float(action[0])
        x = float(np.clip(x + v * self.dt, -self.position_limit, self.position_limit))
        v = float(np.clip(v + u * self.dt, -self.velocity_limit, self.velocity_limit))
        self._state = np.array([x, v])
        return -(x * x + 0.1 * v * v + 0.01 * u * u)


class PendulumStabilize(ToyEnv):
    """Torque-limited pendulum with the standard swing-up cost."""

    dt = 0.05
    gravity = 10.0
    mass = 1.0
    length = 1.0
    max_speed = 8.0
    spec = EnvSpec(
        name="pendulum_stabilize",
        state_dim=3,
        action_dim=1,
        action_low=(-2.0,),
        action_high=(2.0,),
        max_episode_steps=200,
        reward_low=-(math.pi**2 + 0.1 * 8.0**2 + 0.001 * 2.0**2),
        reward_high=0.0,
        start_region="angle uniform in [-pi, pi], angular velocity uniform in [-1, 1]",
    )

    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0)])

    def _observe(self) -> np.ndarray:
        theta, theta_dot = self._state
        return np.array([math.cos(theta), math.sin(theta), theta_dot])

    def _advance(self, action: np.ndarray) -> float:
        theta, theta_dot = self._state
        u = float(action[0])
        angle = ((theta + math.pi) % (2 * math.pi)) - math.pi
        cost = angle**2 + 0.1 * theta_dot**2 + 0.001 * u**2
        theta_dot = theta_dot + (
            3 * self.gravity / (2 * self.length) * math.sin(theta)
            + 3.0 / (self.mass * self.length**2) * u
        ) * self.dt
        theta_dot = float(np.clip(theta_dot, -self.max_speed, self.max_speed))
        self._state = np.array([theta + theta_dot * self.dt, theta_dot])
        return -cost


ENV_REGISTRY: Dict[str, Callable[[], ToyEnv]] = {
    PointMass2D.spec.name: PointMass2D,
    DoubleIntegrator1D.spec.name: DoubleIntegrator1D,
    PendulumStabilize.spec.name: PendulumStabilize,
}


def make_env(name: str) -> ToyEnv:
    try:
        return ENV_REGISTRY[name]()
    except KeyError as exc:
        choices = ", ".join(sorted(ENV_REGISTRY))
        raise UsageError(f"Unknown environment '{name}'. Choose from: {choices}") from exc


def env_specs() -> List[EnvSpec]:
    return [factory.spec for factory in ENV_REGISTRY.values()]


class DelayedRewardWrapper:
    """Re-times the base reward stream without changing its episode total.

    ``accumulate`` emits the sum of the last ``d`` base rewards every ``d``
    steps and any remainder at the terminal step. ``shift`` emits the reward
    of step ``t - d`` at step ``t`` and flushes everything still pending at
    the terminal step. ``none`` passes rewards through.
    """

    def __init__(self, env: ToyEnv, cfg: DelayConfig) -> None:
        self.env = env
        self.cfg = cfg
        self._pending = 0.0
        self._count = 0
        self._queue: Deque[float] = deque()

    @property
    def spec(self) -> EnvSpec:
        return self.env.spec

    @property
    def clipped_actions(self) -> int:
        return self.env.clipped_actions

    def reset(self, seed: int) -> np.ndarray:
        self._pending = 0.0
        self._count = 0
        self._queue.clear()
        return self.env.reset(seed)

    def step(self, action: np.ndarray) -> StepResult:
        result = self.env.step(action)
        base = result.reward
        if self.cfg.mode == "accumulate":
            emitted = self._accumulate(base, result.done)
        elif self.cfg.mode == "shift":
            emitted = self._shift(base, result.done)
        else:
            emitted = base
        return StepResult(
            next_state=result.next_state, reward=emitted, done=result.done, base_reward=base
        )

    def _accumulate(self, base: float, done: bool) -> float:
        self._pending += base
        self._count += 1
        if self._count == self.cfg.d or done:
            emitted, self._pending, self._count = self._pending, 0.0, 0
            return emitted
        return 0.0

    def _shift(self, base: float, done: bool) -> float:
        self._queue.append(base)
        if done:
            emitted = 0.0
            while self._queue:
                emitted += self._queue.popleft()
            return emitted
        if len(self._queue) > self.cfg.d:
            return self._queue.popleft()
        return 0.0


Environment = ToyEnv | DelayedRewardWrapper


def wrap_delay(env: ToyEnv, cfg: DelayConfig) -> DelayedRewardWrapper:
    return DelayedRewardWrapper(env, cfg)
