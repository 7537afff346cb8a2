"""Shared actor networks, parameter registry and the episodic training loop."""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, ClassVar, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn
from torch.distributions import Normal

from ..config import ExperimentConfig
from ..envs import Environment, StepResult
from ..schemas import LogRow
from ..seeding import RandomStreams, seeded_init
from ..trajstore import Transition

logger = logging.getLogger(__name__)

EpisodeCallback = Callable[[LogRow], None]


def mlp(in_dim: int, hidden: Sequence[int], out_dim: int) -> nn.Sequential:
    layers: List[nn.Module] = []
    width = in_dim
    for size in hidden:
        layers += [nn.Linear(width, size), nn.ReLU()]
        width = size
    layers.append(nn.Linear(width, out_dim))
    return nn.Sequential(*layers)


class Actor(nn.Module):
    """Deterministic policy: two ReLU layers, tanh output scaled to the action box."""

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        low: Sequence[float],
        high: Sequence[float],
        hidden: Tuple[int, int] = (200, 100),
    ) -> None:
        super().__init__()
        self.hidden = tuple(hidden)
        self.body = mlp(state_dim, hidden, action_dim)
        low_t = torch.as_tensor(low, dtype=torch.float32)
        high_t = torch.as_tensor(high, dtype=torch.float32)
        self.register_buffer("center", (high_t + low_t) / 2.0)
        self.register_buffer("half_range", (high_t - low_t) / 2.0)

    def forward(self, states: torch.Tensor) -> torch.Tensor:
        return self.center + self.half_range * torch.tanh(self.body(states))


class GaussianActor(Actor):
    """Stochastic policy with the actor's mean and a state-independent log std."""

    def __init__(self, *args: Any, initial_log_std: float = -0.5, **kwargs: Any) -> None:
        super().__init__(*args, **kwargs)
        action_dim = self.center.shape[0]
        self.log_std = nn.Parameter(torch.full((action_dim,), initial_log_std))

    def distribution(self, states: torch.Tensor) -> Normal:
        return Normal(self(states), torch.exp(self.log_std).expand(states.shape[0], -1))

    def log_prob(self, states: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        return self.distribution(states).log_prob(actions).sum(dim=-1)

    @torch.no_grad()
    def sample(
        self, state: torch.Tensor, generator: Optional[torch.Generator] = None
    ) -> torch.Tensor:
        mean = self(state)
        noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        return mean + torch.exp(self.log_std) * noise


@torch.no_grad()
def soft_update(target: nn.Module, online: nn.Module, tau: float) -> None:
    """Polyak step ``target <- tau * online + (1 - tau) * target``."""

    for t_param, o_param in zip(target.parameters(), online.parameters()):
        t_param.mul_(1.0 - tau).add_(o_param, alpha=tau)


@dataclass
class ModelBundle:
    """Named parameter sets, their optimizers and update-schedule counters."""

    modules: Dict[str, nn.Module]
    optimizers: Dict[str, torch.optim.Optimizer] = field(default_factory=dict)
    counters: Dict[str, int] = field(default_factory=dict)

    def names(self) -> List[str]:
        return sorted(self.modules)

    def parameter_shapes(self) -> Dict[str, Dict[str, Tuple[int, ...]]]:
        return {
            name: {key: tuple(value.shape) for key, value in module.state_dict().items()}
            for name, module in self.modules.items()
        }

    def state_dict(self) -> Dict[str, Any]:
        return {
            "modules": {name: module.state_dict() for name, module in self.modules.items()},
            "optimizers": {name: opt.state_dict() for name, opt in self.optimizers.items()},
            "counters": dict(self.counters),
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        for name, module in self.modules.items():
            module.load_state_dict(state["modules"][name])
        for name, optimizer in self.optimizers.items():
            optimizer.load_state_dict(state["optimizers"][name])
        self.counters.update(state["counters"])


class EpisodeStats:
    """Collects per-update losses during one episode for the log row."""

    def __init__(self) -> None:
        self._values: Dict[str, List[float]] = defaultdict(list)

    def record(self, **values: float) -> None:
        for key, value in values.items():
            self._values[key].append(float(value))

    def mean(self, key: str) -> float:
        values = self._values.get(key)
        return float(np.mean(values)) if values else math.nan


def as_tensor(values: Any) -> torch.Tensor:
    return torch.as_tensor(np.asarray(values), dtype=torch.float32)


class Agent(ABC):
    """One learner bound to one environment, trained episode by episode.

    Subclasses build their networks in :meth:`build` (run under the ``init``
    stream), pick actions in :meth:`select_action` and update in
    :meth:`after_step` / :meth:`end_episode`. Rewards seen by the learner are
    the emitted (possibly delayed) ones; log rows carry the base return.
    """

    name: ClassVar[str]
    critic_kind: ClassVar[str]
    uses_target_networks: ClassVar[bool] = False

    def __init__(
        self,
        env: Environment,
        config: ExperimentConfig,
        streams: Optional[RandomStreams] = None,
    ) -> None:
        self.env = env
        self.config = config
        self.training = config.training
        self.spec = env.spec
        self.streams = streams or RandomStreams(config.seed)
        self.low = np.asarray(self.spec.action_low, dtype=np.float64)
        self.high = np.asarray(self.spec.action_high, dtype=np.float64)
        self.global_step = 0
        self.episode_index = 0
        with seeded_init(self.streams):
            self.bundle = self.build()
        # F.dropout draws from the global generator
        torch.manual_seed(self.streams.torch_seed("dropout"))

    @abstractmethod
    def build(self) -> ModelBundle:
        """Create networks and optimizers; return them as a :class:`ModelBundle`."""

    @abstractmethod
    def after_step(
        self, state: np.ndarray, action: np.ndarray, result: StepResult, stats: EpisodeStats
    ) -> None: ...

    @abstractmethod
    def end_episode(self, transitions: List[Transition], stats: EpisodeStats) -> None: ...

    @property
    def actor(self) -> Actor:
        return self.bundle.modules["actor"]  # type: ignore[return-value]

    @property
    def actor_lr(self) -> float:
        return self.training.resolved_actor_lr(self.name)

    def act(self, state: np.ndarray, explore: bool) -> np.ndarray:
        """Actor output plus ``N(0, sigma * half_range)`` noise when exploring, clipped."""

        with torch.no_grad():
            action = self.actor(as_tensor(state).unsqueeze(0)).squeeze(0).double().numpy()
        if explore:
            scale = self.training.exploration_sigma * (self.high - self.low) / 2.0
            noise = self.streams.numpy("exploration").standard_normal(action.shape)
            action = action + noise * scale
        return np.clip(action, self.low, self.high)

    def random_action(self) -> np.ndarray:
        return self.streams.numpy("exploration").uniform(self.low, self.high)

    def select_action(self, state: np.ndarray) -> np.ndarray:
        return self.act(state, explore=True)

    def describe(self) -> Dict[str, Any]:
        actor = self.actor
        return {
            "agent": self.name,
            "actor": {
                "class": type(actor).__name__,
                "hidden": list(actor.hidden),
                "output": "tanh scaled to action bounds",
            },
            "exploration_sigma": self.training.exploration_sigma,
            "critic": self.critic_kind,
            "target_networks": self.uses_target_networks,
            "parameter_sets": self.bundle.names(),
        }

    def train(self, total_steps: int, on_episode: Optional[EpisodeCallback] = None) -> List[LogRow]:
        """Run until ``global_step`` reaches ``total_steps``.

        An episode still running at the budget is dropped: it is neither
        stored nor logged.
        """

        rows: List[LogRow] = []
        env_rng = self.streams.numpy("env")
        while self.global_step < total_steps:
            state = self.env.reset(int(env_rng.integers(0, 2**31 - 1)))
            transitions: List[Transition] = []
            stats = EpisodeStats()
            episode_return = 0.0
            done = False
            while not done:
                if self.global_step >= total_steps:
                    logger.debug("dropping unfinished episode after %d steps", len(transitions))
                    return rows
                action = self.select_action(state)
                result = self.env.step(action)
                self.global_step += 1
                transitions.append(Transition(state=state, action=action, reward=result.reward))
                episode_return += result.true_reward
                self.after_step(state, action, result, stats)
                state, done = result.next_state, result.done
            self.end_episode(transitions, stats)
            row = LogRow(
                global_step=self.global_step,
                episode_index=self.episode_index,
                episode_return=episode_return,
                recon_loss=stats.mean("recon_loss"),
                kl_loss=stats.mean("kl_loss"),
                return_loss=stats.mean("return_loss"),
                actor_objective=stats.mean("actor_objective"),
            )
            self.episode_index += 1
            rows.append(row)
            logger.info(
                "%s episode %d step %d return %.3f",
                self.name,
                row.episode_index,
                row.global_step,
                row.episode_return,
            )
            if on_episode is not None:
                on_episode(row)
        return rows

    def extra_state(self) -> Dict[str, Any]:
        return {}

    def load_extra_state(self, state: Dict[str, Any]) -> None:
        return None

    def state_dict(self) -> Dict[str, Any]:
        self.bundle.counters.update(
            global_step=self.global_step, episode_index=self.episode_index
        )
        return {
            "bundle": self.bundle.state_dict(),
            "streams": self.streams.state_dict(),
            "extra": self.extra_state(),
            "global_rng": torch.get_rng_state(),
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        self.bundle.load_state_dict(state["bundle"])
        self.streams.load_state_dict(state["streams"])
        self.load_extra_state(state["extra"])
        torch.set_rng_state(state["global_rng"])
        self.global_step = int(self.bundle.counters.get("global_step", 0))
        self.episode_index = int(self.bundle.counters.get("episode_index", 0))
