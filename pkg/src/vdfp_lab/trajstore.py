"""Episode storage, suffix-segment sampling and encoder-ready padding."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Deque, Dict, Iterable, List, Sequence, Tuple

import numpy as np
import torch

from .config import aggregation_factor

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float


@dataclass(frozen=True, slots=True)
class Segment:
    """A suffix window of one stored episode, anchored at its first pair."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    episode: int = -1
    start: int = 0
    terminal: bool = True

    def __post_init__(self) -> None:
        if not (len(self.states) == len(self.actions) == len(self.rewards) >= 1):
            raise ValueError("segment needs matching, non-empty states/actions/rewards")

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def pairs(self) -> np.ndarray:
        """Rows ``x_t = s_t (+) a_t``."""
        return np.concatenate([self.states, self.actions], axis=1)

    @property
    def anchor(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.states[0], self.actions[0]


@dataclass(slots=True)
class Episode:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    uid: int

    def __len__(self) -> int:
        return len(self.rewards)


def discounted_return(segment: Segment | Sequence[float] | np.ndarray, gamma: float) -> float:
    """Sum of ``gamma**i * r_i`` over the segment's rewards."""

    rewards = np.asarray(segment.rewards if isinstance(segment, Segment) else segment, float)
    weights = np.power(float(gamma), np.arange(len(rewards)))
    return float(weights @ rewards)


def pad_to_matrix(
    segment: Segment, max_len: int, agg_factor: int = 1
) -> Tuple[np.ndarray, np.ndarray]:
    """Zero-pad a segment's rows to exactly ``max_len`` and return ``(matrix, mask)``."""

    if agg_factor != aggregation_factor(max_len):
        raise ValueError(
            f"agg_factor {agg_factor} inconsistent with max_len {max_len} "
            f"(expected {aggregation_factor(max_len)})"
        )
    if len(segment) > max_len:
        raise ValueError(f"segment of length {len(segment)} exceeds max_len {max_len}; truncate it")
    pairs = segment.pairs
    matrix = np.zeros((max_len, pairs.shape[1]), dtype=np.float64)
    matrix[: len(segment)] = pairs
    mask = np.zeros(max_len, dtype=np.float64)
    mask[: len(segment)] = 1.0
    return matrix, mask


@dataclass(slots=True)
class SegmentBatch:
    """Collated segments as tensors: padded rows, mask, padded rewards and anchors."""

    features: torch.Tensor
    mask: torch.Tensor
    rewards: torch.Tensor
    states: torch.Tensor
    actions: torch.Tensor
    lengths: torch.Tensor

    def __len__(self) -> int:
        return self.features.shape[0]

    def returns(self, gamma: float) -> torch.Tensor:
        steps = torch.arange(self.rewards.shape[1], dtype=self.rewards.dtype)
        weights = torch.pow(torch.as_tensor(float(gamma), dtype=self.rewards.dtype), steps)
        return (self.rewards * weights).sum(dim=1)

    def to(self, dtype: torch.dtype) -> "SegmentBatch":
        return SegmentBatch(
            features=self.features.to(dtype),
            mask=self.mask.to(dtype),
            rewards=self.rewards.to(dtype),
            states=self.states.to(dtype),
            actions=self.actions.to(dtype),
            lengths=self.lengths,
        )


def collate(
    segments: Sequence[Segment], max_len: int, agg_factor: int = 1, dtype=torch.float32
) -> SegmentBatch:
    matrices, masks, rewards = [], [], []
    for segment in segments:
        matrix, mask = pad_to_matrix(segment, max_len, agg_factor)
        padded_rewards = np.zeros(max_len)
        padded_rewards[: len(segment)] = segment.rewards
        matrices.append(matrix)
        masks.append(mask)
        rewards.append(padded_rewards)
    return SegmentBatch(
        features=torch.as_tensor(np.stack(matrices), dtype=dtype),
        mask=torch.as_tensor(np.stack(masks), dtype=dtype),
        rewards=torch.as_tensor(np.stack(rewards), dtype=dtype),
        states=torch.as_tensor(np.stack([s.states[0] for s in segments]), dtype=dtype),
        actions=torch.as_tensor(np.stack([s.actions[0] for s in segments]), dtype=dtype),
        lengths=torch.as_tensor([len(s) for s in segments], dtype=torch.long),
    )


@dataclass(slots=True)
class TransitionBatch:
    states: torch.Tensor
    actions: torch.Tensor
    rewards: torch.Tensor
    next_states: torch.Tensor
    dones: torch.Tensor


@dataclass
class EpisodeReplayBuffer:
    """Bounded FIFO of complete episodes; every stored step is a sampleable anchor.

    Anchors are drawn uniformly over stored transitions, not over episodes.
    Single writer: callers synchronise externally if sampling from another thread.
    """

    capacity_steps: int = 100_000
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    _episodes: Deque[Episode] = field(default_factory=deque, init=False, repr=False)
    _steps: int = field(default=0, init=False)
    _next_uid: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        if self.capacity_steps < 1:
            raise ValueError("capacity_steps must be positive")

    def __len__(self) -> int:
        return self._steps

    @property
    def num_episodes(self) -> int:
        return len(self._episodes)

    @property
    def episodes(self) -> List[Episode]:
        return list(self._episodes)

    def store_episode(self, transitions: Sequence[Transition]) -> None:
        if not transitions:
            raise ValueError("cannot store an empty episode")
        if len(transitions) > self.capacity_steps:
            raise ValueError(
                f"episode of {len(transitions)} steps exceeds capacity {self.capacity_steps}"
            )
        episode = Episode(
            states=np.stack([np.asarray(t.state, dtype=np.float64) for t in transitions]),
            actions=np.stack([np.asarray(t.action, dtype=np.float64) for t in transitions]),
            rewards=np.array([float(t.reward) for t in transitions]),
            uid=self._next_uid,
        )
        self._next_uid += 1
        self._episodes.append(episode)
        self._steps += len(episode)
        while self._steps > self.capacity_steps:
            evicted = self._episodes.popleft()
            self._steps -= len(evicted)
            logger.debug("evicted episode %d (%d steps)", evicted.uid, len(evicted))

    def clear(self) -> None:
        self._episodes.clear()
        self._steps = 0

    def anchors(self) -> List[Tuple[int, int]]:
        return [(ep.uid, t) for ep in self._episodes for t in range(len(ep))]

    def segment_at(self, episode_index: int, start: int, max_len: int) -> Segment:
        episode = self._episodes[episode_index]
        stop = min(start + max_len, len(episode))
        return Segment(
            states=episode.states[start:stop],
            actions=episode.actions[start:stop],
            rewards=episode.rewards[start:stop],
            episode=episode.uid,
            start=start,
            terminal=stop == len(episode),
        )

    def _draw_anchors(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        if n <= 0:
            raise ValueError(f"batch size must be positive, got {n}")
        if not self._episodes:
            raise ValueError("cannot sample from an empty buffer")
        ends = np.cumsum([len(ep) for ep in self._episodes])
        flat = self.rng.integers(0, self._steps, size=n)
        episode_idx = np.searchsorted(ends, flat, side="right")
        starts = flat - np.concatenate([[0], ends[:-1]])[episode_idx]
        return episode_idx, starts

    def sample_segments(self, n: int, max_len: int) -> List[Segment]:
        if max_len < 1:
            raise ValueError("max_len must be positive")
        episode_idx, starts = self._draw_anchors(n)
        return [self.segment_at(int(e), int(t), max_len) for e, t in zip(episode_idx, starts)]

    def sample_batch(
        self, n: int, max_len: int, agg_factor: int = 1, dtype=torch.float32
    ) -> SegmentBatch:
        return collate(self.sample_segments(n, max_len), max_len, agg_factor, dtype=dtype)

    def sample_transitions(self, n: int, dtype=torch.float32) -> TransitionBatch:
        """One-step transitions; the last step of every episode is terminal."""

        episode_idx, starts = self._draw_anchors(n)
        states, actions, rewards, next_states, dones = [], [], [], [], []
        for e, t in zip(episode_idx, starts):
            episode = self._episodes[int(e)]
            last = t == len(episode) - 1
            states.append(episode.states[t])
            actions.append(episode.actions[t])
            rewards.append(episode.rewards[t])
            next_states.append(episode.states[t] if last else episode.states[t + 1])
            dones.append(1.0 if last else 0.0)

        def _tensor(values: Iterable[Any]) -> torch.Tensor:
            return torch.as_tensor(np.asarray(list(values)), dtype=dtype)

        return TransitionBatch(
            states=_tensor(states),
            actions=_tensor(actions),
            rewards=_tensor(rewards),
            next_states=_tensor(next_states),
            dones=_tensor(dones),
        )

    def state_dict(self) -> Dict[str, Any]:
        return {
            "capacity_steps": self.capacity_steps,
            "next_uid": self._next_uid,
            "rng": self.rng.bit_generator.state,
            "episodes": [
                {"states": ep.states, "actions": ep.actions, "rewards": ep.rewards, "uid": ep.uid}
                for ep in self._episodes
            ],
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        self.clear()
        self.capacity_steps = int(state["capacity_steps"])
        self._next_uid = int(state["next_uid"])
        self.rng.bit_generator.state = state["rng"]
        for item in state["episodes"]:
            episode = Episode(
                states=np.asarray(item["states"]),
                actions=np.asarray(item["actions"]),
                rewards=np.asarray(item["rewards"]),
                uid=int(item["uid"]),
            )
            self._episodes.append(episode)
            self._steps += len(episode)


def dump_episodes(episodes: Iterable[Episode], path: Path) -> None:
    """Write episodes as whitespace-separated numbers, one transition per line.

    A header comment records the dimensions; a blank line ends each episode.
    """

    episodes = list(episodes)
    if not episodes:
        raise ValueError("nothing to dump")
    state_dim = episodes[0].states.shape[1]
    action_dim = episodes[0].actions.shape[1]
    lines = [f"# state_dim={state_dim} action_dim={action_dim}"]
    for episode in episodes:
        for s, a, r in zip(episode.states, episode.actions, episode.rewards):
            lines.append(" ".join(repr(float(v)) for v in (*s, *a, r)))
        lines.append("")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_episodes(path: Path) -> List[List[Transition]]:
    text = path.read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith("#"):
        raise ValueError(f"{path} lacks the '# state_dim=.. action_dim=..' header")
    header = dict(item.split("=") for item in text[0].lstrip("# ").split())
    state_dim, action_dim = int(header["state_dim"]), int(header["action_dim"])
    episodes: List[List[Transition]] = []
    current: List[Transition] = []
    for line in text[1:]:
        if not line.strip():
            if current:
                episodes.append(current)
                current = []
            continue
        values = np.array([float(v) for v in line.split()])
        if len(values) != state_dim + action_dim + 1:
            raise ValueError(f"malformed transition line in {path}: {line!r}")
        current.append(
            Transition(
                state=values[:state_dim],
                action=values[state_dim : state_dim + action_dim],
                reward=float(values[-1]),
            )
        )
    if current:
        episodes.append(current)
    return episodes
