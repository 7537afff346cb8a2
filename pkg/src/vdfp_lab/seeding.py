"""Named, counter-based random streams derived from a single master seed."""

from __future__ import annotations

from contextlib import contextmanager
from typing import Any, Dict, Iterator, Tuple

import numpy as np
import torch

STREAM_NAMES: Tuple[str, ...] = (
    "env",
    "init",
    "exploration",
    "sampling",
    "vae_noise",
    "eps_g",
    "dropout",
)


class RandomStreams:
    """One Philox generator (numpy) and one torch generator per consumer.

    Each consumer owns a child of ``SeedSequence(seed)``, so reordering the
    updates of one module never reshuffles the randomness seen by another.
    """

    def __init__(self, seed: int) -> None:
        self.seed = int(seed)
        children = np.random.SeedSequence(self.seed).spawn(len(STREAM_NAMES))
        self._numpy: Dict[str, np.random.Generator] = {}
        self._torch: Dict[str, torch.Generator] = {}
        self._torch_seeds: Dict[str, int] = {}
        for name, child in zip(STREAM_NAMES, children):
            self._numpy[name] = np.random.Generator(np.random.Philox(child))
            torch_seed = int(child.generate_state(1, dtype=np.uint64)[0] & 0x7FFF_FFFF_FFFF_FFFF)
            generator = torch.Generator()
            generator.manual_seed(torch_seed)
            self._torch[name] = generator
            self._torch_seeds[name] = torch_seed

    def numpy(self, name: str) -> np.random.Generator:
        return self._numpy[name]

    def torch(self, name: str) -> torch.Generator:
        return self._torch[name]

    def torch_seed(self, name: str) -> int:
        return self._torch_seeds[name]

    def state_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "numpy": {name: gen.bit_generator.state for name, gen in self._numpy.items()},
            "torch": {name: gen.get_state() for name, gen in self._torch.items()},
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        for name, gen_state in state["numpy"].items():
            self._numpy[name].bit_generator.state = gen_state
        for name, gen_state in state["torch"].items():
            self._torch[name].set_state(gen_state)


@contextmanager
def seeded_init(streams: RandomStreams) -> Iterator[None]:
    """Make module construction depend only on the ``init`` stream."""

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(streams.torch_seed("init"))
        yield
