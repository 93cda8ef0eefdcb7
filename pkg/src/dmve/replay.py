"""Episode replay dataset with uniform fixed-length window sampling."""

from __future__ import annotations

from collections import deque

import numpy as np

from .envs import Episode
from .world_model import SequenceBatch


class InsufficientDataError(RuntimeError):
    pass


class ReplayDataset:
    def __init__(self, capacity: int = 1000):
        self.capacity = capacity
        self.episodes: deque[Episode] = deque(maxlen=capacity)

    def add(self, episode: Episode) -> None:
        self.episodes.append(episode)

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def num_steps(self) -> int:
        return sum(len(ep) for ep in self.episodes)

    def sample_windows(self, batch_size: int, length: int, rng: np.random.Generator) -> list[tuple[int, int]]:
        """(episode index, start) pairs drawn uniformly over all valid windows."""
        counts = np.array([max(len(ep) - length + 1, 0) for ep in self.episodes], dtype=np.int64)
        total = int(counts.sum())
        if total == 0:
            raise InsufficientDataError(f"no stored episode has {length} steps")
        flat = rng.integers(total, size=batch_size)
        ends = np.cumsum(counts)
        eps = np.searchsorted(ends, flat, side="right")
        starts = flat - (ends[eps] - counts[eps])
        return list(zip(eps.tolist(), starts.tolist()))

    def sample(self, batch_size: int, length: int, rng: np.random.Generator) -> SequenceBatch:
        windows = self.sample_windows(batch_size, length, rng)
        eps = [self.episodes[i] for i, _ in windows]
        return SequenceBatch(
            actions=np.stack([ep.actions[s : s + length] for ep, (_, s) in zip(eps, windows)]),
            observations=np.stack([ep.observations[s : s + length] for ep, (_, s) in zip(eps, windows)]),
            rewards=np.stack([ep.rewards[s : s + length] for ep, (_, s) in zip(eps, windows)]),
        )


def replay_sample(dataset: ReplayDataset, batch_size: int, length: int, rng: np.random.Generator) -> SequenceBatch:
    return dataset.sample(batch_size, length, rng)
