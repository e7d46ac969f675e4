"""Episodic replay with Monte-Carlo return backfill.

Transitions are stored with a placeholder return. When the episode ends,
``finalize_episode`` writes the discounted return-to-go into every surviving
record of that episode. Only finalized records are ever sampled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

PLACEHOLDER = None

DUMP_FIELDS = ("s", "a", "r", "s_next", "done", "G", "episode_id", "t")


class ReplayUsageError(RuntimeError):
    pass


@dataclass(frozen=True)
class TransitionRecord:
    state: int
    action: int
    reward: float
    next_state: int
    done: bool
    mc_return: float | None = PLACEHOLDER
    episode_id: int = 0
    t_within_episode: int = 0

    @property
    def finalized(self) -> bool:
        return self.mc_return is not PLACEHOLDER


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    returns: np.ndarray


class ReplayBuffer:
    """Fixed-capacity circular buffer with at most one open episode.

    The open (unfinalized) episode always occupies the newest ``open_len``
    slots, so finalized records form a contiguous run starting at the oldest.
    """

    def __init__(self, capacity: int = 50_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros(capacity, dtype=np.int64)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.next_states = np.zeros(capacity, dtype=np.int64)
        self.dones = np.zeros(capacity, dtype=bool)
        self.returns = np.full(capacity, np.nan)
        self.episode_ids = np.zeros(capacity, dtype=np.int64)
        self.ts = np.zeros(capacity, dtype=np.int64)
        self.cursor = 0  # next write slot
        self.size = 0
        self.open_len = 0
        self.total_stored = 0

    def __len__(self) -> int:
        return self.size

    @property
    def n_finalized(self) -> int:
        return self.size - self.open_len

    def store(self, record: TransitionRecord) -> None:
        if record.finalized:
            raise ReplayUsageError("records must be stored with a placeholder return")
        i = self.cursor
        self.states[i] = record.state
        self.actions[i] = record.action
        self.rewards[i] = record.reward
        self.next_states[i] = record.next_state
        self.dones[i] = record.done
        self.returns[i] = np.nan
        self.episode_ids[i] = record.episode_id
        self.ts[i] = record.t_within_episode
        self.cursor = (i + 1) % self.capacity
        if self.size < self.capacity:
            self.size += 1
        self.open_len = min(self.open_len + 1, self.capacity)
        self.total_stored += 1

    def add(self, state: int, action: int, reward: float, next_state: int, done: bool,
            episode_id: int = 0, t: int = 0) -> None:
        self.store(TransitionRecord(state, action, reward, next_state, done, PLACEHOLDER, episode_id, t))

    def _open_indices(self) -> np.ndarray:
        return (self.cursor - self.open_len + np.arange(self.open_len)) % self.capacity

    def finalize_episode(self, gamma: float) -> None:
        """Backfill discounted returns for the open episode (surviving records only)."""
        if self.open_len == 0:
            raise ReplayUsageError("no open episode to finalize")
        idx = self._open_indices()
        acc = 0.0
        rewards = self.rewards
        returns = self.returns
        for i in idx[::-1].tolist():
            acc = rewards[i] + gamma * acc
            returns[i] = acc
        self.open_len = 0

    def sample_uniform(self, batch_size: int, rng: np.random.Generator) -> Batch | None:
        """I.i.d. uniform draws (with replacement) from finalized records.

        Returns None when nothing is finalized yet; callers skip the update.
        """
        n = self.n_finalized
        if n == 0:
            return None
        oldest = (self.cursor - self.size) % self.capacity
        idx = (oldest + rng.integers(0, n, size=batch_size)) % self.capacity
        return self.gather(idx)

    def gather(self, idx: np.ndarray) -> Batch:
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.dones[idx], self.returns[idx])

    def records(self) -> list[TransitionRecord]:
        """All stored records, oldest first."""
        start = (self.cursor - self.size) % self.capacity
        out = []
        for k in range(self.size):
            i = (start + k) % self.capacity
            g = float(self.returns[i])
            out.append(TransitionRecord(int(self.states[i]), int(self.actions[i]), float(self.rewards[i]),
                                        int(self.next_states[i]), bool(self.dones[i]),
                                        PLACEHOLDER if np.isnan(g) else g,
                                        int(self.episode_ids[i]), int(self.ts[i])))
        return out

    def dump_csv(self, path: str | Path) -> None:
        """Write every record, oldest first; placeholder returns are left empty."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(DUMP_FIELDS)
            for rec in self.records():
                writer.writerow([rec.state, rec.action, repr(rec.reward), rec.next_state, int(rec.done),
                                 "" if rec.mc_return is PLACEHOLDER else repr(rec.mc_return),
                                 rec.episode_id, rec.t_within_episode])


def load_dump(path: str | Path) -> list[TransitionRecord]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        return [TransitionRecord(int(row["s"]), int(row["a"]), float(row["r"]), int(row["s_next"]),
                                 bool(int(row["done"])), float(row["G"]) if row["G"] else PLACEHOLDER,
                                 int(row["episode_id"]), int(row["t"]))
                for row in reader]
