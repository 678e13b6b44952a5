"""Fixed-capacity FIFO replay buffer with uniform sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class Transition:
    """One step of experience.

    ``done`` is True only for a true terminal.  Step-limit truncations are
    stored with ``done=False`` so their bootstrap term survives.
    """

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool

    def __eq__(self, other):
        if not isinstance(other, Transition):
            return NotImplemented
        return (
            self.action == other.action
            and self.reward == other.reward
            and self.done == other.done
            and np.array_equal(self.state, other.state)
            and np.array_equal(self.next_state, other.next_state)
        )


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.actions)

    @classmethod
    def from_transitions(cls, items) -> "Batch":
        return cls(
            np.stack([t.state for t in items]).astype(np.float64),
            np.array([t.action for t in items], dtype=np.int64),
            np.array([t.reward for t in items], dtype=np.float64),
            np.stack([t.next_state for t in items]).astype(np.float64),
            np.array([t.done for t in items], dtype=bool),
        )


class NotEnoughExperience(ValueError):
    pass


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, t: Transition) -> None:
        i = self.cursor
        self.obs[i] = t.state
        self.next_obs[i] = t.next_state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.dones[i] = t.done
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __getitem__(self, i: int) -> Transition:
        """``i``-th oldest stored transition."""
        if not 0 <= i < self.size:
            raise IndexError(i)
        j = (self.cursor - self.size + i) % self.capacity
        return Transition(self.obs[j].copy(), int(self.actions[j]), float(self.rewards[j]), self.next_obs[j].copy(), bool(self.dones[j]))

    def _indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.size < batch_size:
            raise NotEnoughExperience(f"not enough experience: {self.size} stored, {batch_size} requested")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform draw with replacement, oldest-first indexing."""
        return [self[int(i)] for i in self._indices(batch_size, rng)]

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Same draw as :meth:`sample`, returned as stacked arrays."""
        idx = (self.cursor - self.size + self._indices(batch_size, rng)) % self.capacity
        return Batch(
            self.obs[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_obs[idx],
            self.dones[idx],
        )

    def state_dict(self) -> dict:
        order = [(self.cursor - self.size + i) % self.capacity for i in range(self.size)]
        return {
            "capacity": self.capacity,
            "obs_dim": self.obs_dim,
            "obs": self.obs[order].ravel().tolist(),
            "next_obs": self.next_obs[order].ravel().tolist(),
            "actions": self.actions[order].tolist(),
            "rewards": self.rewards[order].tolist(),
            "dones": self.dones[order].tolist(),
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "ReplayBuffer":
        buf = cls(int(d["capacity"]), int(d["obs_dim"]))
        n = len(d["actions"])
        buf.obs[:n] = np.array(d["obs"]).reshape(n, buf.obs_dim)
        buf.next_obs[:n] = np.array(d["next_obs"]).reshape(n, buf.obs_dim)
        buf.actions[:n] = d["actions"]
        buf.rewards[:n] = d["rewards"]
        buf.dones[:n] = d["dones"]
        buf.size = n
        buf.cursor = n % buf.capacity
        return buf
