"""Episode records and their flattening into TD transitions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env_core import CrashMask


@dataclass
class EpisodeRecord:
    """Everything that happened in one episode.

    ``observations`` and ``states`` hold ``length + 1`` rows (the initial
    one included); action, reward and done arrays hold ``length`` rows.
    """

    mask: CrashMask
    observations: np.ndarray  # (T + 1, n, obs_dim)
    states: np.ndarray  # (T + 1, state_dim)
    proposed: np.ndarray  # (T, n) int
    executed: np.ndarray  # (T, n) int
    rewards: np.ndarray  # (T,)
    dones: np.ndarray  # (T,) bool
    alpha: float = 0.0
    success: bool = False

    @property
    def length(self):
        return int(self.rewards.shape[0])

    @property
    def episode_return(self):
        return float(self.rewards.sum())

    @property
    def n_agents(self):
        return int(self.observations.shape[1])


@dataclass
class Transitions:
    """A flat batch of single-step transitions, one row per time step."""

    obs: np.ndarray  # (B, n, obs_dim)
    prev_actions: np.ndarray  # (B, n), -1 before the first step
    actions: np.ndarray  # (B, n) executed
    rewards: np.ndarray  # (B,)
    states: np.ndarray  # (B, state_dim)
    next_obs: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray  # (B,) float 0/1
    crashed: np.ndarray  # (B, n) bool

    def __len__(self):
        return int(self.rewards.shape[0])

    @classmethod
    def from_episode(cls, ep):
        T = ep.length
        n = ep.n_agents
        prev = np.full((T, n), -1, dtype=np.int64)
        if T > 1:
            prev[1:] = ep.executed[:-1]
        return cls(
            obs=ep.observations[:-1],
            prev_actions=prev,
            actions=np.asarray(ep.executed, dtype=np.int64),
            rewards=np.asarray(ep.rewards, dtype=np.float64),
            states=ep.states[:-1],
            next_obs=ep.observations[1:],
            next_states=ep.states[1:],
            dones=np.asarray(ep.dones, dtype=np.float64),
            crashed=np.broadcast_to(ep.mask.as_array(), (T, n)).copy(),
        )

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        return cls(
            **{
                name: np.concatenate([getattr(p, name) for p in parts], axis=0)
                for name in cls.__dataclass_fields__
            }
        )
