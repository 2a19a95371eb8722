"""Deterministic button-touching grid worlds.

Agents move simultaneously on a ``width x height`` grid and the team must
touch every button before the step budget runs out. Each step costs
``step_reward`` and every newly touched button adds ``button_reward`` on
top of it. An agent only observes its own position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ParameterDomainError

UP, DOWN, LEFT, RIGHT, STAY = range(5)
ACTION_NAMES = ("up", "down", "left", "right", "stay")
N_ACTIONS = 5
# (dx, dy); y grows downwards so row 0 renders at the top
MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0), (0, 0))
OBS_ENCODINGS = ("scaled", "onehot")


@dataclass(frozen=True)
class GridButtonsConfig:
    width: int
    height: int
    n_agents: int
    n_buttons: int
    agent_starts: tuple
    button_positions: tuple
    max_steps: int
    step_reward: float = -1.0
    button_reward: float = 5.0
    noop_action: int = STAY
    obs_encoding: str = "onehot"

    def __post_init__(self):
        object.__setattr__(self, "agent_starts", tuple(tuple(int(c) for c in p) for p in self.agent_starts))
        object.__setattr__(
            self, "button_positions", tuple(tuple(int(c) for c in p) for p in self.button_positions)
        )
        self.validate()

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise ConfigurationError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if self.n_agents < 1:
            raise ConfigurationError("n_agents must be >= 1")
        if self.n_buttons < 0:
            raise ConfigurationError("n_buttons must be >= 0")
        if self.max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1")
        if len(self.agent_starts) != self.n_agents:
            raise ConfigurationError(
                f"{len(self.agent_starts)} agent starts given for {self.n_agents} agents"
            )
        if len(self.button_positions) != self.n_buttons:
            raise ConfigurationError(
                f"{len(self.button_positions)} button positions given for {self.n_buttons} buttons"
            )
        for x, y in self.agent_starts + self.button_positions:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ConfigurationError(f"position ({x}, {y}) is outside the {self.width}x{self.height} grid")
        if self.obs_encoding not in OBS_ENCODINGS:
            raise ConfigurationError(f"obs_encoding must be one of {OBS_ENCODINGS}, got {self.obs_encoding!r}")
        if not 0 <= self.noop_action < N_ACTIONS:
            raise ConfigurationError(f"noop_action must be an action id, got {self.noop_action}")

    def to_dict(self):
        return {
            "width": self.width,
            "height": self.height,
            "n_agents": self.n_agents,
            "n_buttons": self.n_buttons,
            "agent_starts": [list(p) for p in self.agent_starts],
            "button_positions": [list(p) for p in self.button_positions],
            "max_steps": self.max_steps,
            "step_reward": self.step_reward,
            "button_reward": self.button_reward,
            "noop_action": self.noop_action,
            "obs_encoding": self.obs_encoding,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class GridState:
    agent_positions: tuple
    button_touched: tuple
    step_index: int = 0


def paper_layout():
    """10x10, two agents, two buttons, 20 steps.

    Exact coordinates were never published; this symmetric placement is a
    fixture, not ground truth.
    """
    return GridButtonsConfig(
        width=10,
        height=10,
        n_agents=2,
        n_buttons=2,
        agent_starts=((1, 1), (8, 8)),
        button_positions=((8, 1), (1, 8)),
        max_steps=20,
    )


def desk_layout():
    """6x6 preset where each agent has one button two cells away.

    A lone agent can still touch both buttons in 8 steps, well inside the
    20-step budget, so crash-robust play is attainable.
    """
    return GridButtonsConfig(
        width=6,
        height=6,
        n_agents=2,
        n_buttons=2,
        agent_starts=((0, 0), (5, 5)),
        button_positions=((2, 0), (3, 5)),
        max_steps=20,
    )


def make_parametric_env(n_agents, n_buttons, grid_size, max_steps, seed):
    """Place starts and buttons on distinct cells drawn from ``seed``.

    ``grid_size`` is either an int (square grid) or a ``(width, height)`` pair.
    """
    if n_agents < 1 or n_buttons < 1:
        raise ConfigurationError("n_agents and n_buttons must both be >= 1")
    if isinstance(grid_size, (tuple, list)):
        width, height = (int(v) for v in grid_size)
    else:
        width = height = int(grid_size)
    if width < 1 or height < 1:
        raise ConfigurationError(f"grid must be at least 1x1, got {width}x{height}")
    if n_agents + n_buttons > width * height:
        raise ConfigurationError(
            f"cannot place {n_agents} agents and {n_buttons} buttons on distinct cells "
            f"of a {width}x{height} grid"
        )
    rng = np.random.default_rng(seed)
    cells = rng.choice(width * height, size=n_agents + n_buttons, replace=False)
    coords = [(int(c % width), int(c // width)) for c in cells]
    return GridButtonsConfig(
        width=width,
        height=height,
        n_agents=n_agents,
        n_buttons=n_buttons,
        agent_starts=tuple(coords[:n_agents]),
        button_positions=tuple(coords[n_agents:]),
        max_steps=max_steps,
    )


@dataclass
class GridButtonsEnv:
    """Stateless stepping over immutable :class:`GridState` values."""

    config: GridButtonsConfig
    n_actions: int = field(default=N_ACTIONS, init=False)

    def __post_init__(self):
        c = self.config
        self.n_agents = c.n_agents
        self.n_buttons = c.n_buttons
        self.max_steps = c.max_steps
        self.noop_action = c.noop_action
        self.obs_dim = 2 if c.obs_encoding == "scaled" else 2 + c.width + c.height
        self.state_dim = 2 * c.n_agents + 3 * c.n_buttons
        self._sx = 1.0 / (c.width - 1) if c.width > 1 else 0.0
        self._sy = 1.0 / (c.height - 1) if c.height > 1 else 0.0
        self._buttons = {}
        for j, p in enumerate(c.button_positions):
            self._buttons.setdefault(p, []).append(j)
        self._button_coords = np.array(
            [(x * self._sx, y * self._sy) for x, y in c.button_positions], dtype=np.float64
        ).reshape(-1)

    def initial_state(self):
        return GridState(self.config.agent_starts, (False,) * self.n_buttons, 0)

    def scaled_positions(self, state):
        pos = np.asarray(state.agent_positions, dtype=np.float64).reshape(self.n_agents, 2)
        return pos * (self._sx, self._sy)

    def observations(self, state):
        """One row per agent holding only that agent's own position.

        ``scaled``: ``(x, y)`` mapped to [0, 1]. ``onehot``: the scaled pair
        followed by one-hot column and one-hot row indicators.
        """
        scaled = self.scaled_positions(state)
        if self.config.obs_encoding == "scaled":
            return scaled
        c = self.config
        out = np.zeros((self.n_agents, self.obs_dim))
        out[:, :2] = scaled
        idx = np.arange(self.n_agents)
        pos = state.agent_positions
        out[idx, [2 + x for x, _ in pos]] = 1.0
        out[idx, [2 + c.width + y for _, y in pos]] = 1.0
        return out

    def global_state(self, state):
        obs = self.scaled_positions(state).reshape(-1)
        touched = np.asarray(state.button_touched, dtype=np.float64)
        return np.concatenate([obs, self._button_coords, touched])

    def reset(self, rng=None):
        """Fixed layout, so ``rng`` is accepted for interface parity only."""
        state = self.initial_state()
        return state, self.observations(state), self.global_state(state)

    def move(self, positions, joint_action):
        c = self.config
        if len(joint_action) != self.n_agents:
            raise ParameterDomainError(
                f"expected {self.n_agents} actions, got {len(joint_action)}"
            )
        new_positions = []
        for (x, y), a in zip(positions, joint_action):
            if not (0 <= a < N_ACTIONS) or int(a) != a:
                raise ParameterDomainError(f"action id {a!r} is not one of 0..{N_ACTIONS - 1}")
            dx, dy = MOVES[int(a)]
            nx, ny = x + dx, y + dy
            if 0 <= nx < c.width and 0 <= ny < c.height:
                new_positions.append((nx, ny))
            else:
                new_positions.append((x, y))
        return tuple(new_positions)

    def transition(self, state, joint_action):
        """Pure state update: ``(next_state, reward, done)``."""
        c = self.config
        positions = self.move(state.agent_positions, joint_action)
        touched = list(state.button_touched)
        newly = 0
        for p in positions:
            for j in self._buttons.get(p, ()):
                if not touched[j]:
                    touched[j] = True
                    newly += 1
        step_index = state.step_index + 1
        reward = c.step_reward + c.button_reward * newly
        nxt = GridState(positions, tuple(touched), step_index)
        done = all(touched) or step_index >= c.max_steps
        return nxt, reward, done

    def step(self, state, joint_action):
        nxt, reward, done = self.transition(state, joint_action)
        return nxt, self.observations(nxt), self.global_state(nxt), reward, done

    @staticmethod
    def is_success(final_state):
        return all(final_state.button_touched)


def is_success(final_state):
    """True iff every button has been touched (vacuously true with none)."""
    return all(final_state.button_touched)


def reset(config, rng=None):
    return GridButtonsEnv(config).reset(rng)


def step(config, state, joint_action):
    return GridButtonsEnv(config).step(state, joint_action)
