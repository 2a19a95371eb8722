"""Crash-rate coach: schedules the training crash rate from observed performance.

Three strategies share one update signature ``alpha_next = F(alpha, e)``:

* fixed:      ``alpha_next = alpha``
* curriculum: ``alpha_next = min(alpha + delta_alpha, alpha_max)``, starting at 0
* adaptive:   ``alpha_next = alpha + rho * (1[e >= beta] - alpha)``

Fixed and curriculum are special cases of the adaptive form (``rho = 0``
and ``delta_alpha = 0`` respectively reduce both to fixed).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

from .env_core import check_probability
from .errors import ParameterDomainError


@dataclass(frozen=True)
class Fixed:
    alpha: float = 0.0

    def __post_init__(self):
        check_probability(self.alpha, "alpha")

    @property
    def initial_alpha(self):
        return float(self.alpha)


@dataclass(frozen=True)
class Curriculum:
    delta_alpha: float = 0.001
    alpha_max: float = 0.1

    def __post_init__(self):
        check_probability(self.delta_alpha, "delta_alpha")
        check_probability(self.alpha_max, "alpha_max")

    @property
    def initial_alpha(self):
        return 0.0


@dataclass(frozen=True)
class Adaptive:
    beta: float = 0.75
    rho: float = 0.01
    alpha_init: float = 0.0

    def __post_init__(self):
        check_probability(self.beta, "beta")
        check_probability(self.rho, "rho")
        check_probability(self.alpha_init, "alpha_init")

    @property
    def initial_alpha(self):
        return float(self.alpha_init)


CoachStrategy = Union[Fixed, Curriculum, Adaptive]


@dataclass(frozen=True)
class CoachState:
    alpha_t: float
    episode_index: int = 0
    last_e: Optional[float] = None


def _clamp01(x):
    return 0.0 if x < 0.0 else 1.0 if x > 1.0 else x


def next_crash_rate(strategy, state, e_t):
    """Crash rate for the next coach round.

    ``state`` may be a :class:`CoachState` or a bare float crash rate.
    """
    alpha = state.alpha_t if isinstance(state, CoachState) else state
    alpha = check_probability(alpha, "alpha_t")
    e_t = check_probability(e_t, "e_t")
    if isinstance(strategy, Fixed):
        return alpha
    if isinstance(strategy, Curriculum):
        return _clamp01(min(alpha + strategy.delta_alpha, strategy.alpha_max))
    if isinstance(strategy, Adaptive):
        indicator = 1.0 if e_t >= strategy.beta else 0.0
        return _clamp01(alpha + strategy.rho * (indicator - alpha))
    raise ParameterDomainError(f"unknown coach strategy {strategy!r}")


def alpha_trajectory_closed_form(strategy, t, always_above):
    """Adaptive crash rate after ``t`` rounds of a constant indicator."""
    if not isinstance(strategy, Adaptive):
        raise ParameterDomainError("closed form exists only for the adaptive strategy")
    decay = (1.0 - strategy.rho) ** t
    if always_above:
        return 1.0 - decay * (1.0 - strategy.alpha_init)
    return decay * strategy.alpha_init


class Coach:
    """Mutable owner of the coach state for one training run."""

    def __init__(self, strategy):
        self.strategy = strategy
        self.state = CoachState(alpha_t=strategy.initial_alpha)

    @property
    def alpha(self):
        return self.state.alpha_t

    def observe(self, e_t):
        """Feed performance ``e_t`` for the current round; returns the new rate."""
        new_alpha = next_crash_rate(self.strategy, self.state, e_t)
        self.state = replace(
            self.state, alpha_t=new_alpha, episode_index=self.state.episode_index + 1, last_e=float(e_t)
        )
        return new_alpha


def strategy_name(strategy):
    return type(strategy).__name__.lower()


def make_strategy(name, **params):
    """Build a strategy from its lowercase name and keyword hyperparameters."""
    kinds = {"fixed": Fixed, "curriculum": Curriculum, "adaptive": Adaptive}
    try:
        cls = kinds[name.strip().lower()]
    except KeyError:
        raise ParameterDomainError(
            f"unknown coach strategy {name!r}; expected one of {sorted(kinds)}"
        ) from None
    return cls(**params)
