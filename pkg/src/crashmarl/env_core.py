"""Crash masks, crash behaviors and the environment contract.

A crash mask is drawn once at the start of an episode and stays fixed for
its whole length. Crashed agents keep receiving observations, but whatever
action they propose is overridden by the configured crash behavior.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import ParameterDomainError, SamplingFailureError

__all__ = [
    "CrashMask",
    "CrashBehavior",
    "EnvModel",
    "check_probability",
    "crash_cap",
    "sample_crash_mask",
    "sample_crash_mask_resampled",
    "sample_crash_masks_resampled",
    "apply_crash_behavior",
]


def check_probability(value, name="alpha"):
    """Return ``value`` as float, raising if it is not a probability."""
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ParameterDomainError(f"{name} must be a number, got {value!r}") from None
    if not (0.0 <= v <= 1.0):
        raise ParameterDomainError(f"{name} must lie in [0, 1], got {v!r}")
    return v


@dataclass(frozen=True)
class CrashMask:
    """Per-agent crash bits for one episode; ``True`` means crashed."""

    bits: tuple

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(bool(b) for b in self.bits))

    @classmethod
    def none(cls, n):
        return cls((False,) * n)

    @classmethod
    def single(cls, n, agent):
        """Mask with exactly ``agent`` crashed."""
        if not 0 <= agent < n:
            raise ParameterDomainError(f"agent index {agent} out of range for n={n}")
        return cls(tuple(i == agent for i in range(n)))

    def __len__(self):
        return len(self.bits)

    def __iter__(self):
        return iter(self.bits)

    def __getitem__(self, i):
        return self.bits[i]

    @property
    def n_agents(self):
        return len(self.bits)

    @property
    def popcount(self):
        return sum(self.bits)

    @property
    def any(self):
        return any(self.bits)

    def crashed_indices(self):
        return [i for i, b in enumerate(self.bits) if b]

    def as_array(self):
        return np.array(self.bits, dtype=bool)


class CrashBehavior(enum.Enum):
    """What a crashed agent does at every step."""

    FREEZE = "freeze"
    RANDOM = "random"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ParameterDomainError(
                f"unknown crash behavior {value!r}; expected 'freeze' or 'random'"
            ) from None


class EnvModel(Protocol):
    """Structural contract every environment satisfies.

    ``reset`` returns ``(state, observations, global_state)`` with one
    observation row per agent; ``step`` returns
    ``(next_state, observations, global_state, team_reward, done)``.
    """

    n_agents: int
    n_actions: int
    obs_dim: int
    state_dim: int
    max_steps: int
    noop_action: int

    def reset(self, rng=None): ...

    def step(self, state, joint_action): ...


def _check_n(n):
    if int(n) != n or n < 1:
        raise ParameterDomainError(f"agent count must be a positive integer, got {n!r}")
    return int(n)


def crash_cap(n, alpha):
    """Largest crash count a re-sampled mask may contain: ``ceil(n * alpha)``.

    The product is rounded to 12 decimals first so that e.g. ``10 * 0.1``
    caps at 1 and not at 2 because of binary representation noise.
    """
    return int(math.ceil(round(n * alpha, 12)))


def sample_crash_mask(n, alpha, rng):
    """Draw each agent's crash bit independently from Bernoulli(alpha)."""
    n = _check_n(n)
    alpha = check_probability(alpha)
    return CrashMask(tuple((rng.random(n) < alpha).tolist()))


def sample_crash_mask_resampled(n, alpha, rng, max_tries=10_000):
    """Bernoulli(alpha) mask redrawn until it has at most ``crash_cap(n, alpha)`` crashes.

    Draws with fewer crashes than the cap are kept, so the result follows
    the product-Bernoulli law conditioned on the popcount bound.
    """
    n = _check_n(n)
    alpha = check_probability(alpha)
    if int(max_tries) != max_tries or max_tries < 1:
        raise ParameterDomainError(f"max_tries must be a positive integer, got {max_tries!r}")
    cap = crash_cap(n, alpha)
    for _ in range(int(max_tries)):
        bits = rng.random(n) < alpha
        if int(bits.sum()) <= cap:
            return CrashMask(tuple(bits.tolist()))
    raise SamplingFailureError(
        f"no mask with popcount <= {cap} after {max_tries} draws (n={n}, alpha={alpha})"
    )


def sample_crash_masks_resampled(n, alpha, rng, count, max_tries=10_000):
    """``count`` re-sampled masks as a ``(count, n)`` bool array.

    Rows are drawn in the same stream order as repeated calls to
    :func:`sample_crash_mask_resampled`, so the accepted rows are exactly
    the masks those calls would return.
    """
    n = _check_n(n)
    alpha = check_probability(alpha)
    if int(max_tries) != max_tries or max_tries < 1:
        raise ParameterDomainError(f"max_tries must be a positive integer, got {max_tries!r}")
    cap = crash_cap(n, alpha)
    out = np.empty((0, n), dtype=bool)
    run = 0  # consecutive rejections carried across blocks
    while len(out) < count:
        need = count - len(out)
        block = rng.random((max(need + need // 4, 64), n)) < alpha
        ok = block.sum(axis=1) <= cap
        idx = np.flatnonzero(ok)
        gaps = np.diff(np.concatenate(([-1], idx))) - 1
        if len(idx):
            gaps[0] += run
            if gaps[:need].max() >= max_tries:
                break
            run = len(block) - 1 - idx[-1]
        else:
            run += len(block)
            if run >= max_tries:
                break
        out = np.concatenate([out, block[idx[:need]]])
    if len(out) < count:
        raise SamplingFailureError(
            f"no mask with popcount <= {cap} after {max_tries} draws (n={n}, alpha={alpha})"
        )
    return out


def apply_crash_behavior(mask, behavior, proposed: Sequence[int], noop_action, rng, n_actions=5):
    """Return the executed joint action; the input sequence is left untouched."""
    if len(proposed) != len(mask):
        raise ParameterDomainError(
            f"joint action has {len(proposed)} entries but mask has {len(mask)}"
        )
    executed = list(proposed)
    if not mask.any:
        return executed
    behavior = CrashBehavior.parse(behavior)
    for i in mask.crashed_indices():
        if behavior is CrashBehavior.FREEZE:
            executed[i] = noop_action
        else:
            executed[i] = int(rng.integers(n_actions))
    return executed
