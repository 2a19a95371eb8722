"""Run configuration and its plain-text ``key = value`` file format.

A config file has four optional sections::

    [env]
    preset = desk            # desk | paper | parametric | custom
    [coach]
    strategy = adaptive      # fixed | curriculum | adaptive
    beta = 0.75
    rho = 0.01
    [learner]
    mixer = qmix
    [trainer]
    total_steps = 200000
    seed = 1

Blank lines and ``#`` comments are ignored. Unknown sections or keys are
rejected. Every key has a default, so an empty file is a valid config.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .coach import Adaptive, Curriculum, Fixed
from .env_core import CrashBehavior
from .errors import ConfigParseError, ConfigurationError, CrashMarlError
from .gridworld import GridButtonsConfig, desk_layout, make_parametric_env, paper_layout
from .learner import LearnerConfig

PRESETS = ("desk", "paper", "parametric", "custom")


@dataclass
class EnvSpec:
    preset: str = "desk"
    width: int = 6
    height: int = 6
    n_agents: int = 2
    n_buttons: int = 2
    max_steps: int = 20
    layout_seed: int = 0
    agent_starts: tuple = ()
    button_positions: tuple = ()
    step_reward: float = -1.0
    button_reward: float = 5.0
    obs_encoding: str = "onehot"

    def validate(self):
        if self.preset not in PRESETS:
            raise ConfigurationError(f"preset must be one of {PRESETS}, got {self.preset!r}")
        self.build()

    def build(self):
        """Realize the grid layout this spec describes."""
        if self.preset == "desk":
            base = desk_layout()
        elif self.preset == "paper":
            base = paper_layout()
        elif self.preset == "parametric":
            base = make_parametric_env(
                self.n_agents, self.n_buttons, (self.width, self.height), self.max_steps, self.layout_seed
            )
        else:
            base = GridButtonsConfig(
                width=self.width,
                height=self.height,
                n_agents=self.n_agents,
                n_buttons=self.n_buttons,
                agent_starts=self.agent_starts,
                button_positions=self.button_positions,
                max_steps=self.max_steps,
            )
        return dataclasses.replace(
            base, step_reward=self.step_reward, button_reward=self.button_reward, obs_encoding=self.obs_encoding
        )


@dataclass
class CoachSpec:
    strategy: str = "adaptive"
    alpha: float = 0.0
    delta_alpha: float = 0.001
    alpha_max: float = 0.1
    beta: float = 0.75
    rho: float = 0.01
    alpha_init: float = 0.0

    def build(self):
        if self.strategy == "fixed":
            return Fixed(self.alpha)
        if self.strategy == "curriculum":
            return Curriculum(self.delta_alpha, self.alpha_max)
        if self.strategy == "adaptive":
            return Adaptive(self.beta, self.rho, self.alpha_init)
        raise ConfigurationError(
            f"strategy must be fixed, curriculum or adaptive, got {self.strategy!r}"
        )

    def validate(self):
        self.build()


@dataclass
class TrainerSpec:
    total_steps: int = 200_000
    eval_every: int = 100
    eval_episodes: int = 32
    eval_source: str = "greedy"
    crash_behavior: str = "freeze"
    resample: bool = True
    resample_max_tries: int = 10_000
    seed: int = 0
    out_dir: str = "runs/default"
    record_wall_clock: bool = False

    def validate(self):
        if self.total_steps < 1:
            raise ConfigurationError("total_steps must be >= 1")
        if self.eval_every < 1 or self.eval_episodes < 1:
            raise ConfigurationError("eval_every and eval_episodes must be >= 1")
        if self.eval_source not in ("greedy", "training"):
            raise ConfigurationError(f"eval_source must be greedy or training, got {self.eval_source!r}")
        if self.resample_max_tries < 1:
            raise ConfigurationError("resample_max_tries must be >= 1")
        CrashBehavior.parse(self.crash_behavior)

    @property
    def behavior(self):
        return CrashBehavior.parse(self.crash_behavior)


@dataclass
class RunConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    coach: CoachSpec = field(default_factory=CoachSpec)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    trainer: TrainerSpec = field(default_factory=TrainerSpec)

    def validate(self):
        self.env.validate()
        self.coach.validate()
        self.learner.validate()
        self.trainer.validate()
        return self

    def replace(self, **sections):
        """Copy with whole sections, or ``section__key`` overrides, replaced."""
        parts = {name: dataclasses.replace(getattr(self, name)) for name in SECTIONS}
        for key, value in sections.items():
            if "__" in key:
                sec, k = key.split("__", 1)
                parts[sec] = dataclasses.replace(parts[sec], **{k: value})
            else:
                parts[key] = value
        return RunConfig(**parts)


SECTIONS = {"env": EnvSpec, "coach": CoachSpec, "learner": LearnerConfig, "trainer": TrainerSpec}


def _parse_positions(text):
    text = text.strip()
    if not text:
        return ()
    out = []
    for chunk in text.split(";"):
        xs = chunk.strip().split(",")
        if len(xs) != 2:
            raise ValueError(f"position {chunk.strip()!r} is not 'x,y'")
        out.append((int(xs[0]), int(xs[1])))
    return tuple(out)


def _format_positions(value):
    return "; ".join(f"{x},{y}" for x, y in value)


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _parse_int(text):
    return int(text.strip().replace("_", ""))


def _converter(spec_cls, name):
    default = getattr(spec_cls(), name)
    if name in ("agent_starts", "button_positions"):
        return _parse_positions
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return _parse_int
    if isinstance(default, float):
        return float
    return lambda s: s.strip()


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return _format_positions(value)
    return str(value)


def parse_config_text(text):
    """Parse config text into a validated :class:`RunConfig`."""
    values = {name: {} for name in SECTIONS}
    where = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                raise ConfigParseError(f"unknown section [{section}]", line=lineno)
            continue
        if "=" not in line:
            raise ConfigParseError(f"expected 'key = value', got {line!r}", line=lineno)
        if section is None:
            raise ConfigParseError("key outside of any section", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        spec_cls = SECTIONS[section]
        if key not in {f.name for f in dataclasses.fields(spec_cls)}:
            raise ConfigParseError(f"unknown key in [{section}]", key=key, line=lineno)
        try:
            values[section][key] = _converter(spec_cls, key)(value)
        except ValueError as exc:
            raise ConfigParseError(f"bad value {value!r}: {exc}", key=key, line=lineno) from None
        where[(section, key)] = lineno

    for (name, key), lineno in sorted(where.items(), key=lambda kv: kv[1]):
        try:
            _check_single(name, key, values[name][key])
        except CrashMarlError as exc:
            raise ConfigParseError(f"invalid value: {exc}", key=key, line=lineno) from None
    cfg = RunConfig(**{name: cls(**values[name]) for name, cls in SECTIONS.items()})
    try:
        cfg.validate()
    except CrashMarlError as exc:
        raise ConfigParseError(f"invalid config: {exc}") from None
    return cfg


_PROBABILITY_KEYS = {
    ("coach", "alpha"), ("coach", "delta_alpha"), ("coach", "alpha_max"), ("coach", "beta"),
    ("coach", "rho"), ("coach", "alpha_init"),
}


def _check_single(section, key, value):
    """Range-check one key against otherwise-default settings so errors can name it.

    Layout keys only make sense together, so the env section is checked as
    a whole afterwards.
    """
    if (section, key) in _PROBABILITY_KEYS and not 0.0 <= value <= 1.0:
        raise ConfigurationError(f"{key} = {value} is outside [0, 1]")
    if section != "env":
        SECTIONS[section](**{key: value}).validate()


def parse_config(path):
    """Read and validate a config file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigParseError(f"config file not found: {p}")
    return parse_config_text(p.read_text())


def format_config(cfg):
    """Serialize a RunConfig back to config text (every key written)."""
    lines = []
    for name in SECTIONS:
        lines.append(f"[{name}]")
        sub = getattr(cfg, name)
        for f in dataclasses.fields(sub):
            lines.append(f"{f.name} = {_format_value(getattr(sub, f.name))}")
        lines.append("")
    return "\n".join(lines)
