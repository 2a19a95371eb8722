"""Coach-driven training loop, evaluation, test matrix and sweeps.

Each coach round runs ``eval_every`` training episodes at a fixed crash
rate, then measures performance ``e_t`` (greedy success rate under that
rate by default) and lets the coach pick the next rate.

Randomness comes from one master seed split into named sub-streams, so
that evaluation can never shift the training trajectory.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .coach import Coach
from .config import RunConfig
from .env_core import (
    CrashBehavior,
    CrashMask,
    apply_crash_behavior,
    sample_crash_mask,
    sample_crash_mask_resampled,
)
from .episode import EpisodeRecord
from .errors import NumericFailureError, ParameterDomainError
from .gridworld import GridButtonsConfig, GridButtonsEnv
from .learner import Learner, LearnerParams, ReplayBuffer, epsilon_greedy_joint
from . import metrics_io

log = logging.getLogger(__name__)

STREAMS = ("init", "act", "mask", "crash", "replay", "eval")


def substream(seed, name, *extra):
    """Independent generator for purpose ``name`` derived from ``seed``."""
    key = [int(seed), STREAMS.index(name) if name in STREAMS else sum(map(ord, name))]
    key.extend(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(key))


@dataclass
class EvalReport:
    crash_rate: float
    episodes: int
    success_rate: float
    success_std: float = 0.0
    mean_return: float = 0.0
    outcomes: list = field(default_factory=list)


@dataclass
class TrainingResult:
    params: LearnerParams
    log_rows: list
    env_config: GridButtonsConfig
    checkpoint_path: Path = None
    log_path: Path = None


def rollout(env, agent, mask, behavior, epsilon, act_rng, crash_rng, record=True):
    """Play one episode; proposals come from ``agent`` with epsilon-greedy exploration."""
    behavior = CrashBehavior.parse(behavior)
    n = env.n_agents
    state, obs, gs = env.reset()
    T = env.max_steps
    obs_buf = np.empty((T + 1, n, env.obs_dim))
    st_buf = np.empty((T + 1, env.state_dim))
    proposed = np.empty((T, n), dtype=np.int64)
    executed = np.empty((T, n), dtype=np.int64)
    rewards = np.empty(T)
    dones = np.zeros(T, dtype=bool)
    obs_buf[0], st_buf[0] = obs, gs
    prev = np.full(n, -1, dtype=np.int64)
    t = 0
    done = False
    while not done:
        q = agent.q_batch(obs, prev[None] if agent.use_prev_action else None)[0]
        acts = epsilon_greedy_joint(q, epsilon, act_rng)
        exe = apply_crash_behavior(mask, behavior, acts.tolist(), env.noop_action, crash_rng, env.n_actions)
        state, reward, done = env.transition(state, exe)
        obs = env.observations(state)
        proposed[t], executed[t] = acts, exe
        rewards[t], dones[t] = reward, done
        obs_buf[t + 1] = obs
        st_buf[t + 1] = env.global_state(state)
        prev = executed[t]
        t += 1
    return EpisodeRecord(
        mask=mask,
        observations=obs_buf[: t + 1],
        states=st_buf[: t + 1],
        proposed=proposed[:t],
        executed=executed[:t],
        rewards=rewards[:t],
        dones=dones[:t],
        success=env.is_success(state),
    ), state


def _greedy_outcomes(env, agent, masks, behavior, crash_rng):
    """Greedy outcomes for a list of masks.

    Under freeze the environment and greedy policy are deterministic, so
    identical masks give identical episodes and are only played once.
    """
    behavior = CrashBehavior.parse(behavior)
    cache = {}
    outcomes = []
    for mask in masks:
        if behavior is CrashBehavior.FREEZE and mask.bits in cache:
            outcomes.append(cache[mask.bits])
            continue
        ep, _ = rollout(env, agent, mask, behavior, 0.0, None, crash_rng)
        res = (bool(ep.success), ep.episode_return, ep.length)
        cache[mask.bits] = res
        outcomes.append(res)
    return outcomes


def evaluate_params(params, env_config, crash_rate, behavior, episodes, seed):
    """Greedy evaluation of one parameter set with plain Bernoulli crash masks."""
    if episodes < 1:
        raise ParameterDomainError("episodes must be >= 1")
    env = GridButtonsEnv(env_config)
    mask_rng = substream(seed, "eval", 0)
    crash_rng = substream(seed, "eval", 1)
    masks = [sample_crash_mask(env.n_agents, crash_rate, mask_rng) for _ in range(episodes)]
    outcomes = _greedy_outcomes(env, params.agent, masks, behavior, crash_rng)
    successes = np.array([o[0] for o in outcomes], dtype=np.float64)
    returns = np.array([o[1] for o in outcomes])
    return EvalReport(
        crash_rate=float(crash_rate),
        episodes=episodes,
        success_rate=float(successes.mean()),
        success_std=0.0,
        mean_return=float(returns.mean()),
        outcomes=outcomes,
    )


def evaluate_masks(params, env_config, masks, behavior=CrashBehavior.FREEZE, seed=0):
    """Greedy success rate over an explicit list of crash masks."""
    env = GridButtonsEnv(env_config)
    outcomes = _greedy_outcomes(env, params.agent, masks, behavior, substream(seed, "eval", 2))
    return float(np.mean([o[0] for o in outcomes])), outcomes


def single_crash_masks(n):
    return [CrashMask.single(n, i) for i in range(n)]


def _load(checkpoint):
    if isinstance(checkpoint, (str, Path)):
        params, meta = metrics_io.load_checkpoint(checkpoint, with_meta=True)
        env_cfg = meta.get("env")
        return params, GridButtonsConfig.from_dict(env_cfg) if env_cfg else None
    if isinstance(checkpoint, TrainingResult):
        return checkpoint.params, checkpoint.env_config
    if isinstance(checkpoint, tuple):
        return checkpoint
    raise ParameterDomainError(f"cannot evaluate {type(checkpoint).__name__}")


def evaluate(checkpoint, crash_rate, behavior, episodes, seed, env_config=None):
    """Evaluate a checkpoint path, :class:`TrainingResult` or ``(params, env_config)`` pair."""
    params, stored_env = _load(checkpoint)
    env_config = env_config or stored_env
    if env_config is None:
        raise ParameterDomainError("checkpoint carries no environment layout; pass env_config")
    return evaluate_params(params, env_config, crash_rate, behavior, episodes, seed)


def test_matrix(checkpoints, rates, episodes, seed=0, behavior=CrashBehavior.FREEZE, env_config=None):
    """Per-rate success mean and std across checkpoints (one per training seed).

    The std is the population std (ddof=0), so a single checkpoint reports 0.
    """
    checkpoints = list(checkpoints)
    if not checkpoints:
        raise ParameterDomainError("test_matrix needs at least one checkpoint")
    rows = []
    for rate in rates:
        reports = [evaluate(c, rate, behavior, episodes, seed, env_config) for c in checkpoints]
        values = np.array([r.success_rate for r in reports])
        rows.append(
            {
                "crash_rate": float(rate),
                "mean": float(values.mean()),
                "std": float(values.std()),
                "n_seeds": len(values),
                "episodes": episodes,
                "values": values.tolist(),
            }
        )
    return rows


test_matrix.__test__ = False  # keep pytest from collecting it when imported


class Trainer:
    """Sequential coach loop for one :class:`RunConfig`."""

    def __init__(self, config: RunConfig):
        self.config = config.validate()
        t = config.trainer
        self.env_config = config.env.build()
        self.env = GridButtonsEnv(self.env_config)
        self.behavior = t.behavior
        seed = t.seed
        self.act_rng = substream(seed, "act")
        self.mask_rng = substream(seed, "mask")
        self.crash_rng = substream(seed, "crash")
        self.replay_rng = substream(seed, "replay")
        self.eval_mask_rng = substream(seed, "eval", 0)
        self.eval_crash_rng = substream(seed, "eval", 1)
        self.learner = Learner.create(
            config.learner,
            substream(seed, "init"),
            self.env.n_agents,
            self.env.n_actions,
            self.env.obs_dim,
            self.env.state_dim,
            crash_behavior=self.behavior,
            noop_action=self.env.noop_action,
        )
        self.buffer = ReplayBuffer(config.learner.buffer_size)
        self.coach = Coach(config.coach.build())
        self.env_steps = 0
        self.steps_since_update = 0
        self.episodes = 0
        self.rows = []
        self.records = []
        self.keep_records = False

    def sample_mask(self, alpha):
        t = self.config.trainer
        n = self.env.n_agents
        if t.resample:
            return sample_crash_mask_resampled(n, alpha, self.mask_rng, t.resample_max_tries)
        return sample_crash_mask(n, alpha, self.mask_rng)

    def train_episode(self, alpha):
        mask = self.sample_mask(alpha)
        eps = self.learner.epsilon(self.env_steps / self.config.trainer.total_steps)
        ep, _ = rollout(self.env, self.learner.params.agent, mask, self.behavior, eps, self.act_rng, self.crash_rng)
        ep.alpha = alpha
        if self.keep_records:
            self.records.append(ep)
        self.buffer.add(ep)
        self.env_steps += ep.length
        self.steps_since_update += ep.length
        self.episodes += 1
        losses = []
        c = self.config.learner
        while self.steps_since_update >= c.update_interval:
            self.steps_since_update -= c.update_interval
            if self.buffer.can_sample(c.batch_size):
                losses.append(self.learner.update(self.buffer.sample(c.batch_size, self.replay_rng)))
        return ep, losses, eps

    def measure(self, alpha, block):
        """Performance ``e_t`` for the round that just finished."""
        t = self.config.trainer
        if t.eval_source == "training":
            return float(np.mean([ep.success for ep in block]))
        masks = [sample_crash_mask(self.env.n_agents, alpha, self.eval_mask_rng) for _ in range(t.eval_episodes)]
        outcomes = _greedy_outcomes(self.env, self.learner.params.agent, masks, self.behavior, self.eval_crash_rng)
        return float(np.mean([o[0] for o in outcomes]))

    def run_round(self):
        t = self.config.trainer
        started = time.perf_counter()
        alpha = self.coach.alpha
        block, losses, eps = [], [], 0.0
        for _ in range(t.eval_every):
            if self.env_steps >= t.total_steps:
                break
            ep, ep_losses, eps = self.train_episode(alpha)
            block.append(ep)
            losses.extend(ep_losses)
        e_t = self.measure(alpha, block)
        row = metrics_io.TrainingLogRow(
            round=len(self.rows),
            env_steps=self.env_steps,
            alpha=alpha,
            e=e_t,
            loss=float(np.mean(losses)) if losses else 0.0,
            epsilon=eps,
            wall_ms=(time.perf_counter() - started) * 1000.0 if t.record_wall_clock else 0.0,
        )
        self.rows.append(row)
        self.coach.observe(e_t)
        return row

    def run(self):
        # tiny matrices: BLAS threading only adds contention
        with threadpool_limits(1):
            return self._run()

    def _run(self):
        t = self.config.trainer
        while self.env_steps < t.total_steps:
            row = self.run_round()
            if row.round % 20 == 0:
                log.info(
                    "round %d steps %d alpha %.4f e %.3f loss %.4f eps %.3f",
                    row.round, row.env_steps, row.alpha, row.e, row.loss, row.epsilon,
                )
        return self.learner.params


def run_training(config, out_dir=None, write=True):
    """Train to completion; returns a :class:`TrainingResult`.

    With ``write`` the training log and final checkpoint are written to
    ``out_dir`` (default: the config's ``trainer.out_dir``). On a numeric
    failure the last good parameters are saved before re-raising.
    """
    trainer = Trainer(config)
    out = Path(out_dir if out_dir is not None else config.trainer.out_dir)
    meta = {"env": trainer.env_config.to_dict(), "mixer": config.learner.mixer}
    try:
        params = trainer.run()
    except NumericFailureError:
        if write:
            out.mkdir(parents=True, exist_ok=True)
            metrics_io.save_checkpoint(trainer.learner.params, out / "last_good.ckpt", meta=meta)
            metrics_io.write_training_log(trainer.rows, out / "training_log.csv")
        raise
    result = TrainingResult(params, trainer.rows, trainer.env_config)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        result.checkpoint_path = out / "final.ckpt"
        result.log_path = out / "training_log.csv"
        metrics_io.save_checkpoint(params, result.checkpoint_path, meta=meta)
        metrics_io.write_training_log(trainer.rows, result.log_path)
    return result


def sweep(betas, rhos, base_config, seeds=(0,), rates=(0.01, 0.05, 0.10), episodes=128, out_dir=None,
          behavior=None):
    """Grid search over adaptive ``(beta, rho)``; one train+test-matrix per cell.

    Seeds are held fixed across cells. Returns one row per ``(beta, rho, rate)``.
    """
    betas, rhos, seeds = list(betas), list(rhos), list(seeds)
    if not betas or not rhos or not seeds:
        raise ParameterDomainError("sweep grid and seed list must be nonempty")
    behavior = behavior or base_config.trainer.behavior
    root = Path(out_dir) if out_dir is not None else None
    table = []
    for beta in betas:
        for rho in rhos:
            cell = f"beta{beta:g}_rho{rho:g}"
            results = []
            for seed in seeds:
                cfg = base_config.replace(coach__strategy="adaptive", coach__beta=beta, coach__rho=rho,
                                          trainer__seed=seed)
                cell_dir = root / cell / f"seed{seed}" if root is not None else None
                results.append(run_training(cfg, out_dir=cell_dir, write=cell_dir is not None))
            for row in test_matrix(results, rates, episodes, seed=0, behavior=behavior):
                table.append({"beta": beta, "rho": rho, **row})
    if root is not None:
        metrics_io.write_sweep_csv(table, root / "sweep.csv")
    return table
