"""Value-decomposition Q-learning written directly in numpy.

One agent network is shared by all agents (an agent-id one-hot is appended
to every observation). Per-agent Q-values of the executed actions are
combined into a team value ``Q_tot`` by a mixer:

* ``vdn``:  plain sum of the agent values;
* ``qmix``: a two-layer monotone network whose weights are produced from
  the global state by hypernetworks and passed through ``abs``.

The TD loss ``mean((y - Q_tot)^2)`` is differentiated by hand. Everything
runs in float64 so gradients can be checked against finite differences.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .episode import Transitions
from .errors import NumericFailureError, ParameterDomainError

MIXERS = ("vdn", "qmix")


def _linear_init(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=fan_out)
    return W, b


def _relu(x):
    return np.maximum(x, 0.0)


def _elu(x):
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(x):
    return np.where(x > 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


# ---------------------------------------------------------------------------
# agent network
# ---------------------------------------------------------------------------


@dataclass
class AgentNet:
    """Feedforward Q-network: input -> hidden -> hidden -> one value per action."""

    params: dict
    n_agents: int
    n_actions: int
    obs_dim: int
    use_prev_action: bool = False

    @classmethod
    def init(cls, rng, n_agents, n_actions, obs_dim, hidden=64, use_prev_action=False):
        in_dim = obs_dim + n_agents + (n_actions if use_prev_action else 0)
        W1, b1 = _linear_init(rng, in_dim, hidden)
        W2, b2 = _linear_init(rng, hidden, hidden)
        W3, b3 = _linear_init(rng, hidden, n_actions)
        params = {"W1": W1, "b1": b1, "W2": W2, "b2": b2, "W3": W3, "b3": b3}
        return cls(params, n_agents, n_actions, obs_dim, use_prev_action)

    @property
    def input_dim(self):
        return self.obs_dim + self.n_agents + (self.n_actions if self.use_prev_action else 0)

    @property
    def hidden(self):
        return self.params["W1"].shape[1]

    def build_inputs(self, obs, prev_actions=None):
        """Stack per-agent inputs for a ``(B, n, obs_dim)`` observation batch.

        Returns a ``(B * n, input_dim)`` matrix in row-major (batch, agent) order.
        """
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim == 2:
            obs = obs[None]
        B, n, d = obs.shape
        if n != self.n_agents or d != self.obs_dim:
            raise ParameterDomainError(
                f"observation batch shape {obs.shape[1:]} does not match ({self.n_agents}, {self.obs_dim})"
            )
        X = np.zeros((B, n, self.input_dim))
        X[:, :, :d] = obs
        X[:, np.arange(n), d + np.arange(n)] = 1.0
        if self.use_prev_action and prev_actions is not None:
            prev = np.asarray(prev_actions).reshape(B, n)
            b_idx, a_idx = np.nonzero(prev >= 0)
            X[b_idx, a_idx, d + n + prev[b_idx, a_idx]] = 1.0
        return X.reshape(B * n, self.input_dim)

    def forward(self, X):
        p = self.params
        z1 = X @ p["W1"] + p["b1"]
        h1 = _relu(z1)
        z2 = h1 @ p["W2"] + p["b2"]
        h2 = _relu(z2)
        q = h2 @ p["W3"] + p["b3"]
        return q, (X, z1, h1, z2, h2)

    def backward(self, cache, dq):
        p = self.params
        X, z1, h1, z2, h2 = cache
        g = {"W3": h2.T @ dq, "b3": dq.sum(axis=0)}
        dz2 = (dq @ p["W3"].T) * (z2 > 0.0)
        g["W2"] = h1.T @ dz2
        g["b2"] = dz2.sum(axis=0)
        dz1 = (dz2 @ p["W2"].T) * (z1 > 0.0)
        g["W1"] = X.T @ dz1
        g["b1"] = dz1.sum(axis=0)
        return g

    def q_batch(self, obs, prev_actions=None):
        """Q-values shaped ``(B, n, n_actions)``."""
        obs = np.asarray(obs, dtype=np.float64)
        B = 1 if obs.ndim == 2 else obs.shape[0]
        q, _ = self.forward(self.build_inputs(obs, prev_actions))
        return q.reshape(B, self.n_agents, self.n_actions)

    def copy(self):
        return AgentNet(
            {k: v.copy() for k, v in self.params.items()},
            self.n_agents,
            self.n_actions,
            self.obs_dim,
            self.use_prev_action,
        )


def q_values(net, observation, agent_id, prev_action=None):
    """Per-action values of one agent for one observation."""
    observation = np.asarray(observation, dtype=np.float64).reshape(-1)
    if observation.shape[0] != net.obs_dim:
        raise ParameterDomainError(
            f"observation has {observation.shape[0]} entries, network expects {net.obs_dim}"
        )
    if not 0 <= agent_id < net.n_agents:
        raise ParameterDomainError(f"agent_id {agent_id} out of range")
    x = np.zeros(net.input_dim)
    x[: net.obs_dim] = observation
    x[net.obs_dim + agent_id] = 1.0
    if net.use_prev_action and prev_action is not None and prev_action >= 0:
        x[net.obs_dim + net.n_agents + prev_action] = 1.0
    q, _ = net.forward(x[None])
    return q[0]


# ---------------------------------------------------------------------------
# mixers
# ---------------------------------------------------------------------------


@dataclass
class Mixer:
    variant: str
    params: dict
    n_agents: int
    state_dim: int
    embed: int = 32

    @classmethod
    def init(cls, rng, variant, n_agents, state_dim, embed=32):
        if variant not in MIXERS:
            raise ParameterDomainError(f"unknown mixer {variant!r}; expected one of {MIXERS}")
        if variant == "vdn":
            return cls("vdn", {}, n_agents, state_dim, embed)
        w1_W, w1_b = _linear_init(rng, state_dim, n_agents * embed)
        b1_W, b1_b = _linear_init(rng, state_dim, embed)
        wf_W, wf_b = _linear_init(rng, state_dim, embed)
        v1_W, v1_b = _linear_init(rng, state_dim, embed)
        v2_W, v2_b = _linear_init(rng, embed, 1)
        params = {
            "w1_W": w1_W, "w1_b": w1_b,
            "b1_W": b1_W, "b1_b": b1_b,
            "wf_W": wf_W, "wf_b": wf_b,
            "v1_W": v1_W, "v1_b": v1_b,
            "v2_W": v2_W, "v2_b": v2_b,
        }
        return cls("qmix", params, n_agents, state_dim, embed)

    def forward(self, qs, states):
        """Team values for ``qs`` of shape ``(B, n)`` and states ``(B, state_dim)``."""
        if self.variant == "vdn":
            return qs.sum(axis=1), None
        p = self.params
        B, n = qs.shape
        E = self.embed
        z1 = states @ p["w1_W"] + p["w1_b"]
        w1 = np.abs(z1).reshape(B, n, E)
        zb = states @ p["b1_W"] + p["b1_b"]
        pre = np.einsum("bn,bne->be", qs, w1) + zb
        hidden = _elu(pre)
        zf = states @ p["wf_W"] + p["wf_b"]
        wf = np.abs(zf)
        zv = states @ p["v1_W"] + p["v1_b"]
        hv = _relu(zv)
        v = hv @ p["v2_W"] + p["v2_b"]
        qtot = (hidden * wf).sum(axis=1) + v[:, 0]
        return qtot, (qs, states, z1, w1, pre, hidden, zf, wf, zv, hv)

    def backward(self, cache, dqtot):
        """Returns ``(param_grads, dqs)`` for upstream gradient ``dqtot`` of shape ``(B,)``."""
        if self.variant == "vdn":
            return {}, None
        p = self.params
        qs, states, z1, w1, pre, hidden, zf, wf, zv, hv = cache
        B, n = qs.shape
        d = dqtot[:, None]
        dzf = d * hidden * np.sign(zf)
        dpre = d * wf * _elu_grad(pre)
        dqs = np.einsum("be,bne->bn", dpre, w1)
        dz1 = (qs[:, :, None] * dpre[:, None, :]).reshape(B, -1) * np.sign(z1)
        dzv = (d @ p["v2_W"].T) * (zv > 0.0)
        g = {
            "w1_W": states.T @ dz1,
            "w1_b": dz1.sum(axis=0),
            "b1_W": states.T @ dpre,
            "b1_b": dpre.sum(axis=0),
            "wf_W": states.T @ dzf,
            "wf_b": dzf.sum(axis=0),
            "v1_W": states.T @ dzv,
            "v1_b": dzv.sum(axis=0),
            "v2_W": hv.T @ d,
            "v2_b": d.sum(axis=0),
        }
        return g, dqs

    def mixing_weights(self, state):
        """Effective non-negative weights ``(w1, w_final)`` for one state."""
        if self.variant == "vdn":
            return np.ones((self.n_agents, 1)), np.ones(1)
        s = np.asarray(state, dtype=np.float64).reshape(1, -1)
        p = self.params
        w1 = np.abs(s @ p["w1_W"] + p["w1_b"]).reshape(self.n_agents, self.embed)
        wf = np.abs(s @ p["wf_W"] + p["wf_b"]).reshape(self.embed)
        return w1, wf

    def copy(self):
        return Mixer(self.variant, {k: v.copy() for k, v in self.params.items()}, self.n_agents, self.state_dim, self.embed)


def mix(mixer, chosen_qs, global_state):
    """``Q_tot`` for one joint choice of per-agent values."""
    qs = np.asarray(chosen_qs, dtype=np.float64).reshape(1, -1)
    if qs.shape[1] != mixer.n_agents:
        raise ParameterDomainError(f"expected {mixer.n_agents} agent values, got {qs.shape[1]}")
    s = np.asarray(global_state, dtype=np.float64).reshape(1, -1)
    if mixer.variant != "vdn" and s.shape[1] != mixer.state_dim:
        raise ParameterDomainError(f"expected state of size {mixer.state_dim}, got {s.shape[1]}")
    qtot, _ = mixer.forward(qs, s)
    return float(qtot[0])


# ---------------------------------------------------------------------------
# parameters, loss and optimisation
# ---------------------------------------------------------------------------


@dataclass
class LearnerParams:
    agent: AgentNet
    mixer: Mixer
    target_agent: AgentNet
    target_mixer: Mixer
    gamma: float = 0.99
    target_period: int = 200
    updates: int = 0

    @classmethod
    def init(
        cls,
        rng,
        n_agents,
        n_actions,
        obs_dim,
        state_dim,
        mixer="qmix",
        hidden=64,
        embed=32,
        gamma=0.99,
        target_period=200,
        use_prev_action=False,
    ):
        agent = AgentNet.init(rng, n_agents, n_actions, obs_dim, hidden, use_prev_action)
        mix_net = Mixer.init(rng, mixer, n_agents, state_dim, embed)
        return cls(agent, mix_net, agent.copy(), mix_net.copy(), gamma, target_period, 0)

    def online(self):
        """Flat name -> array view of the trainable parameters."""
        out = {f"agent.{k}": v for k, v in self.agent.params.items()}
        out.update({f"mixer.{k}": v for k, v in self.mixer.params.items()})
        return out

    def named_arrays(self):
        """Every array, online and target, in a fixed order."""
        out = self.online()
        out.update({f"target_agent.{k}": v for k, v in self.target_agent.params.items()})
        out.update({f"target_mixer.{k}": v for k, v in self.target_mixer.params.items()})
        return out

    def with_online(self, flat):
        """Shallow copy with the online arrays replaced by ``flat``."""
        agent = AgentNet(
            {k[len("agent."):]: v for k, v in flat.items() if k.startswith("agent.")},
            self.agent.n_agents,
            self.agent.n_actions,
            self.agent.obs_dim,
            self.agent.use_prev_action,
        )
        mixer = Mixer(
            self.mixer.variant,
            {k[len("mixer."):]: v for k, v in flat.items() if k.startswith("mixer.")},
            self.mixer.n_agents,
            self.mixer.state_dim,
            self.mixer.embed,
        )
        return LearnerParams(agent, mixer, self.target_agent, self.target_mixer, self.gamma, self.target_period, self.updates)

    def refresh_target(self):
        self.target_agent = self.agent.copy()
        self.target_mixer = self.mixer.copy()

    def snapshot(self):
        return copy.deepcopy(self)


def td_targets(params, batch, crash_target="max", noop_action=4):
    """``y = r + gamma * (1 - done) * Q_tot_target(next agent values, s')``.

    Each uncrashed agent contributes its greedy target value. With
    ``crash_target="max"`` crashed agents do too; ``"freeze"`` uses the
    crashed agent's no-op value and ``"random"`` its mean over actions,
    i.e. the value of what a crashed agent will actually do.
    """
    agent = params.target_agent
    B = len(batch)
    X_next = agent.build_inputs(batch.next_obs, batch.actions)
    q_next, _ = agent.forward(X_next)
    q_next = q_next.reshape(B, agent.n_agents, agent.n_actions)
    values = q_next.max(axis=2)
    if crash_target == "freeze":
        values = np.where(batch.crashed, q_next[:, :, noop_action], values)
    elif crash_target == "random":
        values = np.where(batch.crashed, q_next.mean(axis=2), values)
    elif crash_target != "max":
        raise ParameterDomainError(f"unknown crash_target {crash_target!r}")
    qtot_next, _ = params.target_mixer.forward(values, batch.next_states)
    return batch.rewards + params.gamma * (1.0 - batch.dones) * qtot_next


def td_loss_and_grads(params, batch, mask_crashed=False, targets=None, crash_target="max", noop_action=4):
    """Mean squared TD error and its gradient for every online parameter.

    With ``mask_crashed`` the rows of crashed agents send no gradient into
    the agent network (their values still enter the mix).
    """
    if len(batch) == 0:
        raise ParameterDomainError("empty batch")
    agent, mixer = params.agent, params.mixer
    B, n, A = len(batch), agent.n_agents, agent.n_actions
    y = td_targets(params, batch, crash_target, noop_action) if targets is None else targets

    X = agent.build_inputs(batch.obs, batch.prev_actions)
    q, acache = agent.forward(X)
    q = q.reshape(B, n, A)
    chosen = np.take_along_axis(q, batch.actions[:, :, None], axis=2)[:, :, 0]
    qtot, mcache = mixer.forward(chosen, batch.states)
    err = qtot - y
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise NumericFailureError(
            f"non-finite TD loss (max |Q_tot|={np.nanmax(np.abs(qtot)):.3g}, max |y|={np.nanmax(np.abs(y)):.3g})"
        )

    dqtot = (2.0 / B) * err
    mgrads, dchosen = mixer.backward(mcache, dqtot)
    if dchosen is None:
        dchosen = np.broadcast_to(dqtot[:, None], (B, n))
    if mask_crashed:
        dchosen = np.where(batch.crashed, 0.0, dchosen)
    dq = np.zeros((B, n, A))
    np.put_along_axis(dq, batch.actions[:, :, None], dchosen[:, :, None], axis=2)
    agrads = agent.backward(acache, dq.reshape(B * n, A))

    grads = {f"agent.{k}": v for k, v in agrads.items()}
    grads.update({f"mixer.{k}": v for k, v in mgrads.items()})
    return loss, grads


def epsilon_greedy(qs, epsilon, rng):
    """Uniform action with probability ``epsilon``, else argmax (lowest index on ties)."""
    if not 0.0 <= epsilon <= 1.0:
        raise ParameterDomainError(f"epsilon must lie in [0, 1], got {epsilon}")
    qs = np.asarray(qs)
    if rng.random() < epsilon:
        return int(rng.integers(qs.shape[-1]))
    return int(np.argmax(qs))


def epsilon_greedy_joint(q, epsilon, rng):
    """Vectorised :func:`epsilon_greedy` over the rows of ``q`` (``(n, A)``)."""
    greedy = np.argmax(q, axis=1)
    if epsilon <= 0.0:
        return greedy
    explore = rng.random(q.shape[0]) < epsilon
    randoms = rng.integers(q.shape[1], size=q.shape[0])
    return np.where(explore, randoms, greedy)


@dataclass
class RMSPropState:
    """Running mean of squared gradients, keyed like the parameter dict."""

    square_avg: dict = field(default_factory=dict)
    steps: int = 0


def rmsprop_step(param, grad, square_avg, lr, alpha=0.99, eps=1e-5):
    """One RMSProp update: returns ``(new_param, new_square_avg)``."""
    sq = alpha * square_avg + (1.0 - alpha) * grad * grad
    return param - lr * grad / (np.sqrt(sq) + eps), sq


def clip_grad_norm(grads, max_norm):
    """Scale gradients so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, total


def apply_gradients(params, grads, learning_rate, optimizer_state, alpha=0.99, eps=1e-5):
    """RMSProp over the online parameters.

    Returns ``(new_params, new_optimizer_state)``; the inputs are not mutated.
    Parameters without a gradient entry are left as they are.
    """
    online = params.online()
    names = [k for k in online if k in grads]
    if not names:
        return params, RMSPropState(dict(optimizer_state.square_avg), optimizer_state.steps + 1)
    sizes = [online[k].size for k in names]
    flat_p = np.concatenate([online[k].ravel() for k in names])
    flat_g = np.concatenate([np.asarray(grads[k], dtype=np.float64).ravel() for k in names])
    flat_sq = np.concatenate(
        [optimizer_state.square_avg[k].ravel() if k in optimizer_state.square_avg else np.zeros(online[k].size)
         for k in names]
    )
    new_p, new_sq = rmsprop_step(flat_p, flat_g, flat_sq, learning_rate, alpha, eps)
    if not np.all(np.isfinite(new_p)):
        bad = names[int(np.searchsorted(np.cumsum(sizes), np.argmin(np.isfinite(new_p)), side="right"))]
        raise NumericFailureError(f"non-finite update for parameter {bad}")
    split = np.cumsum(sizes)[:-1]
    new_online = dict(online)
    sq_out = dict(optimizer_state.square_avg)
    for k, p_part, s_part in zip(names, np.split(new_p, split), np.split(new_sq, split)):
        new_online[k] = p_part.reshape(online[k].shape)
        sq_out[k] = s_part.reshape(online[k].shape)
    return params.with_online(new_online), RMSPropState(sq_out, optimizer_state.steps + 1)


# ---------------------------------------------------------------------------
# replay and the learner facade
# ---------------------------------------------------------------------------


class ReplayBuffer:
    """Ring buffer of episodes, each stored pre-flattened into transitions."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ParameterDomainError("replay capacity must be >= 1")
        self.capacity = int(capacity)
        self._items = []
        self._next = 0

    def __len__(self):
        return len(self._items)

    def add(self, episode):
        item = episode if isinstance(episode, Transitions) else Transitions.from_episode(episode)
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def can_sample(self, batch_size):
        return len(self._items) >= batch_size

    def sample(self, batch_size, rng):
        if not self.can_sample(batch_size):
            raise ParameterDomainError(
                f"buffer holds {len(self._items)} episodes, need {batch_size}"
            )
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        return Transitions.concat(self._items[i] for i in sorted(idx))


@dataclass
class LearnerConfig:
    mixer: str = "qmix"
    hidden: int = 64
    embed: int = 32
    gamma: float = 0.99
    lr: float = 5e-4
    rms_alpha: float = 0.99
    rms_eps: float = 1e-5
    grad_clip: float = 10.0
    buffer_size: int = 5000
    batch_size: int = 32
    target_period: int = 200
    update_interval: int = 10
    eps_start: float = 1.0
    eps_finish: float = 0.05
    eps_anneal_fraction: float = 0.1
    use_prev_action: bool = False
    mask_crashed: bool = False
    crash_aware_target: bool = True

    def validate(self):
        if self.mixer not in MIXERS:
            raise ParameterDomainError(f"mixer must be one of {MIXERS}, got {self.mixer!r}")
        for name in ("hidden", "embed", "buffer_size", "batch_size", "target_period", "update_interval"):
            if getattr(self, name) < 1:
                raise ParameterDomainError(f"{name} must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ParameterDomainError(f"gamma must lie in [0, 1), got {self.gamma}")
        for name in ("eps_start", "eps_finish", "eps_anneal_fraction", "rms_alpha"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterDomainError(f"{name} must lie in [0, 1], got {v}")
        if self.lr <= 0 or self.rms_eps <= 0:
            raise ParameterDomainError("lr and rms_eps must be positive")
        if self.grad_clip < 0:
            raise ParameterDomainError("grad_clip must be >= 0")


class Learner:
    """Owns parameters, optimizer state and the target-refresh schedule."""

    def __init__(self, config, params, crash_behavior="freeze", noop_action=4):
        self.config = config
        self.params = params
        self.opt_state = RMSPropState()
        self.crash_target = str(getattr(crash_behavior, "value", crash_behavior)) if config.crash_aware_target else "max"
        self.noop_action = noop_action

    @classmethod
    def create(cls, config, rng, n_agents, n_actions, obs_dim, state_dim, crash_behavior="freeze", noop_action=4):
        config.validate()
        params = LearnerParams.init(
            rng,
            n_agents,
            n_actions,
            obs_dim,
            state_dim,
            mixer=config.mixer,
            hidden=config.hidden,
            embed=config.embed,
            gamma=config.gamma,
            target_period=config.target_period,
            use_prev_action=config.use_prev_action,
        )
        return cls(config, params, crash_behavior, noop_action)

    def epsilon(self, progress):
        """Linear anneal from ``eps_start`` to ``eps_finish`` over the first fraction of training."""
        c = self.config
        if c.eps_anneal_fraction <= 0.0:
            return c.eps_finish
        frac = min(1.0, progress / c.eps_anneal_fraction)
        return c.eps_start + frac * (c.eps_finish - c.eps_start)

    def act(self, obs, prev_actions, epsilon, rng):
        q = self.params.agent.q_batch(obs, None if prev_actions is None else np.asarray(prev_actions)[None])[0]
        return epsilon_greedy_joint(q, epsilon, rng)

    def update(self, batch):
        c = self.config
        loss, grads = td_loss_and_grads(
            self.params, batch, mask_crashed=c.mask_crashed, crash_target=self.crash_target, noop_action=self.noop_action
        )
        grads, _ = clip_grad_norm(grads, c.grad_clip)
        updates = self.params.updates + 1
        self.params, self.opt_state = apply_gradients(
            self.params, grads, c.lr, self.opt_state, c.rms_alpha, c.rms_eps
        )
        self.params.updates = updates
        if updates % self.params.target_period == 0:
            self.params.refresh_target()
        return loss
