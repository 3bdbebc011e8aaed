"""Learning agents: MA-DDPG, decentralized DDPG, independent DQN, baselines.

Action encoding for actor/critic: one-hot offload flag (2), one-hot channel
(C), one-hot power level (P), mining share (1). Actors output logits for
the three discrete heads and a sigmoid share. Execution takes the argmax
of noisy logits. Actor training uses a straight-through estimator: the
critic sees the hard one-hot, and the gradient flows back through the
softmax of the logits.
"""

import numpy as np

from .env import Action, mining_latency, mining_utility, offload_utility
from .game import phi_grid, strategy_set
from .nn import Adam, Mlp, soft_update


class BufferUnderflow(RuntimeError):
    pass


class NumericFailure(FloatingPointError):
    """A network parameter became NaN or infinite."""


class ActionSpace:
    def __init__(self, n_channels, n_powers, phi_points=3):
        self.n_channels = n_channels
        self.n_powers = n_powers
        self.sizes = (2, n_channels, n_powers)
        self.dim = 2 + n_channels + n_powers + 1
        self.phis = phi_grid(phi_points)
        self.grid = [Action(0, 0, 0, phi) for phi in self.phis] + [
            Action(1, k, p, phi) for k in range(n_channels) for p in range(n_powers) for phi in self.phis]

    @property
    def heads(self):
        return [(s, "identity") for s in self.sizes] + [(1, "sigmoid")]

    def encode(self, act: Action):
        v = np.zeros(self.dim)
        v[act.offload] = 1.0
        v[2 + act.channel] = 1.0
        v[2 + self.n_channels + act.power_idx] = 1.0
        v[-1] = act.mine_share
        return v

    def decode(self, vec):
        idx, start = [], 0
        for s in self.sizes:
            idx.append(int(np.argmax(vec[start:start + s])))
            start += s
        return Action(idx[0], idx[1], idx[2], float(np.clip(vec[-1], 0.0, 1.0)))

    def valid(self, act: Action):
        return (act.offload in (0, 1) and 0 <= act.channel < self.n_channels
                and 0 <= act.power_idx < self.n_powers and 0.0 <= act.mine_share <= 1.0)


class ReplayBuffer:
    """Ring buffer of slot records; uniform sampling over the filled region."""

    def __init__(self, capacity, n_agents, obs_dim, act_dim):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, n_agents, obs_dim))
        self.act = np.zeros((capacity, n_agents, act_dim))
        self.rew = np.zeros((capacity, n_agents))
        self.next_obs = np.zeros((capacity, n_agents, obs_dim))
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, obs, act, rew, next_obs, done):
        i = self.cursor
        self.obs[i], self.act[i], self.rew[i] = obs, act, rew
        self.next_obs[i], self.done[i] = next_obs, float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch, rng):
        if self.size < batch:
            raise BufferUnderflow(f"{self.size} records, batch of {batch}")
        idx = rng.integers(0, self.size, size=batch)
        return self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx], self.done[idx]


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check(*nets):
    for net in nets:
        if not net.all_finite():
            raise NumericFailure("non-finite network parameters")


class AgentNets:
    """Actor and critic, each with a target copy and an optimizer."""

    def __init__(self, obs_dim, critic_in, space: ActionSpace, hyper, rng, critic=None):
        hidden = list(hyper.hidden)
        self.actor = Mlp([obs_dim] + hidden + [space.dim], space.heads, rng=rng, out_scale=0.1)
        self.actor_target = self.actor.copy()
        self.actor_opt = Adam([self.actor.flat], hyper.lr_actor)
        if critic is None:
            self.critic = Mlp([critic_in] + hidden + [1], rng=rng)
            self.critic_target = self.critic.copy()
            self.critic_opt = Adam([self.critic.flat], hyper.lr_critic)
        else:
            self.critic, self.critic_target, self.critic_opt = critic

    def nets(self):
        return {"actor": self.actor, "actor_target": self.actor_target,
                "critic": self.critic, "critic_target": self.critic_target}


def actor_act(agent: AgentNets, obs, noise_scale, rng, space: ActionSpace):
    """Deterministic actor output plus Gaussian noise, projected to a valid Action."""
    y = agent.actor.forward(obs)[0][0]
    idx, start = [], 0
    for s in space.sizes:
        logits = y[start:start + s]
        if noise_scale > 0:
            logits = logits + noise_scale * rng.normal(size=s)
        idx.append(int(np.argmax(logits)))
        start += s
    phi = y[-1] + (noise_scale * rng.normal() if noise_scale > 0 else 0.0)
    return Action(idx[0], idx[1], idx[2], float(np.clip(phi, 0.0, 1.0)))


def _hard_encode(space, y):
    out = np.zeros_like(y)
    start = 0
    for s in space.sizes:
        k = np.argmax(y[:, start:start + s], axis=1)
        out[np.arange(len(y)), start + k] = 1.0
        start += s
    out[:, -1] = y[:, -1]
    return out


class MADDPG:
    """Per-agent actors on local observations; per-agent critics.

    With ``centralized=True`` each critic sees every agent's observation
    and action (MA-DDPG). With ``centralized=False`` it sees only its own
    (independent DDPG).
    """

    logit_reg = 1e-3

    def __init__(self, n_agents, obs_dim, space: ActionSpace, hyper, rng, centralized=True):
        self.n = n_agents
        self.obs_dim = obs_dim
        self.space = space
        self.hyper = hyper
        self.centralized = centralized
        critic_in = n_agents * (obs_dim + space.dim) if centralized else obs_dim + space.dim
        shared = None
        self.agents = []
        for _ in range(n_agents):
            agent = AgentNets(obs_dim, critic_in, space, hyper, rng, critic=shared)
            if hyper.shared_critic and shared is None:
                shared = (agent.critic, agent.critic_target, agent.critic_opt)
            self.agents.append(agent)

    def act(self, obs, noise_scale, rng):
        return [actor_act(a, o, noise_scale, rng, self.space) for a, o in zip(self.agents, obs)]

    def _critic_input(self, obs, act, i):
        b = len(obs)
        if self.centralized:
            return np.concatenate([obs.reshape(b, -1), act.reshape(b, -1)], axis=1)
        return np.concatenate([obs[:, i], act[:, i]], axis=1)

    def update(self, buffer, rng):
        return maddpg_update(self, buffer, self.hyper.batch_size, rng)

    def checkpoint(self):
        out = {}
        for i, a in enumerate(self.agents):
            for name, net in a.nets().items():
                out[f"agent{i}/{name}"] = net
        return out


def maddpg_update(model: MADDPG, buffer: ReplayBuffer, batch, rng):
    """One gradient step for every agent on a shared minibatch; returns [(actor_loss, critic_loss)]."""
    h, space = model.hyper, model.space
    obs, act, rew, next_obs, done = buffer.sample(batch, rng)
    b = len(obs)
    next_act = np.stack([_hard_encode(space, a.actor_target.forward(next_obs[:, j])[0])
                         for j, a in enumerate(model.agents)], axis=1)
    losses = []
    for i, ag in enumerate(model.agents):
        # critic
        if not (h.shared_critic and i > 0):
            x2 = model._critic_input(next_obs, next_act, i)
            q2 = ag.critic_target.forward(x2)[0][:, 0]
            y = rew[:, i] + h.gamma * (1.0 - done) * q2
            q, cache = ag.critic.forward(model._critic_input(obs, act, i))
            err = q[:, 0] - y
            critic_loss = float(np.mean(err * err))
            grads, _ = ag.critic.backward(cache, (2.0 / b) * err[:, None])
            ag.critic_opt.step([ag.critic.flatten(grads)])
        # actor, straight-through on the discrete heads
        out, acache = ag.actor.forward(obs[:, i])
        enc = _hard_encode(space, out)
        joint = act.copy()
        joint[:, i] = enc
        x = model._critic_input(obs, joint, i)
        q, ccache = ag.critic.forward(x)
        actor_loss = -float(np.mean(q))
        _, dx = ag.critic.backward(ccache, np.full((b, 1), -1.0 / b), param_grads=False)
        if model.centralized:
            off = model.n * model.obs_dim + i * space.dim
        else:
            off = model.obs_dim
        da = dx[:, off:off + space.dim]
        grad_out = np.zeros_like(out)
        start = 0
        for s in space.sizes:
            sl = slice(start, start + s)
            sm = _softmax(out[:, sl])
            g = da[:, sl]
            grad_out[:, sl] = sm * (g - (sm * g).sum(axis=1, keepdims=True))
            grad_out[:, sl] += (2.0 * model.logit_reg / b) * out[:, sl]
            start += s
        grad_out[:, -1] = da[:, -1]
        agrads, _ = ag.actor.backward(acache, grad_out)
        ag.actor_opt.step([ag.actor.flatten(agrads)])
        soft_update(ag.actor_target, ag.actor, h.tau)
        if not (h.shared_critic and i > 0):
            soft_update(ag.critic_target, ag.critic, h.tau)
        _check(ag.actor, ag.critic, ag.actor_target, ag.critic_target)
        losses.append((actor_loss, critic_loss))
    return losses


class IndependentDQN:
    """One Q-network per agent over the discretized action grid, local observations only."""

    def __init__(self, n_agents, obs_dim, space: ActionSpace, hyper, rng):
        self.n = n_agents
        self.space = space
        self.hyper = hyper
        n_act = len(space.grid)
        self.q = [Mlp([obs_dim] + list(hyper.hidden) + [n_act], rng=rng) for _ in range(n_agents)]
        self.q_target = [q.copy() for q in self.q]
        self.opt = [Adam([q.flat], hyper.lr_critic) for q in self.q]

    def act_indices(self, obs, eps, rng):
        out = []
        for q, o in zip(self.q, obs):
            if eps > 0 and rng.random() < eps:
                out.append(int(rng.integers(len(self.space.grid))))
            else:
                out.append(int(np.argmax(q.forward(o)[0][0])))
        return out

    def act(self, obs, eps, rng):
        return [self.space.grid[k] for k in self.act_indices(obs, eps, rng)]

    def update(self, buffer, rng):
        return [dqn_update(self, i, buffer, self.hyper.batch_size, rng) for i in range(self.n)]

    def checkpoint(self):
        out = {}
        for i, (q, t) in enumerate(zip(self.q, self.q_target)):
            out[f"agent{i}/q"] = q
            out[f"agent{i}/q_target"] = t
        return out


def dqn_update(model: IndependentDQN, i, buffer: ReplayBuffer, batch, rng):
    """Q-learning step for agent ``i``; buffer actions hold grid indices in column 0."""
    h = model.hyper
    obs, act, rew, next_obs, done = buffer.sample(batch, rng)
    b = len(obs)
    q_next = model.q_target[i].forward(next_obs[:, i])[0]
    y = rew[:, i] + h.gamma * (1.0 - done) * q_next.max(axis=1)
    q, cache = model.q[i].forward(obs[:, i])
    a = act[:, i, 0].astype(int)
    err = q[np.arange(b), a] - y
    grad = np.zeros_like(q)
    grad[np.arange(b), a] = (2.0 / b) * err
    grads, _ = model.q[i].backward(cache, grad)
    model.opt[i].step([model.q[i].flatten(grads)])
    soft_update(model.q_target[i], model.q[i], h.tau)
    _check(model.q[i], model.q_target[i])
    return float(np.mean(err * err))


BASELINES = ("random", "all_local", "all_offload", "greedy_myopic")


def _own_utility(env, i, act, others):
    dev, task = env.slot_devices[i], env.slot_tasks[i]
    w = env.weights
    j_off = offload_utility(dev, task, act, others, env.f_edge, w, env.channel)
    j_mine = mining_utility(mining_latency(dev, act, env.mining_params()), w)
    return w.w_off * j_off + w.w_mine * j_mine


def baseline_policy(kind, env, rng, space: ActionSpace = None):
    """Actions for every device in the env's current slot."""
    n, c = env.n_devices, env.channel.n_channels
    n_p = len(env.slot_devices[0].p_levels)
    if kind == "random":
        return [Action(int(rng.integers(2)), int(rng.integers(c)), int(rng.integers(n_p)),
                       float(rng.uniform())) for _ in range(n)]
    if kind == "all_local":
        return [Action(0, 0, 0, 1.0) for _ in range(n)]
    if kind == "all_offload":
        return [Action(1, int(rng.integers(c)), n_p - 1, 0.5) for _ in range(n)]
    if kind == "greedy_myopic":
        grid = space.grid if space is not None else strategy_set(env.slot_devices[0], env.channel, phi_grid(3))
        last = env.last_actions
        out = []
        for i in range(n):
            others = [(env.slot_devices[j], last[j]) for j in range(n) if j != i]
            vals = [_own_utility(env, i, a, others) for a in grid]
            out.append(grid[int(np.argmax(vals))])
        return out
    raise ValueError(f"unknown baseline {kind!r}")
