"""Seeded episodes, training runs, scheme comparisons and audits.

Everything here is a pure function of the config and its master seed.
Per-episode randomness (task sizes, per-slot channel gains, consensus
draws) comes from named streams keyed by episode index, so different
policies and schemes replay the same scenarios.
"""

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .agents import (
    BASELINES, ActionSpace, IndependentDQN, MADDPG, NumericFailure, ReplayBuffer, baseline_policy,
)
from .config import SimConfig
from .consensus import (
    Block, ConsensusParams, ROUND_LOG_COLUMNS, ReputationTable, run_round, throughput,
    update_reputation, vote_miners, write_round_log,
)
from .env import (
    Action, ChannelModel, EdgeDevice, Task, UtilityWeights, mining_latency, mining_utility,
    offload_utility, system_utility, task_outcomes,
)
from .nn import load_nets, save_nets
from .rng import Streams

METRICS_COLUMNS = ["episode", "seed", "policy", "mode", "scheme", "mean_j_sys", "mean_j_off",
                   "mean_j_mine", "mean_task_latency", "mean_energy", "consensus_latency",
                   "throughput", "status"]
CURVE_COLUMNS = ["episode", "step", "agent", "actor_loss", "critic_loss", "reward"]
COMPARISON_COLUMNS = ["scheme", "seed", "episodes", "mean_j_mine", "consensus_latency", "mean_j_sys"]
THROUGHPUT_COLUMNS = ["scheme", "load", "seed", "confirmed", "dropped", "rounds", "tps"]
AUDIT_COLUMNS = ["episode", "slot", "reported_j_sys", "recomputed_j_sys", "abs_diff"]


def workers_from_env(default=1):
    """Worker cap from ``TOBM_THREADS``."""
    raw = os.environ.get("TOBM_THREADS")
    if not raw:
        return default
    return max(1, int(raw))


def weights_of(cfg: SimConfig) -> UtilityWeights:
    w = cfg.weights
    return UtilityWeights(w.beta_t, w.beta_e, w.w_off, w.w_mine, w.decay, w.u_max)


def make_devices(cfg: SimConfig, rng):
    """Static device population; per-slot gains are filled in by the env."""
    d = cfg.devices
    levels = tuple(float(p) for p in d.p_levels_w)
    c = cfg.channel.n_channels
    return [EdgeDevice(i, float(rng.uniform(*d.f_loc_hz)), float(rng.uniform(*d.f_mine_hz)), levels,
                       d.kappa, tuple(float(g) for g in rng.uniform(*d.gain, size=c)))
            for i in range(cfg.sim.n_devices)]


class TobmEnv:
    """One cell of N devices sharing C channels and one chain.

    Observation per device: own task size / d_max, own per-channel gains
    scaled to [0, 1] over the gain range, last slot's offloader count per
    channel / N, and own last mining latency / timeout (capped at 1).
    """

    def __init__(self, cfg: SimConfig, seed=None, scheme=None):
        self.cfg = cfg
        self.seed = cfg.sim.seed if seed is None else int(seed)
        self.streams = Streams(self.seed)
        self.n_devices = cfg.sim.n_devices
        self.channel = ChannelModel(cfg.channel.n_channels, cfg.channel.bandwidth_hz, cfg.channel.noise_w)
        self.weights = weights_of(cfg)
        self.params = ConsensusParams.from_config(cfg.consensus)
        self.scheme = scheme or cfg.consensus.scheme
        self.k = cfg.group_size
        self.f_edge = cfg.devices.f_edge_hz
        self.block_bits = cfg.consensus.tx_count * cfg.consensus.tx_size_bits
        self.devices = make_devices(cfg, self.streams.get("devices"))
        self.obs_dim = 2 * self.channel.n_channels + 2
        self.space = ActionSpace(self.channel.n_channels, len(cfg.devices.p_levels_w), cfg.rl.phi_grid_points)

    def mining_params(self):
        return self.params.mining_params(self.block_bits, self.k)

    def reset(self, kind, episode):
        cfg, n, c = self.cfg, self.n_devices, self.channel.n_channels
        rng = self.streams.get(f"scenario-{kind}", episode)
        steps = cfg.sim.steps_per_episode
        self.sizes = rng.uniform(cfg.task.d_min_bits, cfg.task.d_max_bits, size=(steps, n))
        self.gains = rng.uniform(*cfg.devices.gain, size=(steps, n, c))
        self.cons_rng = self.streams.get(f"consensus-{kind}", episode)
        self.rep = ReputationTable(n)
        self.t = 0
        self.height = 0
        self.last_actions = [Action(0, 0, 0, 1.0)] * n
        self.occupancy = np.zeros(c)
        self.last_mining = np.zeros(n)
        self._load_slot()
        return self.observe()

    def _load_slot(self):
        t = self.t
        self.slot_devices = [replace(d, gains=tuple(float(g) for g in self.gains[t, i]))
                             for i, d in enumerate(self.devices)]
        self.slot_tasks = [Task(float(self.sizes[t, i]), self.cfg.task.cycles_per_bit)
                           for i in range(self.n_devices)]

    def observe(self):
        lo, hi = self.cfg.devices.gain
        n = self.n_devices
        obs = np.empty((n, self.obs_dim))
        obs[:, 0] = self.sizes[self.t] / self.cfg.task.d_max_bits
        obs[:, 1:1 + self.channel.n_channels] = (self.gains[self.t] - lo) / (hi - lo)
        obs[:, 1 + self.channel.n_channels:-1] = self.occupancy / n
        obs[:, -1] = self.last_mining
        return obs

    def step(self, actions):
        """Apply one slot; returns (next_obs, utilities, j_sys, done, info)."""
        n = self.n_devices
        for a, d in zip(actions, self.slot_devices):
            a.check(d, self.channel)
        w = self.weights
        j_off, t_used, e_used = task_outcomes(self.slot_devices, self.slot_tasks, actions,
                                              self.channel, self.f_edge, w)
        scheme = "pow" if self.scheme == "none" else self.scheme
        self.height += 1
        txs = tuple(range((self.height - 1) * self.params.tx_count, self.height * self.params.tx_count))
        block = Block(self.height, txs, self.block_bits)
        if scheme == "pow":
            group, manager = tuple(range(self.k)), 0
        else:
            group, manager = vote_miners(self.rep, self.params.n_users, self.k, self.cons_rng)
        rnd = run_round(scheme, block, group, manager, actions, self.slot_devices, self.params,
                        self.cons_rng, round_id=self.t)
        j_mine = np.zeros(n)
        if self.scheme != "none":
            for m, lat in zip(rnd.miners, rnd.miner_latency):
                j_mine[m] = mining_utility(lat, w)
        if scheme != "pow":
            self.rep = update_reputation(self.rep, rnd, w)
        for m, lat in zip(rnd.miners, rnd.miner_latency):
            self.last_mining[m] = min(lat / self.params.timeout_s, 1.0)
        util = w.w_off * j_off + w.w_mine * j_mine
        j_sys = system_utility(j_off, j_mine, w)
        occ = np.zeros(self.channel.n_channels)
        for a in actions:
            if a.offload:
                occ[a.channel] += 1
        info = {"j_off": j_off, "j_mine": j_mine, "t_used": t_used, "e_used": e_used, "round": rnd,
                "devices": self.slot_devices, "tasks": self.slot_tasks, "actions": list(actions)}
        self.occupancy = occ
        self.last_actions = list(actions)
        self.t += 1
        done = self.t >= self.cfg.sim.steps_per_episode
        if not done:
            self._load_slot()
            obs = self.observe()
        else:
            obs = self.observe_terminal()
        return obs, util, j_sys, done, info

    def observe_terminal(self):
        # the final next-observation reuses the last slot's scenario with updated history
        self.t -= 1
        obs = self.observe()
        self.t += 1
        return obs


class BaselinePolicy:
    def __init__(self, kind):
        if kind not in BASELINES:
            raise ValueError(f"unknown baseline {kind!r}")
        self.name = kind

    def actions(self, env, obs, rng):
        acts = baseline_policy(self.name, env, rng, env.space)
        return acts, np.stack([env.space.encode(a) for a in acts])


class ActorPolicy:
    def __init__(self, model: MADDPG, name="maddpg"):
        self.model = model
        self.name = name
        self.noise = 0.0

    def actions(self, env, obs, rng):
        acts = self.model.act(obs, self.noise, rng)
        return acts, np.stack([env.space.encode(a) for a in acts])


class DqnPolicy:
    def __init__(self, model: IndependentDQN, name="dqn"):
        self.model = model
        self.name = name
        self.noise = 0.0

    def actions(self, env, obs, rng):
        idx = self.model.act_indices(obs, self.noise, rng)
        return [env.space.grid[k] for k in idx], np.array(idx, dtype=float)[:, None]


@dataclass
class Trainer:
    """Replay buffer, learner and step counter shared across episodes."""

    learner: object
    buffer: ReplayBuffer
    warmup: int
    update_every: int
    rng: np.random.Generator
    individual: bool = False
    step: int = 0
    losses: list = field(default_factory=list)

    def record(self, obs, stored, util, j_sys, next_obs, done):
        n = len(util)
        rew = util if self.individual else np.full(n, j_sys)
        self.buffer.add(obs, stored, rew, next_obs, done)
        self.step += 1
        if len(self.buffer) >= max(self.warmup, self.buffer_batch) and self.step % self.update_every == 0:
            out = self.learner.update(self.buffer, self.rng)
            self.losses.append(out)
        return rew

    @property
    def buffer_batch(self):
        return self.learner.hyper.batch_size


def _failed_row(episode, seed, policy, mode, scheme, exc):
    row = {c: math.nan for c in METRICS_COLUMNS}
    row.update(episode=episode, seed=seed, policy=policy, mode=mode, scheme=scheme,
               status=f"failed:{type(exc).__name__}")
    return row


def run_episode(env: TobmEnv, policy, episode, mode="eval", rng=None, trainer: Trainer = None,
                slot_log=None):
    """Roll one episode; returns a metrics row (and feeds ``trainer`` when given)."""
    rng = rng if rng is not None else env.streams.get(f"policy-{mode}", episode)
    kind = "train" if mode == "train" else "eval"
    steps = env.cfg.sim.steps_per_episode
    n = env.n_devices
    sums = dict(j_sys=0.0, j_off=0.0, j_mine=0.0, lat=0.0, energy=0.0, cons=0.0, tx=0)
    rewards = np.zeros(n)
    try:
        obs = env.reset(kind, episode)
        for t in range(steps):
            acts, stored = policy.actions(env, obs, rng)
            next_obs, util, j_sys, done, info = env.step(acts)
            if trainer is not None:
                rewards += trainer.record(obs, stored, util, j_sys, next_obs, done)
            else:
                rewards += util
            rnd = info["round"]
            sums["j_sys"] += j_sys
            sums["j_off"] += float(info["j_off"].sum())
            sums["j_mine"] += float(info["j_mine"].sum())
            sums["lat"] += float(info["t_used"].mean())
            sums["energy"] += float(info["e_used"].mean())
            sums["cons"] += rnd.latency
            sums["tx"] += env.params.tx_count if rnd.accepted else 0
            if slot_log is not None:
                slot_log.append((episode, t, j_sys, info))
            obs = next_obs
    except (ValueError, ZeroDivisionError, IndexError) as exc:
        return _failed_row(episode, env.seed, policy.name, mode, env.scheme, exc), rewards / steps
    row = {
        "episode": episode, "seed": env.seed, "policy": policy.name, "mode": mode, "scheme": env.scheme,
        "mean_j_sys": sums["j_sys"] / steps, "mean_j_off": sums["j_off"] / steps,
        "mean_j_mine": sums["j_mine"] / steps, "mean_task_latency": sums["lat"] / steps,
        "mean_energy": sums["energy"] / steps, "consensus_latency": sums["cons"] / steps,
        "throughput": sums["tx"] / sums["cons"] if sums["cons"] > 0 else 0.0, "status": "ok",
    }
    return row, rewards / steps


def make_learner(cfg: SimConfig, env: TobmEnv):
    rl = cfg.rl
    rng = env.streams.get("init")
    n = env.n_devices
    if rl.algo == "dqn":
        model = IndependentDQN(n, env.obs_dim, env.space, rl, rng)
        return model, DqnPolicy(model), 1
    model = MADDPG(n, env.obs_dim, env.space, rl, rng, centralized=rl.algo == "maddpg")
    return model, ActorPolicy(model, rl.algo), env.space.dim


def _anneal(start, end, ep, episodes):
    return start + (end - start) * ep / max(episodes - 1, 1)


@dataclass
class TrainingResult:
    metrics: list
    curves: list
    model: object
    policy: object


def run_training(cfg: SimConfig, seed=None, out_dir=None) -> TrainingResult:
    """Train the configured learner; eval episodes (no noise) every ``eval_every`` episodes."""
    env = TobmEnv(cfg, seed)
    rl = cfg.rl
    model, policy, act_dim = make_learner(cfg, env)
    buffer = ReplayBuffer(rl.buffer_size, env.n_devices, env.obs_dim, act_dim)
    individual = (rl.dqn_reward_mode if rl.algo == "dqn" else rl.reward_mode) == "individual"
    trainer = Trainer(model, buffer, rl.warmup, rl.update_every, env.streams.get("replay"), individual)
    noise_rng = env.streams.get("noise")
    episodes = cfg.sim.episodes
    metrics, curves = [], []
    if rl.algo == "dqn":
        start, end = rl.dqn_eps_start, rl.dqn_eps_end
    else:
        start, end = rl.noise_start, rl.noise_end
    for ep in range(episodes):
        policy.noise = _anneal(start, end, ep, episodes)
        trainer.losses = []
        row, rew = run_episode(env, policy, ep, "train", rng=noise_rng, trainer=trainer)
        metrics.append(row)
        curves.extend(_curve_rows(ep, trainer, rew, rl.algo == "dqn"))
        if ep % rl.eval_every == 0 or ep == episodes - 1:
            policy.noise = 0.0
            erow, _ = run_episode(env, policy, ep, "eval")
            metrics.append(erow)
    if out_dir is not None:
        write_csv(os.path.join(out_dir, "metrics.csv"), METRICS_COLUMNS, metrics)
        write_csv(os.path.join(out_dir, "curves.csv"), CURVE_COLUMNS, curves)
        save_nets(os.path.join(out_dir, "checkpoint.npz"), model.checkpoint())
    return TrainingResult(metrics, curves, model, policy)


def _curve_rows(ep, trainer, rew, dqn):
    rows = []
    for i, r in enumerate(rew):
        if trainer.losses:
            if dqn:
                actor, critic = math.nan, float(np.mean([l[i] for l in trainer.losses]))
            else:
                actor = float(np.mean([l[i][0] for l in trainer.losses]))
                critic = float(np.mean([l[i][1] for l in trainer.losses]))
        else:
            actor = critic = math.nan
        rows.append({"episode": ep, "step": trainer.step, "agent": i, "actor_loss": actor,
                     "critic_loss": critic, "reward": float(r)})
    return rows


def load_policy(cfg: SimConfig, path, seed=None):
    """Rebuild a learned policy from a checkpoint written by ``run_training``."""
    env = TobmEnv(cfg, seed)
    model, policy, _ = make_learner(cfg, env)
    nets = load_nets(path)
    for name, net in model.checkpoint().items():
        if name not in nets:
            raise ValueError(f"checkpoint lacks {name}")
        if nets[name].sizes != net.sizes:
            raise ValueError(f"{name}: layer sizes {nets[name].sizes} != {net.sizes}")
        for p, q in zip(net.params, nets[name].params):
            p[...] = q
    policy.noise = 0.0
    return policy


def evaluate(cfg: SimConfig, policies, episodes, seed=None, scheme=None):
    """Eval rows for each policy over the same eval scenarios."""
    rows = []
    for pol in policies:
        env = TobmEnv(cfg, seed, scheme)
        for ep in episodes:
            rows.append(run_episode(env, pol, ep, "eval")[0])
    return rows


def _compare_cell(args):
    cfg, scheme, seed, episodes, policy = args
    env = TobmEnv(cfg, seed, scheme)
    rows = [run_episode(env, BaselinePolicy(policy), ep, "eval")[0] for ep in range(episodes)]
    ok = [r for r in rows if r["status"] == "ok"]
    return {"scheme": scheme, "seed": seed, "episodes": len(ok),
            "mean_j_mine": float(np.mean([r["mean_j_mine"] for r in ok])),
            "consensus_latency": float(np.mean([r["consensus_latency"] for r in ok])),
            "mean_j_sys": float(np.mean([r["mean_j_sys"] for r in ok]))}


def _throughput_cell(args):
    cfg, scheme, load, seed = args
    streams = Streams(seed)
    devices = make_devices(cfg, streams.get("devices"))
    params = ConsensusParams.from_config(cfg.consensus)
    res = throughput(scheme, load, devices, params, weights_of(cfg), streams.get("throughput", load),
                     k=cfg.group_size, mine_share=cfg.consensus.bench_mine_share)
    return {"scheme": scheme, "load": load, "seed": seed, "confirmed": res.confirmed,
            "dropped": res.dropped, "rounds": len(res.rounds), "tps": res.tps}


def _pool_map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def throughput_sweep(cfg: SimConfig, schemes, loads, seeds, workers=1):
    """Common random numbers: arrivals depend on (seed, load) only."""
    jobs = [(cfg, s, load, seed) for s in schemes for load in loads for seed in seeds]
    return _pool_map(_throughput_cell, jobs, workers)


def run_comparison(cfg: SimConfig, schemes, seeds, episodes=10, loads=range(10, 201, 10),
                   policy="all_local", workers=1):
    """Per-scheme mining utility and consensus latency, plus the throughput sweep."""
    jobs = [(cfg, s, seed, episodes, policy) for s in schemes for seed in seeds]
    summary = _pool_map(_compare_cell, jobs, workers)
    sweep = throughput_sweep(cfg, [s for s in schemes if s != "none"], list(loads), seeds, workers)
    return summary, sweep


def consensus_bench(cfg: SimConfig, schemes, seeds, rounds=None):
    """Back-to-back rounds on one block size; returns [(round, load, seed)] for the round log."""
    rounds = rounds or cfg.consensus.bench_rounds
    params = ConsensusParams.from_config(cfg.consensus)
    w = weights_of(cfg)
    k = cfg.group_size
    out = []
    for scheme in schemes:
        for seed in seeds:
            streams = Streams(seed)
            devices = make_devices(cfg, streams.get("devices"))
            actions = [Action(0, mine_share=cfg.consensus.bench_mine_share)] * len(devices)
            rng = streams.get("bench", SCHEME_KEYS[scheme])
            rep = ReputationTable(len(devices))
            for r in range(rounds):
                txs = tuple(range(r * params.tx_count, (r + 1) * params.tx_count))
                block = Block(r + 1, txs, params.tx_count * params.tx_size_bits)
                if scheme == "pow":
                    group, manager = tuple(range(k)), 0
                else:
                    group, manager = vote_miners(rep, params.n_users, k, rng)
                rnd = run_round(scheme, block, group, manager, actions, devices, params, rng, round_id=r)
                rep = update_reputation(rep, rnd, w)
                out.append((rnd, params.tx_count, seed))
    return out


SCHEME_KEYS = {"por": 0, "dpos": 1, "pow": 2}


def audit(cfg: SimConfig, policy="random", episodes=1, seed=None):
    """Recompute every slot's J_sys from the logged actions by a separate route."""
    env = TobmEnv(cfg, seed)
    log = []
    pol = BaselinePolicy(policy)
    for ep in range(episodes):
        run_episode(env, pol, ep, "eval", slot_log=log)
    w = env.weights
    mp = env.mining_params()
    rows = []
    for ep, t, reported, info in log:
        devs, tasks, acts = info["devices"], info["tasks"], info["actions"]
        pairs = list(zip(devs, acts))
        total = 0.0
        for i, (d, task, a) in enumerate(zip(devs, tasks, acts)):
            if a.offload:
                total += w.w_off * offload_utility(d, task, a, pairs[:i] + pairs[i + 1:], env.f_edge,
                                                   w, env.channel)
        rnd = info["round"]
        if env.scheme == "por":
            for m in rnd.miners:
                total += w.w_mine * mining_utility(mining_latency(devs[m], acts[m], mp), w)
        elif env.scheme != "none":
            for lat in rnd.miner_latency:
                total += w.w_mine * mining_utility(lat, w)
        rows.append({"episode": ep, "slot": t, "reported_j_sys": reported, "recomputed_j_sys": total,
                     "abs_diff": abs(reported - total)})
    return rows


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    if isinstance(v, np.floating):
        return _fmt(float(v))
    return v


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            wr.writerow([_fmt(r[c]) for c in columns])


__all__ = [
    "METRICS_COLUMNS", "CURVE_COLUMNS", "COMPARISON_COLUMNS", "THROUGHPUT_COLUMNS", "AUDIT_COLUMNS",
    "ROUND_LOG_COLUMNS", "TobmEnv", "BaselinePolicy", "ActorPolicy", "DqnPolicy", "Trainer",
    "run_episode", "run_training", "load_policy", "evaluate", "run_comparison", "throughput_sweep",
    "consensus_bench", "audit", "write_csv", "write_round_log", "workers_from_env", "NumericFailure",
]


def window_mean(rows, lo, hi, mode="eval"):
    """Mean J_sys over ``mode`` rows with ``lo <= episode < hi``."""
    vals = [r["mean_j_sys"] for r in rows if r["mode"] == mode and lo <= r["episode"] < hi]
    return float(np.mean(vals)) if vals else math.nan


def relative_margin(value, base):
    return (value - base) / abs(base)


def learning_check(cfg: SimConfig, seed, window=100, baselines=("random", "all_local")):
    """Train once and score the final eval window against the first window and baselines.

    Baselines replay the same eval scenarios as the final window.
    """
    res = run_training(cfg, seed)
    episodes = cfg.sim.episodes
    final_eps = sorted({r["episode"] for r in res.metrics
                        if r["mode"] == "eval" and r["episode"] >= episodes - window})
    out = {"seed": seed, "first": window_mean(res.metrics, 0, window),
           "final": window_mean(res.metrics, episodes - window, episodes)}
    for kind in baselines:
        rows = evaluate(cfg, [BaselinePolicy(kind)], final_eps, seed)
        out[kind] = float(np.mean([r["mean_j_sys"] for r in rows]))
    return out, res
