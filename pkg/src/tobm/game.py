"""Pure-strategy analysis of the per-slot offloading game.

Best responses evaluate utilities one profile at a time through the scalar
env functions. Exhaustive NE enumeration builds the whole payoff tensor,
vectorized with numpy for offloading games, so the two routes check each
other.
"""

import csv
import itertools
import math
from typing import Callable, Sequence

import numpy as np

from .env import (
    Action, ChannelModel, EdgeDevice, MiningParams, Task, UtilityWeights, mining_latency,
    mining_utility, offload_utility,
)

TOL = 1e-9


class SpaceTooLarge(ValueError):
    pass


class DiscreteGame:
    """Finite N-player game; ``utility(profile)`` returns all players' payoffs."""

    def __init__(self, n_strategies: Sequence[int], utility: Callable):
        self.n_strategies = tuple(int(s) for s in n_strategies)
        if not self.n_strategies or min(self.n_strategies) < 1:
            raise ValueError("every player needs a nonempty strategy set")
        self._utility = utility

    @property
    def n_players(self):
        return len(self.n_strategies)

    @property
    def size(self):
        return math.prod(self.n_strategies)

    def utility(self, profile):
        return np.asarray(self._utility(tuple(profile)), dtype=float)

    def payoff_tensor(self):
        out = np.empty(self.n_strategies + (self.n_players,))
        for prof in itertools.product(*map(range, self.n_strategies)):
            out[prof] = self.utility(prof)
        return out


def from_payoffs(table) -> DiscreteGame:
    """Game from an array of shape ``(S_1, ..., S_N, N)``."""
    table = np.asarray(table, dtype=float)
    if table.shape[-1] != table.ndim - 1:
        raise ValueError("last axis must hold one payoff per player")
    game = DiscreteGame(table.shape[:-1], lambda prof: table[prof])
    game.payoff_tensor = lambda: table.copy()
    return game


def phi_grid(points):
    # zero share is excluded: it always times out and earns nothing
    return tuple(float(x) for x in np.linspace(1.0 / points, 1.0, points))


def strategy_set(dev: EdgeDevice, channel: ChannelModel, phis, offload_only=False):
    local = [] if offload_only else [Action(0, 0, 0, phi) for phi in phis]
    remote = [Action(1, k, p, phi) for k in range(channel.n_channels)
              for p in range(len(dev.p_levels)) for phi in phis]
    return local + remote


class OffloadGame(DiscreteGame):
    """Players choose (offload, channel, power, mining share); u = w_off*J_off + w_mine*J_mine.

    Every device is a miner in a group of size N, so mining latency depends
    only on the device's own share.
    """

    def __init__(self, devices, tasks, channel: ChannelModel, weights: UtilityWeights, f_edge,
                 mining: MiningParams, strategies=None, phis=(1.0,)):
        self.devices = list(devices)
        self.tasks = list(tasks)
        self.channel = channel
        self.weights = weights
        self.f_edge = f_edge
        self.mining = mining
        if strategies is None:
            strategies = [strategy_set(d, channel, phis) for d in self.devices]
        self.strategies = [list(s) for s in strategies]
        super().__init__([len(s) for s in self.strategies], self._scalar_utility)

    def actions(self, profile):
        return [self.strategies[i][s] for i, s in enumerate(profile)]

    def _scalar_utility(self, profile):
        acts = self.actions(profile)
        pairs = list(zip(self.devices, acts))
        w = self.weights
        out = []
        for i, (dev, act) in enumerate(pairs):
            others = pairs[:i] + pairs[i + 1:]
            j_off = offload_utility(dev, self.tasks[i], act, others, self.f_edge, w, self.channel)
            j_mine = mining_utility(mining_latency(dev, act, self.mining), w)
            out.append(w.w_off * j_off + w.w_mine * j_mine)
        return out

    def payoff_tensor(self):
        n, shape = self.n_players, self.n_strategies
        w, ch = self.weights, self.channel

        def along(i, values):
            v = np.asarray(values, dtype=float)
            return v.reshape([-1 if a == i else 1 for a in range(n)])

        x = [along(i, [s.offload for s in self.strategies[i]]) for i in range(n)]
        k = [np.array([s.channel for s in self.strategies[i]]) for i in range(n)]
        p = [along(i, [self.devices[i].p_levels[s.power_idx] for s in self.strategies[i]]) for i in range(n)]
        out = np.empty(shape + (n,))
        for i in range(n):
            dev, task = self.devices[i], self.tasks[i]
            gains = np.asarray(dev.gains)
            interf = np.zeros(shape)
            for j in range(n):
                if j == i:
                    continue
                gj = np.asarray(self.devices[j].gains)
                same = (along(j, k[j]) == along(i, k[i]))
                interf = interf + x[j] * p[j] * same * along(i, gj[k[i]])
            sig = p[i] * along(i, gains[k[i]])
            with np.errstate(divide="ignore", invalid="ignore"):
                rate = ch.bandwidth * np.log2(1.0 + sig / (ch.noise + interf))
                d, c = task.data_bits, task.cycles_per_bit
                t_loc = d * c / dev.f_loc
                e_loc = dev.kappa * dev.f_loc**2 * d * c
                t_tx = d / rate
                t_off = t_tx + d * c / self.f_edge
                e_off = p[i] * t_tx
                j_off = w.beta_t * (t_loc - t_off) / t_loc + w.beta_e * (e_loc - e_off) / e_loc
            feasible = (x[i] > 0) & (rate > 0) & (d > 0)
            j_off = np.where(feasible, j_off, 0.0)
            j_mine = along(i, [mining_utility(mining_latency(dev, s, self.mining), w)
                               for s in self.strategies[i]])
            out[..., i] = np.broadcast_to(w.w_off * j_off + w.w_mine * j_mine, shape)
        return out


def best_response(game: DiscreteGame, profile, player, tol=TOL):
    """Lowest-index strategy within ``tol`` of the player's best payoff."""
    profile = list(profile)
    vals = []
    for s in range(game.n_strategies[player]):
        profile[player] = s
        vals.append(game.utility(profile)[player])
    vals = np.asarray(vals)
    return int(np.flatnonzero(vals >= vals.max() - tol)[0])


def best_response_dynamics(game: DiscreteGame, start, max_iters=100, tol=TOL):
    """Round-robin best responses; returns ``(profile, converged, sweeps)``."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    profile = list(start)
    for sweep in range(1, max_iters + 1):
        changed = False
        for i in range(game.n_players):
            br = best_response(game, profile, i, tol)
            if br != profile[i]:
                profile[i] = br
                changed = True
        if not changed:
            return tuple(profile), True, sweep
    return tuple(profile), False, max_iters


def enumerate_pure_ne(game: DiscreteGame, max_profiles=1_000_000, tol=TOL):
    """All profiles where no unilateral deviation gains more than ``tol``."""
    if game.size > max_profiles:
        raise SpaceTooLarge(f"{game.size} profiles exceeds cap {max_profiles}")
    table = game.payoff_tensor()
    ok = np.ones(game.n_strategies, dtype=bool)
    for i in range(game.n_players):
        u = table[..., i]
        ok &= u >= u.max(axis=i, keepdims=True) - tol
    return [tuple(int(v) for v in idx) for idx in np.argwhere(ok)]


def is_pure_ne(game: DiscreteGame, profile, tol=TOL):
    """Direct deviation check through ``game.utility``."""
    base = game.utility(profile)
    for i in range(game.n_players):
        dev = list(profile)
        for s in range(game.n_strategies[i]):
            dev[i] = s
            if game.utility(dev)[i] > base[i] + tol:
                return False
    return True


def random_instance(rng: np.random.Generator, cfg, n_players=None, n_channels=None,
                    n_powers=None, n_phi=None, mining_strategic=True) -> OffloadGame:
    """Small offloading game drawn from the config's parameter ranges."""
    d = cfg.devices
    n = n_players or int(rng.integers(2, 5))
    c = n_channels or int(rng.integers(1, 3))
    n_p = n_powers or int(rng.integers(1, 4))
    n_phi = n_phi or int(rng.integers(1, 4))
    levels = tuple(d.p_levels_w[-n_p:])
    channel = ChannelModel(c, cfg.channel.bandwidth_hz, cfg.channel.noise_w)
    devices = [EdgeDevice(i, float(rng.uniform(*d.f_loc_hz)), float(rng.uniform(*d.f_mine_hz)), levels,
                          d.kappa, tuple(float(g) for g in rng.uniform(*d.gain, size=c)))
               for i in range(n)]
    tasks = [Task(float(rng.uniform(cfg.task.d_min_bits, cfg.task.d_max_bits)), cfg.task.cycles_per_bit)
             for _ in range(n)]
    w = cfg.weights
    weights = UtilityWeights(w.beta_t, w.beta_e, w.w_off, w.w_mine, w.decay, w.u_max)
    cs = cfg.consensus
    mining = MiningParams(cs.tx_count * cs.tx_size_bits, n, cs.result_bits, cs.verify_cycles_per_bit,
                          cs.downlink_bps, cs.pair_bps or cs.uplink_bps, cs.uplink_bps)
    phis = phi_grid(n_phi) if mining_strategic else (1.0,)
    return OffloadGame(devices, tasks, channel, weights, d.f_edge_hz, mining, phis=phis)


REPORT_COLUMNS = ["instance", "n_players", "n_channels", "n_powers", "n_phi", "profiles",
                  "ne_count", "converged", "sweeps", "brd_in_ne_set"]


def analyze(cfg, n_instances, seed, max_iters=None):
    """Run BRD and exhaustive enumeration on random instances; one row per instance."""
    from .rng import Streams

    streams = Streams(seed)
    rows = []
    for idx in range(n_instances):
        rng = streams.get("game", idx)
        game = random_instance(rng, cfg, mining_strategic=cfg.game.mining_strategic)
        start = (0,) * game.n_players
        prof, conv, sweeps = best_response_dynamics(game, start, max_iters or cfg.game.max_iters)
        ne = enumerate_pure_ne(game, cfg.game.max_profiles)
        rows.append({
            "instance": idx,
            "n_players": game.n_players,
            "n_channels": game.channel.n_channels,
            "n_powers": len(game.devices[0].p_levels),
            "n_phi": len({s.mine_share for s in game.strategies[0]}),
            "profiles": game.size,
            "ne_count": len(ne),
            "converged": int(conv),
            "sweeps": sweeps,
            "brd_in_ne_set": int(conv and prof in set(ne)),
        })
    return rows


def write_report(path, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        wr.writeheader()
        wr.writerows(rows)
