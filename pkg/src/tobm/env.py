"""Physical and utility model of one TOBM cell.

Channels use Shannon capacity with same-channel interference. Offloading
utility is the normalized time/energy improvement over local execution;
mining utility decays exponentially in the block-verification latency.
All functions are pure.
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class InfeasibleRate(ZeroDivisionError):
    """Offloading a nonempty task over a zero-rate link."""


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class EdgeDevice:
    id: int
    f_loc: float
    f_max_mine: float
    p_levels: tuple
    kappa: float
    gains: tuple

    def __post_init__(self):
        if self.f_loc <= 0:
            raise ValueError("f_loc must be > 0")
        if self.f_max_mine < 0:
            raise ValueError("f_max_mine must be >= 0")
        p = self.p_levels
        if not p or any(x < 0 for x in p) or any(a >= b for a, b in zip(p, p[1:])):
            raise ValueError("p_levels must be >= 0 and strictly increasing")
        if self.kappa <= 0:
            raise ValueError("kappa must be > 0")
        if not self.gains or any(g <= 0 for g in self.gains):
            raise ValueError("gains must be > 0")


@dataclass(frozen=True)
class Task:
    data_bits: float
    cycles_per_bit: float

    def __post_init__(self):
        if self.data_bits < 0 or self.cycles_per_bit <= 0:
            raise ValueError("need data_bits >= 0 and cycles_per_bit > 0")


@dataclass(frozen=True)
class ChannelModel:
    n_channels: int = 2
    bandwidth: float = 1e6
    noise: float = 1e-13

    def __post_init__(self):
        if self.n_channels < 1 or self.bandwidth <= 0 or self.noise <= 0:
            raise ValueError("need n_channels >= 1, bandwidth > 0, noise > 0")


@dataclass(frozen=True)
class Action:
    offload: int
    channel: int = 0
    power_idx: int = 0
    mine_share: float = 1.0

    def __post_init__(self):
        if self.offload not in (0, 1):
            raise ValueError("offload must be 0 or 1")
        if not 0.0 <= self.mine_share <= 1.0:
            raise ValueError("mine_share must lie in [0, 1]")
        if self.channel < 0 or self.power_idx < 0:
            raise ValueError("indices must be >= 0")

    def check(self, dev: EdgeDevice, channel: ChannelModel):
        if self.channel >= channel.n_channels or self.power_idx >= len(dev.p_levels):
            raise IndexError(f"action {self} out of range for device {dev.id}")


@dataclass(frozen=True)
class UtilityWeights:
    beta_t: float = 0.5
    beta_e: float = 0.5
    w_off: float = 1.0
    w_mine: float = 1.0
    decay: float = 5.0
    u_max: float = 1.0

    def __post_init__(self):
        if self.beta_t < 0 or self.beta_e < 0 or not math.isclose(self.beta_t + self.beta_e, 1.0):
            raise ValueError("beta_t, beta_e must be >= 0 and sum to 1")
        if self.w_off < 0 or self.w_mine < 0 or self.decay <= 0 or self.u_max <= 0:
            raise ValueError("need w_off, w_mine >= 0 and decay, u_max > 0")


@dataclass(frozen=True)
class MiningParams:
    """Per-round quantities the four verification stages depend on."""

    block_bits: float
    group_size: int
    result_bits: float
    verify_cycles_per_bit: float
    downlink_bps: float
    pair_bps: float
    uplink_bps: float

    def __post_init__(self):
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")


def uplink_rate(dev: EdgeDevice, act: Action, others: Sequence, channel: ChannelModel) -> float:
    """Shannon rate of ``dev`` on its chosen channel.

    ``others`` is a sequence of ``(EdgeDevice, Action)``; only offloading
    devices on the same channel interfere, each with its own gain on that
    channel.
    """
    p = dev.p_levels[act.power_idx]
    if p == 0:
        return 0.0
    k = act.channel
    interference = 0.0
    for o_dev, o_act in others:
        if o_act.offload and o_act.channel == k:
            interference += o_dev.p_levels[o_act.power_idx] * o_dev.gains[k]
    sinr = p * dev.gains[k] / (channel.noise + interference)
    return channel.bandwidth * math.log2(1.0 + sinr)


def local_cost(dev: EdgeDevice, task: Task):
    cycles = task.data_bits * task.cycles_per_bit
    return cycles / dev.f_loc, dev.kappa * dev.f_loc**2 * cycles


def offload_cost(dev: EdgeDevice, task: Task, rate: float, f_edge: float, power: float):
    """(time, energy) of offloading; energy counts device transmit power only."""
    if task.data_bits == 0:
        return 0.0, 0.0
    if rate <= 0:
        raise InfeasibleRate(f"device {dev.id}: zero uplink rate")
    t_tx = task.data_bits / rate
    return t_tx + task.data_bits * task.cycles_per_bit / f_edge, power * t_tx


def offload_utility(dev, task, act, others, f_edge, w: UtilityWeights, channel: ChannelModel) -> float:
    if not act.offload or task.data_bits == 0:
        return 0.0
    t_loc, e_loc = local_cost(dev, task)
    rate = uplink_rate(dev, act, others, channel)
    try:
        t_off, e_off = offload_cost(dev, task, rate, f_edge, dev.p_levels[act.power_idx])
    except InfeasibleRate:
        return 0.0
    return w.beta_t * (t_loc - t_off) / t_loc + w.beta_e * (e_loc - e_off) / e_loc


def mining_stages(dev: EdgeDevice, act: Action, params: MiningParams):
    """The four stage latencies; stage 2 is +inf with no mining CPU."""
    cpu = act.mine_share * dev.f_max_mine
    t1 = params.block_bits / params.downlink_bps
    if cpu > 0:
        t2 = (params.block_bits / params.group_size) * params.verify_cycles_per_bit / cpu
    else:
        t2 = math.inf
    t3 = params.result_bits / params.pair_bps
    t4 = params.result_bits / params.uplink_bps
    return t1, t2, t3, t4


def mining_latency(dev: EdgeDevice, act: Action, params: MiningParams) -> float:
    t1, t2, t3, t4 = mining_stages(dev, act, params)
    return t1 + t2 + t3 + t4


def mining_utility(latency: float, w: UtilityWeights) -> float:
    if math.isinf(latency):
        return 0.0
    if latency < 0:
        raise ValueError("latency must be >= 0")
    return w.u_max * math.exp(-w.decay * latency)


def system_utility(j_off, j_mine, w: UtilityWeights) -> float:
    """Cooperative team reward: weighted sum over devices."""
    if len(j_off) != len(j_mine):
        raise LengthMismatch(f"{len(j_off)} offloading vs {len(j_mine)} mining utilities")
    total = 0.0
    for a, b in zip(j_off, j_mine):
        total += w.w_off * a + w.w_mine * b
    return total


def task_outcomes(devices, tasks, actions, channel, f_edge, w):
    """Per-device (J_off, time, energy) actually incurred in one slot.

    An infeasible offload falls back to local execution for the time and
    energy columns and scores zero offloading utility.
    """
    n = len(devices)
    j_off = np.zeros(n)
    t_used = np.zeros(n)
    e_used = np.zeros(n)
    pairs = list(zip(devices, actions))
    for i, (dev, task, act) in enumerate(zip(devices, tasks, actions)):
        others = pairs[:i] + pairs[i + 1:]
        t_loc, e_loc = local_cost(dev, task)
        t_used[i], e_used[i] = t_loc, e_loc
        if act.offload and task.data_bits > 0:
            rate = uplink_rate(dev, act, others, channel)
            if rate > 0:
                t_used[i], e_used[i] = offload_cost(dev, task, rate, f_edge, dev.p_levels[act.power_idx])
            j_off[i] = offload_utility(dev, task, act, others, f_edge, w, channel)
    return j_off, t_used, e_used
