"""Proof-of-Reputation consensus, DPoS/PoW latency baselines, throughput.

A PoR round: users vote for devices by reputation rank, the K most-voted
devices form the miner group, and the highest-reputation member manages
the round. The manager splits the block into K near-equal transaction
parts, hands each miner a random nonce, and accepts the block iff a strict
majority of miners verify positively and the reported nonces sum to the
manager's target.
"""

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .env import Action, MiningParams, mining_latency, mining_utility

POSITIVE, NEGATIVE, TIMEOUT = "positive", "negative", "timeout"
SCHEMES = ("por", "dpos", "pow")


class EmptyGroup(ValueError):
    pass


class GroupTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ConsensusParams:
    tx_count: int = 5
    tx_size_bits: float = 2000.0
    result_bits: float = 1000.0
    verify_cycles_per_bit: float = 10.0
    downlink_bps: float = 2e5
    uplink_bps: float = 2e5
    pair_bps: float = 2e5
    n_users: int = 100
    pow_mean_s: float = 10.0
    timeout_s: float = 1.0
    horizon_s: float = 3.0
    admission_s: float = 0.008
    max_rounds_in_flight: int = 1

    @classmethod
    def from_config(cls, c):
        return cls(c.tx_count, c.tx_size_bits, c.result_bits, c.verify_cycles_per_bit,
                   c.downlink_bps, c.uplink_bps, c.pair_bps or c.uplink_bps, c.n_users,
                   c.pow_mean_s, c.timeout_s, c.horizon_s, c.admission_s, c.max_rounds_in_flight)

    def mining_params(self, block_bits, k) -> MiningParams:
        return MiningParams(block_bits, k, self.result_bits, self.verify_cycles_per_bit,
                            self.downlink_bps, self.pair_bps, self.uplink_bps)


@dataclass(frozen=True)
class Block:
    height: int
    tx_ids: tuple
    size_bits: float

    @property
    def parent(self):
        return self.height - 1

    @property
    def tx_count(self):
        return len(self.tx_ids)


class Chain:
    """Accepted blocks; heights are gapless."""

    def __init__(self):
        self.blocks = []

    @property
    def height(self):
        return len(self.blocks)

    def propose(self, tx_ids, tx_size_bits) -> Block:
        if not tx_ids:
            raise ValueError("a block needs at least one transaction")
        return Block(self.height + 1, tuple(tx_ids), len(tx_ids) * tx_size_bits)

    def append(self, block: Block):
        if block.height != self.height + 1:
            raise ValueError(f"block height {block.height} does not extend chain at {self.height}")
        self.blocks.append(block)


class ReputationTable:
    def __init__(self, n=None, scores=None):
        self.scores = np.zeros(n) if scores is None else np.asarray(scores, dtype=float).copy()

    def __len__(self):
        return len(self.scores)

    def __getitem__(self, i):
        return self.scores[i]

    def copy(self):
        return ReputationTable(scores=self.scores)

    def __eq__(self, other):
        return isinstance(other, ReputationTable) and np.array_equal(self.scores, other.scores)

    def __repr__(self):
        return f"ReputationTable({self.scores.tolist()})"


@dataclass(frozen=True)
class Fault:
    """Fault injection: miners whose vote is flipped or whose nonce is tampered."""

    flip_votes: frozenset = frozenset()
    bad_nonce: frozenset = frozenset()


@dataclass
class PoRRound:
    round_id: int
    scheme: str
    manager: int
    miners: tuple
    pair_map: dict
    parts: list
    nonces: tuple
    reported: tuple
    target_sum: int
    votes: tuple
    miner_latency: tuple
    outcome: str
    latency: float
    height: Optional[int] = None

    @property
    def k(self):
        return len(self.miners)

    @property
    def positives(self):
        return sum(v == POSITIVE for v in self.votes)

    @property
    def accepted(self):
        return self.outcome == "accepted"


def rank_weights(scores):
    """Weight M - rank, where rank counts strictly better devices (ties share a rank)."""
    scores = np.asarray(scores, dtype=float)
    m = len(scores)
    ranks = (scores[None, :] > scores[:, None]).sum(axis=1)
    return (m - ranks).astype(float)


def pick_manager(rep: ReputationTable, group):
    # highest reputation, lowest id on ties
    return min(group, key=lambda i: (-rep[i], i))


def vote_miners(rep: ReputationTable, n_users: int, k: int, rng: np.random.Generator):
    """Return ``(group, manager)``; group ordered by votes, then id."""
    m = len(rep)
    if k > m:
        raise GroupTooLarge(f"group of {k} from {m} devices")
    if k < 1 or n_users < 1:
        raise ValueError("need k >= 1 and n_users >= 1")
    if k == m:
        group = tuple(range(m))
    else:
        w = rank_weights(rep.scores)
        ballots = rng.choice(m, size=n_users, p=w / w.sum())
        counts = np.bincount(ballots, minlength=m)
        order = sorted(range(m), key=lambda i: (-counts[i], i))
        group = tuple(order[:k])
    return group, pick_manager(rep, group)


def partition_block(tx_ids, k):
    """Split into k contiguous parts whose sizes differ by at most one."""
    if k < 1:
        raise EmptyGroup("cannot partition for an empty group")
    n = len(tx_ids)
    base, extra = divmod(n, k)
    parts, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        parts.append(tuple(tx_ids[start:start + size]))
        start += size
    return parts


def pair_miners(group, manager):
    """Fixed matching (g0,g1), (g2,g3), ...; an odd last miner pairs with the manager."""
    pairs = {}
    for a, b in zip(group[0::2], group[1::2]):
        pairs[a] = b
        pairs[b] = a
    if len(group) % 2:
        pairs[group[-1]] = manager
    return pairs


def _round_latency(latencies, votes, timeout_s):
    finite = [t for t, v in zip(latencies, votes) if v != TIMEOUT]
    lat = max(finite) if finite else 0.0
    if any(v == TIMEOUT for v in votes):
        lat = max(lat, timeout_s)
    return lat


def accept_rule(votes, sum_ok):
    k = len(votes)
    return sum(v == POSITIVE for v in votes) >= k // 2 + 1 and sum_ok


def run_por_round(block: Block, group, manager, actions, devices, params: ConsensusParams,
                  rng: np.random.Generator, round_id=0, fault: Fault = None) -> PoRRound:
    """Run the four verification stages for every miner in parallel."""
    group = tuple(group)
    if not group:
        raise EmptyGroup("PoR round needs at least one miner")
    fault = fault or Fault()
    k = len(group)
    mp = params.mining_params(block.size_bits, k)
    parts = partition_block(block.tx_ids, k)
    pairs = pair_miners(group, manager)
    nonces = tuple(int(x) for x in rng.integers(0, 2**31, size=k))
    target = sum(nonces)
    reported = tuple(n + 1 if m in fault.bad_nonce else n for m, n in zip(group, nonces))

    votes, lats = [], []
    for m in group:
        act = actions[m]
        lat = mining_latency(devices[m], act, mp)
        lats.append(lat)
        if act.mine_share <= 0:
            votes.append(TIMEOUT)
        elif m in fault.flip_votes:
            votes.append(NEGATIVE)
        else:
            votes.append(POSITIVE)
    sum_ok = sum(reported) == target
    outcome = "accepted" if accept_rule(votes, sum_ok) else "rejected"
    return PoRRound(round_id, "por", manager, group, pairs, parts, nonces, reported, target,
                    tuple(votes), tuple(lats), outcome, _round_latency(lats, votes, params.timeout_s))


def dpos_latencies(block: Block, group, actions, devices, params: ConsensusParams):
    """Per-delegate latency: full-block verify plus serialized all-to-all exchange."""
    k = len(group)
    t1 = block.size_bits / params.downlink_bps
    exchange = k * (k - 1) * params.result_bits / params.pair_bps
    out = []
    for m in group:
        cpu = actions[m].mine_share * devices[m].f_max_mine
        verify = block.size_bits * params.verify_cycles_per_bit / cpu if cpu > 0 else math.inf
        out.append(t1 + verify + exchange)
    return out


def run_baseline_round(scheme, block: Block, group, manager, actions, devices,
                       params: ConsensusParams, rng: np.random.Generator, round_id=0) -> PoRRound:
    group = tuple(group)
    if not group:
        raise EmptyGroup(f"{scheme} round needs at least one miner")
    if scheme == "dpos":
        lats = dpos_latencies(block, group, actions, devices, params)
        votes = tuple(TIMEOUT if actions[m].mine_share <= 0 else POSITIVE for m in group)
        latency = _round_latency(lats, votes, params.timeout_s)
    elif scheme == "pow":
        latency = float(rng.exponential(params.pow_mean_s)) + block.size_bits / params.downlink_bps
        lats = [latency] * len(group)
        votes = (POSITIVE,) * len(group)
    else:
        raise ValueError(f"unknown baseline scheme {scheme!r}")
    outcome = "accepted" if accept_rule(votes, True) else "rejected"
    return PoRRound(round_id, scheme, manager, group, {}, [tuple(block.tx_ids)], (), (), 0,
                    tuple(votes), tuple(lats), outcome, latency)


def baseline_latency(scheme, block, group, actions, devices, params, rng) -> float:
    return run_baseline_round(scheme, block, group, group[0] if group else -1,
                              actions, devices, params, rng).latency


def run_round(scheme, block, group, manager, actions, devices, params, rng, round_id=0, fault=None):
    if scheme == "por":
        return run_por_round(block, group, manager, actions, devices, params, rng, round_id, fault)
    return run_baseline_round(scheme, block, group, manager, actions, devices, params, rng, round_id)


def update_reputation(rep: ReputationTable, rnd: PoRRound, w) -> ReputationTable:
    out = rep.copy()
    for m, lat in zip(rnd.miners, rnd.miner_latency):
        out.scores[m] = mining_utility(lat, w)
    return out


@dataclass
class ThroughputResult:
    scheme: str
    load: int
    confirmed: int
    dropped: int
    elapsed: float
    rounds: list = field(default_factory=list)

    @property
    def tps(self):
        return self.confirmed / self.elapsed


def throughput(scheme, load, devices, params: ConsensusParams, weights, rng: np.random.Generator,
               k=None, mine_share=1.0, rep: ReputationTable = None) -> ThroughputResult:
    """Confirmed transactions per second over the arrival horizon.

    Requests arrive uniformly at random on ``[0, horizon)``. The manager is
    a serial processor: admitting each arrived request costs
    ``admission_s``, and it dispatches blocks of ``tx_count`` requests while
    fewer than ``max_rounds_in_flight`` rounds are outstanding, waiting
    otherwise. Only rounds that finish within the horizon count; all other
    requests are dropped.
    """
    if load < 1:
        raise ValueError("load must be >= 1")
    n = len(devices)
    k = k or n
    horizon = params.horizon_s
    rep = rep.copy() if rep is not None else ReputationTable(n)
    actions = [Action(0, mine_share=mine_share)] * n
    arrivals = np.sort(rng.uniform(0.0, horizon, size=load))
    chain = Chain()
    mempool = deque()
    in_flight = []  # (finish_time, round, tx_ids)
    rounds = []
    t, i, confirmed, rid = 0.0, 0, 0, 0

    def settle(now):
        nonlocal confirmed
        done = [f for f in in_flight if f[0] <= now]
        for item in sorted(done, key=lambda f: f[0]):
            in_flight.remove(item)
            finish, rnd, txs = item
            if rnd.accepted:
                chain.append(chain.propose(txs, params.tx_size_bits))
                rnd.height = chain.height
                confirmed += len(txs)
            else:
                mempool.extendleft(reversed(txs))

    while t < horizon:
        settle(t)
        if i < load and arrivals[i] <= t:
            while i < load and arrivals[i] <= t:
                mempool.append(i)
                i += 1
                t += params.admission_s
            continue
        ready = len(mempool) >= params.tx_count or (i == load and mempool)
        if ready and len(in_flight) < params.max_rounds_in_flight:
            txs = tuple(mempool.popleft() for _ in range(min(params.tx_count, len(mempool))))
            block = Block(chain.height + 1 + len(in_flight), txs, len(txs) * params.tx_size_bits)
            if scheme == "pow":
                group, manager = tuple(range(k)), 0
            else:
                group, manager = vote_miners(rep, params.n_users, k, rng)
            rnd = run_round(scheme, block, group, manager, actions, devices, params, rng, round_id=rid)
            rid += 1
            rep = update_reputation(rep, rnd, weights)
            rounds.append(rnd)
            in_flight.append((t + rnd.latency, rnd, txs))
            continue
        upcoming = [f[0] for f in in_flight]
        if len(in_flight) >= params.max_rounds_in_flight:
            # blocked on the pipeline; arrivals wait unadmitted
            t = max(t, min(upcoming))
            continue
        if i < load:
            upcoming.append(arrivals[i])
        if not upcoming:
            break
        t = max(t, min(upcoming))
    settle(horizon)
    return ThroughputResult(scheme, load, confirmed, load - confirmed, horizon, rounds)


ROUND_LOG_COLUMNS = ["round_id", "scheme", "K", "outcome", "latency_s", "positives", "manager",
                     "height", "load", "seed"]


def write_round_log(path, rows):
    """rows: iterable of (PoRRound, load, seed)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(ROUND_LOG_COLUMNS)
        for rnd, load, seed in rows:
            wr.writerow([rnd.round_id, rnd.scheme, rnd.k, rnd.outcome, repr(float(rnd.latency)),
                         rnd.positives, rnd.manager, "" if rnd.height is None else rnd.height,
                         load, seed])
