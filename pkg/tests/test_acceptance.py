"""End-to-end acceptance criteria, one test per criterion.

Each test records a single pass/fail line, printed in the pytest terminal
summary. Criteria 7 and 8 train for 2000 episodes on five seeds and
dominate the runtime (roughly an hour on one core); the MA-DDPG runs are
shared between them.
"""

import filecmp
import itertools
import time

import numpy as np
import pytest

from tobm.cli import main as cli_main
from tobm.config import default_config
from tobm.consensus import Block, ConsensusParams, Fault, run_por_round
from tobm.env import Action, EdgeDevice, UtilityWeights, mining_utility
from tobm.game import analyze
from tobm.gradcheck import finite_difference_error
from tobm.harness import TobmEnv, consensus_bench, learning_check, relative_margin, throughput_sweep, window_mean, run_training

pytestmark = pytest.mark.acceptance

SEEDS = range(5)
TRAIN_EPISODES = 2000
WINDOW = 100
MARGIN = 0.05
TRAIN_BUDGET_S = 15 * 60


def record(report, n, title, ok, detail):
    line = f"criterion {n} ({title}): {'PASS' if ok else 'FAIL'} | {detail}"
    report[n] = line
    print(line)
    assert ok, line


# 1

def test_c1_consensus_truth_table(acceptance_report):
    params = ConsensusParams()
    rng = np.random.default_rng(1)
    act = {"+": Action(0), "-": Action(0), "t": Action(0, mine_share=0.0)}
    t0 = time.perf_counter()
    mismatches = cases = 0
    for k in range(1, 8):
        devices = [EdgeDevice(i, 1e9, 1e6, (0.1,), 1e-28, (1e-11,)) for i in range(k)]
        block = Block(1, tuple(range(5)), 5 * params.tx_size_bits)
        group, need = tuple(range(k)), k // 2 + 1
        for pattern in itertools.product("+-t", repeat=k):
            actions = [act[v] for v in pattern]
            flips = frozenset(i for i, v in enumerate(pattern) if v == "-")
            for sum_ok in (True, False):
                fault = Fault(flips, frozenset() if sum_ok else frozenset({k - 1}))
                rnd = run_por_round(block, group, 0, actions, devices, params, rng, fault=fault)
                mismatches += rnd.accepted != (pattern.count("+") >= need and sum_ok)
                cases += 1
    elapsed = time.perf_counter() - t0
    record(acceptance_report, 1, "consensus truth table", mismatches == 0 and elapsed < 1.0,
           f"{cases} cases (K=1..7, votes +/-/timeout, sum ok/bad), {mismatches} mismatches, {elapsed:.2f}s < 1s")


# 2

def test_c2_latency_ordering(acceptance_report):
    cfg = default_config()
    t0 = time.perf_counter()
    rounds = consensus_bench(cfg, ["por", "dpos", "pow"], range(10), rounds=100)
    elapsed = time.perf_counter() - t0
    mean = {s: float(np.mean([r.latency for r, _, _ in rounds if r.scheme == s])) for s in ("por", "dpos", "pow")}
    counts = {s: sum(r.scheme == s for r, _, _ in rounds) for s in mean}
    ok = mean["por"] < mean["dpos"] < mean["pow"] and elapsed < 30 and set(counts.values()) == {1000}
    record(acceptance_report, 2, "latency ordering", ok,
           f"mean round latency PoR {mean['por']:.4f}s < DPoS {mean['dpos']:.4f}s < PoW {mean['pow']:.3f}s "
           f"over 10 seeds x 100 rounds, {elapsed:.1f}s < 30s")


# 3

def test_c3_throughput_sweep(acceptance_report):
    cfg = default_config(consensus={"tx_count": 5})
    loads = list(range(10, 201, 10))
    t0 = time.perf_counter()
    sweep = throughput_sweep(cfg, ["por", "dpos", "pow"], loads, range(10))
    elapsed = time.perf_counter() - t0
    curve = {s: np.array([np.mean([r["tps"] for r in sweep if r["scheme"] == s and r["load"] == load])
                          for load in loads]) for s in ("por", "dpos", "pow")}
    ordered = int(np.sum((curve["por"] >= curve["dpos"]) & (curve["dpos"] >= curve["pow"])))
    peak = int(np.argmax(curve["por"]))
    interior = 0 < peak < len(loads) - 1 and curve["por"][peak] > max(curve["por"][0], curve["por"][-1])
    ok = ordered >= 0.9 * len(loads) and interior and elapsed < 120
    record(acceptance_report, 3, "throughput sweep", ok,
           f"PoR >= DPoS >= PoW at {ordered}/{len(loads)} loads; PoR peak {curve['por'][peak]:.1f} tx/s at load "
           f"{loads[peak]} (ends {curve['por'][0]:.1f}, {curve['por'][-1]:.1f}); {elapsed:.1f}s < 120s")


# 4

def test_c4_mining_utility(acceptance_report):
    rng = np.random.default_rng(4)
    bad = 0
    for _ in range(10_000):
        w = UtilityWeights(decay=float(rng.uniform(0.1, 10)), u_max=float(rng.uniform(0.1, 10)))
        t1, t2 = np.sort(rng.uniform(0.0, 10.0, size=2))
        if t1 == t2:
            continue
        u1, u2 = mining_utility(float(t1), w), mining_utility(float(t2), w)
        bad += not (u1 > u2 and 0.0 < u2 and u1 <= w.u_max)
    zero_ok = all(mining_utility(0.0, UtilityWeights(decay=d, u_max=u)) == u
                  for d, u in [(5.0, 1.0), (0.3, 2.5), (9.0, 7.0)])
    record(acceptance_report, 4, "mining utility", bad == 0 and zero_ok,
           f"10000 random latency pairs, {bad} violations of strict decay or range (0, u_max]; "
           f"zero latency gives exactly u_max: {zero_ok}")


# 5

def network_shapes():
    env = TobmEnv(default_config())
    space, obs, n = env.space, env.obs_dim, env.n_devices
    hidden = [64, 64]
    return {
        "actor": ([obs] + hidden + [space.dim], space.heads),
        "central critic": ([n * (obs + space.dim)] + hidden + [1], None),
        "local critic": ([obs + space.dim] + hidden + [1], None),
        "dqn": ([obs] + hidden + [len(space.grid)], None),
    }


def test_c5_gradient_oracle(acceptance_report):
    t0 = time.perf_counter()
    worst = {}
    for name, (sizes, heads) in network_shapes().items():
        worst[name] = max(finite_difference_error(sizes, heads, seed) for seed in range(20))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 10
    record(acceptance_report, 5, "gradient oracle", ok,
           "max rel. error over 20 nets: " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
           + f"; {elapsed:.1f}s < 10s")


# 6

def test_c6_ne_existence(acceptance_report):
    t0 = time.perf_counter()
    rows = analyze(default_config(), 100, seed=0)
    elapsed = time.perf_counter() - t0
    converged = sum(r["converged"] for r in rows)
    confirmed = sum(r["brd_in_ne_set"] for r in rows)
    ok = converged >= 95 and confirmed == converged and elapsed < 120 and max(r["n_players"] for r in rows) <= 4
    record(acceptance_report, 6, "NE existence", ok,
           f"best-response dynamics converged on {converged}/100 instances, {confirmed} confirmed by "
           f"enumeration; {elapsed:.1f}s < 120s")


# 7 and 8

def train_cfg(algo):
    return default_config(sim={"n_devices": 4, "episodes": TRAIN_EPISODES}, rl={"algo": algo})


@pytest.fixture(scope="module")
def maddpg_runs():
    cfg = train_cfg("maddpg")
    out = []
    for seed in SEEDS:
        t0 = time.perf_counter()
        summary, res = learning_check(cfg, seed, WINDOW)
        summary["seconds"] = time.perf_counter() - t0
        out.append(summary)
    return out


def test_c7_learning_sanity(acceptance_report, maddpg_runs):
    keys = ("first", "random", "all_local")
    avg = {k: float(np.mean([r[k] for r in maddpg_runs])) for k in keys + ("final",)}
    margins = {k: relative_margin(avg["final"], avg[k]) for k in keys}
    per_seed = [all(relative_margin(r["final"], r[k]) >= MARGIN for k in keys) for r in maddpg_runs]
    slowest = max(r["seconds"] for r in maddpg_runs)
    ok = all(m >= MARGIN for m in margins.values()) and slowest <= TRAIN_BUDGET_S
    record(acceptance_report, 7, "learning sanity", ok,
           f"final-100 eval J_sys {avg['final']:.3f} vs first-100 {avg['first']:.3f} ({margins['first']:+.1%}), "
           f"random {avg['random']:.3f} ({margins['random']:+.1%}), all_local {avg['all_local']:.3f} "
           f"({margins['all_local']:+.1%}) averaged over 5 seeds; every margin >= 5% on "
           f"{sum(per_seed)}/5 seeds individually; slowest seed {slowest:.0f}s <= {TRAIN_BUDGET_S}s")


def test_c8_cooperative_vs_independent(acceptance_report, maddpg_runs):
    cfg = train_cfg("dqn")
    dqn = []
    for seed in SEEDS:
        res = run_training(cfg, seed)
        dqn.append(window_mean(res.metrics, TRAIN_EPISODES - WINDOW, TRAIN_EPISODES))
    ma = [r["final"] for r in maddpg_runs]
    wins = sum(m >= d for m, d in zip(ma, dqn))
    record(acceptance_report, 8, "cooperative vs independent", wins >= 4,
           f"MA-DDPG >= independent DQN on {wins}/5 seeds (final-100 eval J_sys "
           + ", ".join(f"{m:.3f} vs {d:.3f}" for m, d in zip(ma, dqn)) + ")")


# 9

def test_c9_cli_determinism(acceptance_report, tmp_path):
    tiny = tmp_path / "tiny.yaml"
    tiny.write_text("sim:\n  steps_per_episode: 20\nrl:\n  warmup: 64\n  hidden: [16, 16]\n")
    invocations = [
        ["compare", "--schemes", "por,dpos,pow", "--loads", "10:200:10", "--n-seeds", "3", "--eval-episodes", "2"],
        ["consensus-bench", "--n-seeds", "3"],
        ["game-analyze", "--instances", "20"],
        ["audit", "--episodes", "2"],
        ["train", "--config", str(tiny), "--episodes", "6"],
        ["evaluate", "--config", str(tiny), "--eval-episodes", "3"],
    ]
    same, total = 0, 0
    for i, args in enumerate(invocations):
        a, b, c = (tmp_path / f"{i}{x}" for x in "abc")
        assert cli_main(args + ["--out", str(a)]) == 0
        assert cli_main(args + ["--out", str(b)]) == 0
        assert cli_main([args[0], "--manifest", str(a / "manifest.json"), "--out", str(c)]) == 0
        names = sorted(p.name for p in a.iterdir() if p.suffix in (".csv", ".npz"))
        for other in (b, c):
            for name in names:
                total += 1
                same += filecmp.cmp(a / name, other / name, shallow=False)
    record(acceptance_report, 9, "CLI determinism", same == total and total > 0,
           f"{same}/{total} output files byte-identical across repeated and manifest-driven reruns "
           f"of {len(invocations)} subcommands")
