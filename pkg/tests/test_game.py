import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tobm.config import default_config
from tobm.env import Action, ChannelModel, EdgeDevice, MiningParams, Task, UtilityWeights
from tobm.game import (
    OffloadGame, SpaceTooLarge, analyze, best_response, best_response_dynamics,
    enumerate_pure_ne, from_payoffs, is_pure_ne, random_instance,
)
from tobm.rng import Streams

CFG = default_config()
MINING = MiningParams(1e4, 2, 1e3, 10, 2e5, 2e5, 2e5)


def brute_ne(table):
    """Definition restated: no player gains by any unilateral deviation."""
    n = table.ndim - 1
    found = []
    for prof in itertools.product(*map(range, table.shape[:-1])):
        stable = True
        for i in range(n):
            for s in range(table.shape[i]):
                dev = list(prof)
                dev[i] = s
                if table[tuple(dev)][i] > table[prof][i]:
                    stable = False
        if stable:
            found.append(prof)
    return found


def channel_game():
    ch = ChannelModel(2, 1e6, 1e-13)
    devs = [EdgeDevice(i, 1e9, 1e6, (0.1,), 1e-28, (5e-11, 5e-11)) for i in range(2)]
    tasks = [Task(5e5, 500)] * 2
    strategies = [[Action(1, 0, 0), Action(1, 1, 0)]] * 2
    return OffloadGame(devs, tasks, ch, UtilityWeights(), 1e10, MINING, strategies=strategies)


def test_single_player_global_argmax():
    table = np.array([[0.2], [0.9], [0.9], [-1.0]])
    game = from_payoffs(table)
    assert best_response(game, (0,), 0) == 1
    assert enumerate_pure_ne(game) == [(1,), (2,)]


def test_strictly_dominant_strategy_returned():
    rng = np.random.default_rng(3)
    table = rng.normal(size=(4, 3, 2))
    table[2, :, 0] += 100.0
    game = from_payoffs(table)
    for other in range(3):
        assert best_response(game, (0, other), 0) == 2


@pytest.mark.parametrize("seed", range(20))
def test_best_response_matches_exhaustive_argmax(seed):
    table = np.random.default_rng(seed).normal(size=(2, 3, 2))
    game = from_payoffs(table)
    for prof in itertools.product(range(2), range(3)):
        assert best_response(game, prof, 0) == int(np.argmax(table[:, prof[1], 0]))
        assert best_response(game, prof, 1) == int(np.argmax(table[prof[0], :, 1]))


def test_brd_fixed_point_one_sweep():
    game = channel_game()
    prof, conv, sweeps = best_response_dynamics(game, (0, 1), 10)
    assert (prof, conv, sweeps) == ((0, 1), True, 1)


def test_brd_anti_coordination():
    game = channel_game()
    table = game.payoff_tensor()
    assert sorted(brute_ne(table)) == [(0, 1), (1, 0)]
    prof, conv, _ = best_response_dynamics(game, (0, 0), 10)
    assert conv and prof[0] != prof[1]


def test_brd_cycling_reports_non_convergence():
    pennies = np.array([[[1, -1], [-1, 1]], [[-1, 1], [1, -1]]], dtype=float)
    game = from_payoffs(pennies)
    assert brute_ne(pennies) == [] and enumerate_pure_ne(game) == []
    prof, conv, sweeps = best_response_dynamics(game, (0, 0), 25)
    assert not conv and sweeps == 25


def test_symmetric_two_channel_has_ne():
    assert len(enumerate_pure_ne(channel_game())) >= 1


@pytest.mark.parametrize("seed", range(10))
def test_enumeration_matches_definition(seed):
    table = np.random.default_rng(seed).integers(0, 4, size=(3, 2, 3, 3)).astype(float)
    game = from_payoffs(table)
    ne = enumerate_pure_ne(game)
    assert sorted(ne) == sorted(brute_ne(table))
    for prof in ne:
        assert is_pure_ne(game, prof)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(-5, 5))
def test_affine_invariance(seed, a, b):
    table = np.random.default_rng(seed).normal(size=(3, 4, 2))
    g1, g2 = from_payoffs(table), from_payoffs(a * table + b)
    assert enumerate_pure_ne(g1) == enumerate_pure_ne(g2)
    for prof in itertools.product(range(3), range(4)):
        for i in range(2):
            assert best_response(g1, prof, i) == best_response(g2, prof, i)


def test_space_too_large():
    game = from_payoffs(np.zeros((10, 10, 10, 3)))
    with pytest.raises(SpaceTooLarge):
        enumerate_pure_ne(game, max_profiles=999)


@pytest.mark.parametrize("seed", range(8))
def test_tensor_agrees_with_scalar_route(seed):
    game = random_instance(Streams(seed).get("t"), CFG)
    table = game.payoff_tensor()
    for prof in itertools.islice(itertools.product(*map(range, game.n_strategies)), 0, None, 7):
        np.testing.assert_allclose(table[prof], game.utility(prof), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seed", range(15))
def test_converged_profile_is_enumerated(seed):
    game = random_instance(Streams(seed).get("c"), CFG)
    prof, conv, _ = best_response_dynamics(game, (0,) * game.n_players, 100)
    if conv:
        ne = enumerate_pure_ne(game)
        assert prof in ne
        assert is_pure_ne(game, prof)


def test_mining_share_not_strategic():
    game = random_instance(Streams(0).get("m"), CFG, n_players=2, n_phi=3, mining_strategic=False)
    assert {s.mine_share for s in game.strategies[0]} == {1.0}


def test_analyze_rows(tmp_path):
    from tobm.game import write_report
    rows = analyze(CFG, 5, seed=1)
    assert len(rows) == 5 and all(r["brd_in_ne_set"] == r["converged"] for r in rows)
    write_report(tmp_path / "g.csv", rows)
    assert (tmp_path / "g.csv").read_text().startswith("instance,n_players")
