import filecmp
import json

import pytest

from tobm.cli import EXIT_CONFIG, EXIT_OK, main, parse_loads
from tobm.config import InvariantViolation


def csvs(path):
    return sorted(p.name for p in path.iterdir() if p.suffix == ".csv")


def same_outputs(a, b):
    names = csvs(a)
    assert names == csvs(b) and names
    return all(filecmp.cmp(a / n, b / n, shallow=False) for n in names)


def test_parse_loads():
    assert parse_loads("10:200:10") == list(range(10, 201, 10))
    assert len(parse_loads("10:200:10")) == 20
    for bad in ("10:200", "a:b:c", "50:10:5", "10:20:0"):
        with pytest.raises(InvariantViolation):
            parse_loads(bad)


def test_compare_writes_sweep_and_manifest(tmp_path):
    out = tmp_path / "cmp"
    code = main(["compare", "--schemes", "por,dpos,pow", "--loads", "10:200:10", "--n-seeds", "2",
                 "--eval-episodes", "1", "--out", str(out)])
    assert code == EXIT_OK
    lines = (out / "throughput.csv").read_text().splitlines()
    assert lines[0] == "scheme,load,seed,confirmed,dropped,rounds,tps"
    assert len(lines) == 1 + 3 * 20 * 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 0 and len(manifest["config_digest"]) == 64
    assert set(manifest["outputs"]) == {"comparison.csv", "throughput.csv", "config.yaml"}
    assert {"tobm", "numpy", "python"} <= set(manifest["versions"])


def test_rerun_from_manifest_is_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["consensus-bench", "--n-seeds", "2", "--seed", "4", "--out", str(a)]) == EXIT_OK
    assert main(["consensus-bench", "--manifest", str(a / "manifest.json"), "--out", str(b)]) == EXIT_OK
    assert same_outputs(a, b)
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()


def test_train_episodes_override(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("sim:\n  steps_per_episode: 10\nrl:\n  warmup: 64\n  hidden: [8, 8]\n")
    out = tmp_path / "t"
    assert main(["train", "--config", str(cfg), "--episodes", "2", "--devices", "3", "--out", str(out)]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["sim"]["episodes"] == 2 and manifest["config"]["sim"]["n_devices"] == 3
    assert (out / "checkpoint.npz").exists()
    ev = tmp_path / "ev"
    assert main(["evaluate", "--config", str(out / "config.yaml"), "--checkpoint", str(out / "checkpoint.npz"),
                 "--policies", "all_local", "--eval-episodes", "2", "--out", str(ev)]) == EXIT_OK
    rows = (ev / "metrics.csv").read_text().splitlines()
    assert len(rows) == 5 and rows[3].split(",")[2] == "maddpg"


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("weights:\n  beta_t: 1.5\n")
    assert main(["audit", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "weights.beta_t" in capsys.readouterr().err
    assert main(["audit", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["compare", "--schemes", "raft", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["compare", "--loads", "1:2", "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_audit_and_game_commands(tmp_path, capsys):
    assert main(["audit", "--episodes", "1", "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["game-analyze", "--instances", "5", "--out", str(tmp_path / "g")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "slots audited" in out and "5 instances" in out
    assert (tmp_path / "g" / "game.csv").read_text().startswith("instance,")


def test_provenance_log_written(tmp_path):
    assert main(["audit", "--out", str(tmp_path)]) == EXIT_OK
    text = (tmp_path / "provenance.log").read_text()
    assert "default sim.seed = 0" in text
