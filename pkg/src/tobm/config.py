"""Simulation configuration records and the YAML config format.

The on-disk format is a YAML mapping with one section per dataclass below
(``sim``, ``channel``, ``devices``, ``task``, ``weights``, ``consensus``,
``rl``, ``game``). Missing keys take defaults, and every applied default
is logged. Unknown keys are rejected.
"""

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class MissingFile(ConfigError):
    pass


class UnknownKey(ConfigError):
    pass


class InvariantViolation(ConfigError):
    pass


@dataclass
class SimSection:
    n_devices: int = 4
    episodes: int = 10000
    steps_per_episode: int = 100
    seed: int = 0


@dataclass
class ChannelSection:
    n_channels: int = 2
    bandwidth_hz: float = 1e6
    noise_w: float = 1e-13


@dataclass
class DeviceSection:
    f_loc_hz: list = field(default_factory=lambda: [1e9, 1e9])
    f_mine_hz: list = field(default_factory=lambda: [0.6e6, 1.4e6])
    p_levels_w: list = field(default_factory=lambda: [0.05, 0.1, 0.2])
    kappa: float = 1e-28
    gain: list = field(default_factory=lambda: [1e-11, 1e-10])
    f_edge_hz: float = 1e10


@dataclass
class TaskSection:
    d_min_bits: float = 2e5
    d_max_bits: float = 1e6
    cycles_per_bit: float = 500.0


@dataclass
class WeightsSection:
    beta_t: Optional[float] = None
    beta_e: Optional[float] = None
    w_off: float = 1.0
    w_mine: float = 1.0
    decay: float = 5.0
    u_max: float = 1.0


@dataclass
class ConsensusSection:
    scheme: str = "por"
    group_size: Optional[int] = None
    tx_count: int = 5
    tx_size_bits: float = 2000.0
    result_bits: float = 1000.0
    verify_cycles_per_bit: float = 10.0
    downlink_bps: float = 2e5
    uplink_bps: float = 2e5
    pair_bps: Optional[float] = None
    n_users: int = 100
    pow_mean_s: float = 10.0
    timeout_s: float = 1.0
    horizon_s: float = 3.0
    admission_s: float = 0.008
    max_rounds_in_flight: int = 1
    bench_mine_share: float = 1.0
    bench_rounds: int = 100


@dataclass
class RLSection:
    algo: str = "maddpg"
    hidden: list = field(default_factory=lambda: [64, 64])
    gamma: float = 0.95
    tau: float = 0.01
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    batch_size: int = 64
    buffer_size: int = 100000
    noise_start: float = 0.3
    noise_end: float = 0.02
    warmup: int = 1000
    update_every: int = 4
    eval_every: int = 10
    reward_mode: str = "shared"
    shared_critic: bool = False
    phi_grid_points: int = 3
    dqn_eps_start: float = 1.0
    dqn_eps_end: float = 0.05
    dqn_reward_mode: str = "individual"


@dataclass
class GameSection:
    max_profiles: int = 1_000_000
    mining_strategic: bool = True
    phi_grid_points: int = 3
    max_iters: int = 100


SECTIONS = {
    "sim": SimSection,
    "channel": ChannelSection,
    "devices": DeviceSection,
    "task": TaskSection,
    "weights": WeightsSection,
    "consensus": ConsensusSection,
    "rl": RLSection,
    "game": GameSection,
}


@dataclass
class SimConfig:
    sim: SimSection = field(default_factory=SimSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    devices: DeviceSection = field(default_factory=DeviceSection)
    task: TaskSection = field(default_factory=TaskSection)
    weights: WeightsSection = field(default_factory=WeightsSection)
    consensus: ConsensusSection = field(default_factory=ConsensusSection)
    rl: RLSection = field(default_factory=RLSection)
    game: GameSection = field(default_factory=GameSection)

    def __post_init__(self):
        _fill_betas(self.weights)
        if self.consensus.pair_bps is None:
            self.consensus.pair_bps = self.consensus.uplink_bps

    @property
    def group_size(self) -> int:
        # None means every device joins the miner group.
        return self.consensus.group_size or self.sim.n_devices

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **sections):
        """Copy with per-section overrides, e.g. ``replace(sim={"seed": 3})``."""
        data = self.to_dict()
        for name, upd in sections.items():
            data[name].update(upd)
        return from_dict(data, log_defaults=False)


def _fill_betas(w: WeightsSection):
    if w.beta_t is None and w.beta_e is None:
        w.beta_t, w.beta_e = 0.5, 0.5
        log.info("default weights.beta_t = 0.5, weights.beta_e = 0.5")
    elif w.beta_e is None:
        w.beta_e = round(1.0 - w.beta_t, 12)
        log.info("derived weights.beta_e = %r from beta_t", w.beta_e)
    elif w.beta_t is None:
        w.beta_t = round(1.0 - w.beta_e, 12)
        log.info("derived weights.beta_t = %r from beta_e", w.beta_t)


def _require(cond, name, msg):
    if not cond:
        raise InvariantViolation(f"{name}: {msg}", field=name)


def validate(cfg: SimConfig) -> SimConfig:
    s, ch, d, t, w, c, rl, g = (cfg.sim, cfg.channel, cfg.devices, cfg.task,
                                cfg.weights, cfg.consensus, cfg.rl, cfg.game)
    _require(s.n_devices >= 1, "sim.n_devices", "must be >= 1")
    _require(s.episodes >= 1, "sim.episodes", "must be >= 1")
    _require(s.steps_per_episode >= 1, "sim.steps_per_episode", "must be >= 1")
    _require(isinstance(s.seed, int), "sim.seed", "must be an integer")

    _require(ch.n_channels >= 1, "channel.n_channels", "must be >= 1")
    _require(ch.bandwidth_hz > 0, "channel.bandwidth_hz", "must be > 0")
    _require(ch.noise_w > 0, "channel.noise_w", "must be > 0")

    for name in ("f_loc_hz", "f_mine_hz", "gain"):
        lo_hi = getattr(d, name)
        _require(len(lo_hi) == 2 and 0 < lo_hi[0] <= lo_hi[1], f"devices.{name}",
                 "must be [lo, hi] with 0 < lo <= hi")
    p = d.p_levels_w
    _require(len(p) >= 1 and all(x >= 0 for x in p), "devices.p_levels_w", "levels must be >= 0")
    _require(all(a < b for a, b in zip(p, p[1:])), "devices.p_levels_w", "levels must be strictly increasing")
    _require(d.kappa > 0, "devices.kappa", "must be > 0")
    _require(d.f_edge_hz > 0, "devices.f_edge_hz", "must be > 0")

    _require(0 <= t.d_min_bits <= t.d_max_bits, "task.d_min_bits", "need 0 <= d_min <= d_max")
    _require(t.cycles_per_bit > 0, "task.cycles_per_bit", "must be > 0")

    _require(0 <= w.beta_t <= 1, "weights.beta_t", "must lie in [0, 1]")
    _require(0 <= w.beta_e <= 1, "weights.beta_e", "must lie in [0, 1]")
    _require(math.isclose(w.beta_t + w.beta_e, 1.0, abs_tol=1e-12), "weights.beta_e", "beta_t + beta_e must equal 1")
    _require(w.w_off >= 0, "weights.w_off", "must be >= 0")
    _require(w.w_mine >= 0, "weights.w_mine", "must be >= 0")
    _require(w.decay > 0, "weights.decay", "must be > 0")
    _require(w.u_max > 0, "weights.u_max", "must be > 0")

    _require(c.scheme in ("por", "dpos", "pow", "none"), "consensus.scheme", "one of por, dpos, pow, none")
    _require(c.group_size is None or 1 <= c.group_size <= s.n_devices, "consensus.group_size",
             "must lie in [1, n_devices]")
    _require(c.tx_count > 0, "consensus.tx_count", "must be > 0")
    for name in ("tx_size_bits", "result_bits", "verify_cycles_per_bit", "downlink_bps",
                 "uplink_bps", "pair_bps", "pow_mean_s", "timeout_s", "horizon_s"):
        _require(getattr(c, name) > 0, f"consensus.{name}", "must be > 0")
    _require(c.admission_s >= 0, "consensus.admission_s", "must be >= 0")
    _require(c.n_users >= 1, "consensus.n_users", "must be >= 1")
    _require(c.max_rounds_in_flight >= 1, "consensus.max_rounds_in_flight", "must be >= 1")
    _require(0 < c.bench_mine_share <= 1, "consensus.bench_mine_share", "must lie in (0, 1]")
    _require(c.bench_rounds >= 1, "consensus.bench_rounds", "must be >= 1")

    _require(rl.algo in ("maddpg", "ddpg", "dqn"), "rl.algo", "one of maddpg, ddpg, dqn")
    _require(len(rl.hidden) >= 1 and all(h >= 1 for h in rl.hidden), "rl.hidden", "positive layer sizes")
    _require(0 <= rl.gamma < 1, "rl.gamma", "must lie in [0, 1)")
    _require(0 <= rl.tau <= 1, "rl.tau", "must lie in [0, 1]")
    _require(rl.lr_actor > 0 and rl.lr_critic > 0, "rl.lr_actor", "learning rates must be > 0")
    _require(rl.batch_size >= 1, "rl.batch_size", "must be >= 1")
    _require(rl.buffer_size >= rl.batch_size, "rl.buffer_size", "must be >= batch_size")
    _require(rl.noise_start >= 0 and rl.noise_end >= 0, "rl.noise_start", "must be >= 0")
    _require(rl.warmup >= rl.batch_size, "rl.warmup", "must be >= batch_size")
    _require(rl.update_every >= 1, "rl.update_every", "must be >= 1")
    _require(rl.eval_every >= 1, "rl.eval_every", "must be >= 1")
    _require(rl.reward_mode in ("shared", "individual"), "rl.reward_mode", "shared or individual")
    _require(rl.dqn_reward_mode in ("shared", "individual"), "rl.dqn_reward_mode", "shared or individual")
    _require(rl.phi_grid_points >= 1, "rl.phi_grid_points", "must be >= 1")

    _require(g.max_profiles >= 1, "game.max_profiles", "must be >= 1")
    _require(g.phi_grid_points >= 1, "game.phi_grid_points", "must be >= 1")
    _require(g.max_iters >= 1, "game.max_iters", "must be >= 1")
    return cfg


def _coerce(cls, key, value):
    # YAML 1.1 reads "1e-13" as a string; accept it for float fields.
    ftype = {f.name: f.type for f in fields(cls)}[key]
    if ftype in (float, Optional[float]) and isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            name = next(n for n, c in SECTIONS.items() if c is cls) + "." + key
            raise InvariantViolation(f"{name}: not a number: {value!r}", field=name) from None
    if ftype is Optional[int] and isinstance(value, float) and value.is_integer():
        return int(value)
    if ftype in (float, Optional[float]) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if ftype is list and isinstance(value, list):
        return [float(v) if isinstance(v, str) else v for v in value]
    return value


def from_dict(data: dict, log_defaults=True) -> SimConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    extra = set(data) - set(SECTIONS)
    if extra:
        key = sorted(extra)[0]
        raise UnknownKey(f"unknown section {key!r}", field=key)
    built = {}
    for name, cls in SECTIONS.items():
        section = data.get(name) or {}
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be a mapping", field=name)
        known = {f.name for f in fields(cls)}
        extra = set(section) - known
        if extra:
            key = f"{name}.{sorted(extra)[0]}"
            raise UnknownKey(f"unknown key {key!r}", field=key)
        if log_defaults:
            for f in fields(cls):
                if f.name not in section and not (cls is WeightsSection and f.name.startswith("beta_")):
                    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
                    log.info("default %s.%s = %r", name, f.name, default)
        section = {k: _coerce(cls, k, v) for k, v in section.items()}
        try:
            built[name] = cls(**section)
        except TypeError as exc:
            raise ConfigError(str(exc), field=name) from exc
    return validate(SimConfig(**built))


def parse_config(path) -> SimConfig:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"config file not found: {path}", field=str(path))
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return from_dict(data)


def dump_config(cfg: SimConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def default_config(**sections) -> SimConfig:
    cfg = validate(SimConfig())
    return cfg.replace(**sections) if sections else cfg
