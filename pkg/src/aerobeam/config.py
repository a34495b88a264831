"""Run configuration: typed sections, strict JSON loading, canonical hashing.

A config document is plain JSON with optional sections; missing keys fall
back to defaults (the paper-scale scenario), unknown keys are rejected,
and cross-field constraints are checked at load time so a bad run dies
before any compute is spent.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, fields, replace

from .array_beam import wavelength_for
from .channel import ChannelParams
from .errors import ConfigError
from .mobility import EnergyModel, GaussMarkovParams

ALGORITHMS = ("gdmtd3", "td3", "ddpg", "sac")


@dataclass(frozen=True)
class PhysicsParams:
    n_uavs: int = 4
    element_tx_power: float = 0.1        # W per element
    carrier_frequency: float = 2.4e9     # Hz
    noise_power: float = 1e-12           # W (-90 dBm)
    deploy_lo: tuple = (0.0, 0.0)        # m, xy box for the swarm
    deploy_hi: tuple = (40.0, 40.0)
    uav_altitude: float = 100.0          # m, fixed flight level
    bs_position: tuple = (1000.0, 0.0, 0.0)
    eve_lo: tuple = (100.0, -100.0)      # m, ground region the tap roams
    eve_hi: tuple = (300.0, 100.0)


@dataclass(frozen=True)
class MobilityConfig:
    eve_mean_speed: float = 5.0
    eve_alpha: float = 0.1
    eve_sigma: float = 1.0
    uav_v_max: float = 10.0
    dt: float = 1.0
    d_min: float = 1.0
    eve_estimate_sigma: float = 5.0


@dataclass(frozen=True)
class EnergyConfig:
    blade_profile_power: float = 79.86
    induced_power: float = 88.63
    tip_speed: float = 120.0
    hover_induced_velocity: float = 4.03
    drag_ratio: float = 0.6
    air_density: float = 1.225
    rotor_solidity: float = 0.05
    disc_area: float = 0.503
    include_comm_energy: bool = False


@dataclass(frozen=True)
class MdpParams:
    episode_steps: int = 300
    secrecy_weight: float = 1.0
    energy_weight: float = 1.0
    secrecy_ref: float = 1.0
    energy_ref: float | None = None      # None -> swarm hover energy per step
    violation_penalty: float = 0.1
    collision_penalty: float = 1.0


@dataclass(frozen=True)
class AlgoParams:
    name: str = "gdmtd3"
    episodes: int = 1000
    gamma: float = 0.95
    tau: float = 0.005
    policy_delay: int = 2
    target_noise_sigma: float = 0.2
    target_noise_clip: float = 0.5
    use_twin_min: bool = True
    batch_size: int = 256
    buffer_capacity: int = 100000
    critic_lr: float = 1e-3
    actor_lr: float = 1e-4
    exploration_sigma: float = 0.1
    sac_alpha: float = 0.2
    warmup_batches: int = 10
    updates_per_step: int = 1
    critic_hidden: tuple = (256, 256)
    actor_hidden: tuple = (256, 256)
    denoiser_hidden: tuple = (256, 256, 256)
    hidden_activation: str = "relu"
    checkpoint_every: int = 0


@dataclass(frozen=True)
class DiffusionParams:
    n_steps: int = 5
    beta_min: float = 0.1
    beta_max: float = 0.5
    time_embed_dim: int = 8
    consistency_weight: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    physics: PhysicsParams = PhysicsParams()
    mobility: MobilityConfig = MobilityConfig()
    energy: EnergyConfig = EnergyConfig()
    mdp: MdpParams = MdpParams()
    algo: AlgoParams = AlgoParams()
    diffusion: DiffusionParams = DiffusionParams()
    seeds: tuple = (0,)
    output_dir: str = "runs"

    @property
    def wavelength(self) -> float:
        return wavelength_for(self.physics.carrier_frequency)

    @property
    def energy_model(self) -> EnergyModel:
        e = self.energy
        return EnergyModel(
            blade_profile_power=e.blade_profile_power,
            induced_power=e.induced_power,
            tip_speed=e.tip_speed,
            hover_induced_velocity=e.hover_induced_velocity,
            drag_ratio=e.drag_ratio,
            air_density=e.air_density,
            rotor_solidity=e.rotor_solidity,
            disc_area=e.disc_area,
        )

    @property
    def resolved_energy_ref(self) -> float:
        if self.mdp.energy_ref is not None:
            return self.mdp.energy_ref
        return self.physics.n_uavs * self.energy_model.hover_power * self.mobility.dt

    @property
    def channel_params(self) -> ChannelParams:
        return ChannelParams(
            element_tx_power=self.physics.element_tx_power,
            noise_power=self.physics.noise_power,
            wavelength=self.wavelength,
        )

    @property
    def gm_params(self) -> GaussMarkovParams:
        m = self.mobility
        return GaussMarkovParams(mean_speed=m.eve_mean_speed, alpha=m.eve_alpha, sigma=m.eve_sigma)

    @property
    def obs_dim(self) -> int:
        return 2 * self.physics.n_uavs + 2

    @property
    def act_dim(self) -> int:
        return 3 * self.physics.n_uavs


# ---------------------------------------------------------------- converters

def _num(x, path):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {x!r}")
    v = float(x)
    if not math.isfinite(v):
        raise ConfigError(f"{path}: must be finite, got {x!r}")
    return v


def _int(x, path):
    if isinstance(x, bool) or not isinstance(x, int):
        raise ConfigError(f"{path}: expected an integer, got {x!r}")
    return x


def _bool(x, path):
    if not isinstance(x, bool):
        raise ConfigError(f"{path}: expected a boolean, got {x!r}")
    return x


def _str(x, path):
    if not isinstance(x, str):
        raise ConfigError(f"{path}: expected a string, got {x!r}")
    return x


def _num_tuple(n):
    def conv(x, path):
        if not isinstance(x, (list, tuple)) or len(x) != n:
            raise ConfigError(f"{path}: expected a list of {n} numbers, got {x!r}")
        return tuple(_num(v, f"{path}[{i}]") for i, v in enumerate(x))
    return conv


def _int_tuple(x, path):
    if not isinstance(x, (list, tuple)) or len(x) == 0:
        raise ConfigError(f"{path}: expected a non-empty list of integers, got {x!r}")
    return tuple(_int(v, f"{path}[{i}]") for i, v in enumerate(x))


def _opt_num(x, path):
    if x is None:
        return None
    return _num(x, path)


_CONVERTERS = {
    PhysicsParams: {
        "n_uavs": _int,
        "element_tx_power": _num,
        "carrier_frequency": _num,
        "noise_power": _num,
        "deploy_lo": _num_tuple(2),
        "deploy_hi": _num_tuple(2),
        "uav_altitude": _num,
        "bs_position": _num_tuple(3),
        "eve_lo": _num_tuple(2),
        "eve_hi": _num_tuple(2),
    },
    MobilityConfig: {f.name: _num for f in fields(MobilityConfig)},
    EnergyConfig: {
        **{f.name: _num for f in fields(EnergyConfig) if f.name != "include_comm_energy"},
        "include_comm_energy": _bool,
    },
    MdpParams: {
        "episode_steps": _int,
        "secrecy_weight": _num,
        "energy_weight": _num,
        "secrecy_ref": _num,
        "energy_ref": _opt_num,
        "violation_penalty": _num,
        "collision_penalty": _num,
    },
    AlgoParams: {
        "name": _str,
        "episodes": _int,
        "gamma": _num,
        "tau": _num,
        "policy_delay": _int,
        "target_noise_sigma": _num,
        "target_noise_clip": _num,
        "use_twin_min": _bool,
        "batch_size": _int,
        "buffer_capacity": _int,
        "critic_lr": _num,
        "actor_lr": _num,
        "exploration_sigma": _num,
        "sac_alpha": _num,
        "warmup_batches": _int,
        "updates_per_step": _int,
        "critic_hidden": _int_tuple,
        "actor_hidden": _int_tuple,
        "denoiser_hidden": _int_tuple,
        "hidden_activation": _str,
        "checkpoint_every": _int,
    },
    DiffusionParams: {
        "n_steps": _int,
        "beta_min": _num,
        "beta_max": _num,
        "time_embed_dim": _int,
        "consistency_weight": _num,
    },
}

_SECTIONS = {
    "physics": PhysicsParams,
    "mobility": MobilityConfig,
    "energy": EnergyConfig,
    "mdp": MdpParams,
    "algo": AlgoParams,
    "diffusion": DiffusionParams,
}


def _build_section(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    conv = _CONVERTERS[cls]
    unknown = set(data) - set(conv)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown key")
    kwargs = {k: conv[k](v, f"{path}.{k}") for k, v in data.items()}
    return cls(**kwargs)


def from_dict(doc: dict) -> RunConfig:
    """Build and validate a RunConfig from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("config root: expected an object")
    known = set(_SECTIONS) | {"seeds", "output_dir"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown key")
    kwargs = {}
    for key, cls in _SECTIONS.items():
        if key in doc:
            kwargs[key] = _build_section(cls, doc[key], key)
    if "seeds" in doc:
        seeds = _int_tuple(doc["seeds"], "seeds")
        kwargs["seeds"] = seeds
    if "output_dir" in doc:
        kwargs["output_dir"] = _str(doc["output_dir"], "output_dir")
    cfg = RunConfig(**kwargs)
    validate(cfg)
    return cfg


def load_config(path: str | None) -> RunConfig:
    """Load a config JSON file; None loads pure defaults."""
    if path is None:
        cfg = RunConfig()
        validate(cfg)
        return cfg
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(doc)


def to_dict(cfg: RunConfig) -> dict:
    """Serialize to a JSON-ready dict (tuples become lists)."""
    doc = {}
    for key, cls in _SECTIONS.items():
        section = getattr(cfg, key)
        doc[key] = {
            f.name: (list(v) if isinstance(v := getattr(section, f.name), tuple) else v)
            for f in fields(cls)
        }
    doc["seeds"] = list(cfg.seeds)
    doc["output_dir"] = cfg.output_dir
    return doc


def config_hash(cfg: RunConfig) -> str:
    """Stable content hash of the canonical JSON serialization."""
    canon = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _require(cond, field, message):
    if not cond:
        raise ConfigError(f"{field}: {message}")


def validate(cfg: RunConfig) -> None:
    p, m, e, d, a, di = cfg.physics, cfg.mobility, cfg.energy, cfg.mdp, cfg.algo, cfg.diffusion

    _require(p.n_uavs >= 1, "physics.n_uavs", "need at least one aircraft")
    _require(p.element_tx_power > 0, "physics.element_tx_power", "must be positive")
    _require(p.carrier_frequency > 0, "physics.carrier_frequency", "must be positive")
    _require(p.noise_power > 0, "physics.noise_power", "must be positive")
    _require(p.deploy_hi[0] > p.deploy_lo[0] and p.deploy_hi[1] > p.deploy_lo[1],
             "physics.deploy_hi", "deployment box must have positive extent")
    _require(p.eve_hi[0] > p.eve_lo[0] and p.eve_hi[1] > p.eve_lo[1],
             "physics.eve_hi", "eavesdropper region must have positive extent")
    _require(p.uav_altitude > 0, "physics.uav_altitude", "must be positive")
    bs_in_box = (p.deploy_lo[0] <= p.bs_position[0] <= p.deploy_hi[0]
                 and p.deploy_lo[1] <= p.bs_position[1] <= p.deploy_hi[1]
                 and p.bs_position[2] == p.uav_altitude)
    _require(not bs_in_box, "physics.bs_position",
             "base station may not sit inside the deployment volume")

    _require(m.eve_mean_speed >= 0, "mobility.eve_mean_speed", "must be >= 0")
    _require(0.0 <= m.eve_alpha <= 1.0, "mobility.eve_alpha", "must lie in [0, 1]")
    _require(m.eve_sigma >= 0, "mobility.eve_sigma", "must be >= 0")
    _require(m.uav_v_max > 0, "mobility.uav_v_max", "must be positive")
    _require(m.dt > 0, "mobility.dt", "must be positive")
    _require(m.d_min >= 0, "mobility.d_min", "must be >= 0")
    _require(m.eve_estimate_sigma >= 0, "mobility.eve_estimate_sigma", "must be >= 0")
    if m.d_min > 0 and p.n_uavs > 1:
        # Sufficient feasibility bound: a d_min-spaced grid must fit K points.
        nx = math.floor((p.deploy_hi[0] - p.deploy_lo[0]) / m.d_min) + 1
        ny = math.floor((p.deploy_hi[1] - p.deploy_lo[1]) / m.d_min) + 1
        _require(p.n_uavs <= nx * ny, "mobility.d_min",
                 f"cannot place {p.n_uavs} aircraft at separation {m.d_min} in the deployment box")

    for name in ("blade_profile_power", "induced_power", "tip_speed", "hover_induced_velocity",
                 "drag_ratio", "air_density", "rotor_solidity", "disc_area"):
        _require(getattr(e, name) > 0, f"energy.{name}", "must be positive")

    _require(d.episode_steps >= 1, "mdp.episode_steps", "must be >= 1")
    _require(d.secrecy_ref > 0, "mdp.secrecy_ref", "must be positive")
    _require(d.energy_ref is None or d.energy_ref > 0, "mdp.energy_ref", "must be positive")
    _require(d.violation_penalty >= 0, "mdp.violation_penalty", "must be >= 0")
    _require(d.collision_penalty >= 0, "mdp.collision_penalty", "must be >= 0")

    _require(a.name in ALGORITHMS, "algo.name", f"must be one of {ALGORITHMS}")
    _require(a.episodes >= 0, "algo.episodes", "must be >= 0")
    _require(0.0 <= a.gamma <= 1.0, "algo.gamma", "must lie in [0, 1]")
    _require(0.0 < a.tau <= 1.0, "algo.tau", "must lie in (0, 1]")
    _require(a.policy_delay >= 1, "algo.policy_delay", "must be >= 1")
    _require(a.target_noise_sigma >= 0, "algo.target_noise_sigma", "must be >= 0")
    _require(a.target_noise_clip >= 0, "algo.target_noise_clip", "must be >= 0")
    _require(a.batch_size >= 1, "algo.batch_size", "must be >= 1")
    _require(a.buffer_capacity >= a.batch_size, "algo.buffer_capacity",
             "must be at least batch_size")
    _require(a.critic_lr > 0, "algo.critic_lr", "must be positive")
    _require(a.actor_lr > 0, "algo.actor_lr", "must be positive")
    _require(a.exploration_sigma >= 0, "algo.exploration_sigma", "must be >= 0")
    _require(a.sac_alpha >= 0, "algo.sac_alpha", "must be >= 0")
    _require(a.warmup_batches >= 1, "algo.warmup_batches", "must be >= 1")
    _require(a.updates_per_step >= 0, "algo.updates_per_step", "must be >= 0")
    for field_name in ("critic_hidden", "actor_hidden", "denoiser_hidden"):
        widths = getattr(a, field_name)
        _require(all(isinstance(w, int) and w >= 1 for w in widths),
                 f"algo.{field_name}", "must be positive layer widths")
    _require(a.hidden_activation in ("relu", "mish"), "algo.hidden_activation",
             "must be 'relu' or 'mish'")
    _require(a.checkpoint_every >= 0, "algo.checkpoint_every", "must be >= 0")

    _require(di.n_steps >= 1, "diffusion.n_steps", "must be >= 1")
    _require(0.0 < di.beta_min <= di.beta_max < 1.0, "diffusion.beta_min",
             "need 0 < beta_min <= beta_max < 1")
    _require(di.time_embed_dim >= 2 and di.time_embed_dim % 2 == 0,
             "diffusion.time_embed_dim", "must be an even integer >= 2")
    _require(di.consistency_weight >= 0, "diffusion.consistency_weight", "must be >= 0")

    _require(len(cfg.seeds) >= 1, "seeds", "need at least one seed")
    _require(len(set(cfg.seeds)) == len(cfg.seeds), "seeds", "must be unique")
    _require(all(s >= 0 for s in cfg.seeds), "seeds", "must be non-negative")


def with_algo(cfg: RunConfig, name: str) -> RunConfig:
    """Copy of cfg running a different algorithm.

    Only the name changes; flags that are definitional to a baseline
    (e.g. DDPG's single-critic target) are enforced by the trainer.
    """
    if name not in ALGORITHMS:
        raise ConfigError(f"algo.name: must be one of {ALGORITHMS}")
    return replace(cfg, algo=replace(cfg.algo, name=name))
