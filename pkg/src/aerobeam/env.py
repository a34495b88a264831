"""Episodic swarm-control environment.

A K-aircraft array beams data toward a fixed remote base station while a
ground node wanders nearby and taps the channel. Per step the agent picks
per-element excitation weights and 2-D displacements; phases are always
conjugate-steered at the base station, so the legitimate link keeps full
coherent gain and the action's leverage is geometry (tap distance) and
weight shaping. Secrecy is scored against the tap's TRUE position while
the observation only carries a noisy estimate of it.

All transition functions are pure: randomness enters through an explicit
numpy Generator, and the step consumes exactly four standard-normal draws
in a fixed order (mover speed kick, mover heading kick, estimate noise x,
estimate noise y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .array_beam import BeamConfig, ElementLayout, array_factor, steering_phases
from .channel import link_budget, secrecy_rate
from .config import RunConfig
from .errors import ConfigError
from .mobility import MoverState, gauss_markov_step, move_uav, step_energy

RESET_ATTEMPTS = 1000


@dataclass(frozen=True)
class Violations:
    speed_count: int = 0
    boundary_count: int = 0
    collision_count: int = 0


@dataclass(frozen=True)
class SwarmState:
    """Full simulator state; the agent only ever sees observe(state)."""

    uav_positions: np.ndarray      # (K, 3) m
    eve_true: MoverState           # ground tap, true kinematics
    eve_estimate: np.ndarray       # (2,) m, noisy location estimate
    bs_position: np.ndarray        # (3,) m
    step_index: int
    eve_mean_heading: float        # episode-fixed Gauss-Markov mean direction


@dataclass(frozen=True)
class StepOutcome:
    next_state: SwarmState
    reward: float
    secrecy: float                 # bit/s/Hz this step
    energy: float                  # J this step
    violations: Violations
    done: bool


def uav_bounds(cfg: RunConfig):
    p = cfg.physics
    lo = np.array([p.deploy_lo[0], p.deploy_lo[1], p.uav_altitude])
    hi = np.array([p.deploy_hi[0], p.deploy_hi[1], p.uav_altitude])
    return lo, hi


def _min_pairwise_xy(xy: np.ndarray) -> float:
    k = xy.shape[0]
    if k < 2:
        return math.inf
    best = math.inf
    for i in range(k - 1):
        d = xy[i + 1:] - xy[i]
        best = min(best, float(np.min(np.sqrt(np.sum(d * d, axis=1)))))
    return best


def _colliding_pairs(xy: np.ndarray, d_min: float) -> int:
    k = xy.shape[0]
    n = 0
    for i in range(k - 1):
        d = xy[i + 1:] - xy[i]
        n += int(np.sum(np.sqrt(np.sum(d * d, axis=1)) < d_min))
    return n


def reset(cfg: RunConfig, rng: np.random.Generator) -> SwarmState:
    """Draw an initial state: separated UAVs, tap at a random spot.

    The swarm spawns uniformly in the deployment box at the fixed flight
    altitude, rejection-resampled until pairwise separation >= d_min. The
    tap spawns uniformly in its region, starting at its mean speed with a
    fresh episode-mean heading.
    """
    p, m = cfg.physics, cfg.mobility
    k = p.n_uavs
    for _ in range(RESET_ATTEMPTS):
        xy = rng.uniform(np.array(p.deploy_lo), np.array(p.deploy_hi), (k, 2))
        if _min_pairwise_xy(xy) >= m.d_min:
            break
    else:
        raise ConfigError(
            f"mobility.d_min: could not place {k} aircraft at separation "
            f"{m.d_min} after {RESET_ATTEMPTS} attempts"
        )
    positions = np.column_stack([xy, np.full(k, p.uav_altitude)])

    eve_xy = rng.uniform(np.array(p.eve_lo), np.array(p.eve_hi))
    mean_heading = float(rng.uniform(-math.pi, math.pi))
    eve = MoverState(position=eve_xy, speed=m.eve_mean_speed, heading=mean_heading)
    estimate = eve_xy + m.eve_estimate_sigma * rng.standard_normal(2)

    return SwarmState(
        uav_positions=positions,
        eve_true=eve,
        eve_estimate=estimate,
        bs_position=np.asarray(p.bs_position, dtype=float),
        step_index=0,
        eve_mean_heading=mean_heading,
    )


def observe(state: SwarmState, cfg: RunConfig) -> np.ndarray:
    """Normalized observation vector, length 2K+2.

    UAV xy coordinates map to [-1, 1] by the deployment box; the tap
    estimate maps by its own roaming region (estimation noise can push
    those two channels slightly outside).
    """
    p = cfg.physics
    lo = np.array(p.deploy_lo)
    hi = np.array(p.deploy_hi)
    uav = 2.0 * (state.uav_positions[:, :2] - lo) / (hi - lo) - 1.0
    elo = np.array(p.eve_lo)
    ehi = np.array(p.eve_hi)
    eve = 2.0 * (state.eve_estimate - elo) / (ehi - elo) - 1.0
    return np.concatenate([uav.ravel(), eve])


def decode_action(raw, cfg: RunConfig):
    """Split a raw action in [-1,1]^(3K) into weights and displacements.

    First K entries map affinely to excitation weights in [0, 1]; the
    remaining 2K are xy displacements scaled by v_max*dt per axis, so the
    vector magnitude can reach v_max*dt*sqrt(2). That overshoot is the
    designed source of speed violations, handled (and penalized) in step.
    """
    raw = np.asarray(raw, dtype=float)
    k = cfg.physics.n_uavs
    if raw.shape != (3 * k,):
        raise ValueError(f"action must have shape ({3 * k},), got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ValueError("action must be finite")
    if np.any(np.abs(raw) > 1.0):
        raise ValueError("action components must lie in [-1, 1]")
    weights = (raw[:k] + 1.0) / 2.0
    scale = cfg.mobility.uav_v_max * cfg.mobility.dt
    displacements = scale * raw[k:].reshape(k, 2)
    return weights, displacements


def transmission_secrecy(positions: np.ndarray, weights: np.ndarray,
                         eve_xy: np.ndarray, cfg: RunConfig):
    """Secrecy rate of one transmission from the given geometry.

    Phases are conjugate-steered at the base station; both link budgets
    use the swarm-centroid distance for amplitude and exact per-element
    distances for phase. Returns (secrecy, rate_bs, rate_eve).
    """
    layout = ElementLayout(positions=positions, wavelength=cfg.wavelength)
    bs = np.asarray(cfg.physics.bs_position, dtype=float)
    beam = BeamConfig(weights=weights, phases=steering_phases(layout, bs))
    eve_point = np.array([eve_xy[0], eve_xy[1], 0.0])
    af_bs = abs(array_factor(layout, beam, bs))
    af_eve = abs(array_factor(layout, beam, eve_point))
    centroid = layout.centroid
    d_bs = float(np.sqrt(np.sum((bs - centroid) ** 2)))
    d_eve = float(np.sqrt(np.sum((eve_point - centroid) ** 2)))
    params = cfg.channel_params
    rate_bs = link_budget(params, af_bs, d_bs).rate
    rate_eve = link_budget(params, af_eve, d_eve).rate
    return secrecy_rate(rate_bs, rate_eve), rate_bs, rate_eve


def reward_fn(secrecy: float, energy: float, violations: Violations, cfg: RunConfig) -> float:
    """Weighted secrecy minus normalized energy minus violation penalties."""
    m = cfg.mdp
    return (m.secrecy_weight * (secrecy / m.secrecy_ref)
            - m.energy_weight * (energy / cfg.resolved_energy_ref)
            - m.violation_penalty * (violations.speed_count + violations.boundary_count)
            - m.collision_penalty * violations.collision_count)


def step(state: SwarmState, raw_action, cfg: RunConfig, rng: np.random.Generator) -> StepOutcome:
    """Advance one control step.

    Move the swarm (speed-clip, boundary-clamp, joint collision check with
    reject-and-restore), transmit against the tap's current true position,
    charge propulsion energy for the applied motion, then let the tap
    wander and refresh its noisy estimate.
    """
    m = cfg.mdp
    if state.step_index >= m.episode_steps:
        raise ValueError(f"episode already finished at step {state.step_index}")
    weights, displacements = decode_action(raw_action, cfg)

    bounds = uav_bounds(cfg)
    k = cfg.physics.n_uavs
    old = state.uav_positions
    moved = np.empty_like(old)
    speed_count = 0
    boundary_count = 0
    for i in range(k):
        disp3 = np.array([displacements[i, 0], displacements[i, 1], 0.0])
        new_pos, speed_flag, applied = move_uav(
            old[i], disp3, bounds, cfg.mobility.uav_v_max, cfg.mobility.dt)
        if speed_flag:
            speed_count += 1
        if np.any(new_pos != old[i] + applied):
            boundary_count += 1
        moved[i] = new_pos

    collision_count = _colliding_pairs(moved[:, :2], cfg.mobility.d_min)
    positions = old if collision_count > 0 else moved

    deltas = positions - old
    speeds = np.sqrt(np.sum(deltas * deltas, axis=1)) / cfg.mobility.dt
    energy = step_energy(speeds, cfg.energy_model, cfg.mobility.dt)
    if cfg.energy.include_comm_energy:
        energy += k * cfg.physics.element_tx_power * cfg.mobility.dt

    secrecy, _, _ = transmission_secrecy(positions, weights, state.eve_true.position, cfg)

    eve_next = gauss_markov_step(
        state.eve_true, cfg.gm_params, cfg.mobility.dt, rng.standard_normal(2),
        mean_heading=state.eve_mean_heading,
        bounds=(cfg.physics.eve_lo, cfg.physics.eve_hi),
    )
    estimate = eve_next.position + cfg.mobility.eve_estimate_sigma * rng.standard_normal(2)

    violations = Violations(
        speed_count=speed_count,
        boundary_count=boundary_count,
        collision_count=collision_count,
    )
    reward = reward_fn(secrecy, energy, violations, cfg)

    next_state = SwarmState(
        uav_positions=positions,
        eve_true=eve_next,
        eve_estimate=estimate,
        bs_position=state.bs_position,
        step_index=state.step_index + 1,
        eve_mean_heading=state.eve_mean_heading,
    )
    return StepOutcome(
        next_state=next_state,
        reward=reward,
        secrecy=secrecy,
        energy=energy,
        violations=violations,
        done=next_state.step_index >= m.episode_steps,
    )


def step_record(state: SwarmState, weights, displacements, outcome: StepOutcome) -> dict:
    """JSON-ready audit record of one step (for trajectory dumps)."""
    return {
        "step": state.step_index,
        "uav_before": state.uav_positions.tolist(),
        "uav_after": outcome.next_state.uav_positions.tolist(),
        "eve_true": state.eve_true.position.tolist(),
        "weights": np.asarray(weights, dtype=float).tolist(),
        "displacements": np.asarray(displacements, dtype=float).tolist(),
        "secrecy": outcome.secrecy,
        "energy": outcome.energy,
        "reward": outcome.reward,
        "violations": {
            "speed": outcome.violations.speed_count,
            "boundary": outcome.violations.boundary_count,
            "collision": outcome.violations.collision_count,
        },
        "done": outcome.done,
    }
