import itertools
import json
import math

import numpy as np
import pytest

from aerobeam import env
from aerobeam.config import RunConfig, from_dict
from aerobeam.env import (
    SwarmState,
    Violations,
    decode_action,
    observe,
    reset,
    reward_fn,
    step,
    step_record,
    transmission_secrecy,
    uav_bounds,
)
from aerobeam.mobility import MoverState


def small_cfg(**physics):
    doc = {"physics": {"n_uavs": 2, **physics}}
    return from_dict(doc)


# ------------------------------------------------------------------- reset

def test_reset_respects_geometry():
    cfg = RunConfig()
    for seed in range(10):
        state = reset(cfg, np.random.default_rng(seed))
        pos = state.uav_positions
        assert pos.shape == (4, 3)
        assert np.all(pos[:, 2] == cfg.physics.uav_altitude)
        assert np.all(pos[:, 0] >= cfg.physics.deploy_lo[0])
        assert np.all(pos[:, 0] <= cfg.physics.deploy_hi[0])
        assert np.all(pos[:, 1] >= cfg.physics.deploy_lo[1])
        assert np.all(pos[:, 1] <= cfg.physics.deploy_hi[1])
        for i in range(4):
            for j in range(i + 1, 4):
                assert np.linalg.norm(pos[i, :2] - pos[j, :2]) >= cfg.mobility.d_min
        ex, ey = state.eve_true.position
        assert cfg.physics.eve_lo[0] <= ex <= cfg.physics.eve_hi[0]
        assert cfg.physics.eve_lo[1] <= ey <= cfg.physics.eve_hi[1]
        assert state.eve_true.speed == cfg.mobility.eve_mean_speed
        assert state.eve_true.heading == state.eve_mean_heading
        assert state.step_index == 0


def test_reset_deterministic():
    cfg = RunConfig()
    a = reset(cfg, np.random.default_rng(7))
    b = reset(cfg, np.random.default_rng(7))
    assert np.array_equal(a.uav_positions, b.uav_positions)
    assert np.array_equal(a.eve_true.position, b.eve_true.position)
    assert np.array_equal(a.eve_estimate, b.eve_estimate)
    assert a.eve_mean_heading == b.eve_mean_heading


# ----------------------------------------------------------------- observe

def test_observe_normalization_hand_computed():
    cfg = small_cfg()
    state = SwarmState(
        uav_positions=np.array([[0.0, 40.0, 100.0], [20.0, 10.0, 100.0]]),
        eve_true=MoverState(position=np.array([200.0, 0.0]), speed=5.0, heading=0.0),
        eve_estimate=np.array([100.0, 100.0]),
        bs_position=np.array([1000.0, 0.0, 0.0]),
        step_index=0,
        eve_mean_heading=0.0,
    )
    obs = observe(state, cfg)
    assert obs.shape == (6,)
    # uav 0: x=0 -> -1, y=40 -> +1; uav 1: x=20 -> 0, y=10 -> -0.5
    assert np.array_equal(obs[:4], [-1.0, 1.0, 0.0, -0.5])
    # estimate: x=100 -> -1 (region [100,300]), y=100 -> +1 (region [-100,100])
    assert np.array_equal(obs[4:], [-1.0, 1.0])


def test_observe_uses_estimate_not_truth():
    cfg = small_cfg()
    state = reset(cfg, np.random.default_rng(0))
    shifted = SwarmState(
        uav_positions=state.uav_positions,
        eve_true=state.eve_true,
        eve_estimate=state.eve_estimate + 10.0,
        bs_position=state.bs_position,
        step_index=0,
        eve_mean_heading=state.eve_mean_heading,
    )
    a, b = observe(state, cfg), observe(shifted, cfg)
    assert np.array_equal(a[:4], b[:4])
    assert not np.array_equal(a[4:], b[4:])


# ----------------------------------------------------------- decode_action

def test_decode_action_mapping():
    cfg = small_cfg()
    raw = np.array([-1.0, 1.0, 0.5, -0.5, 0.0, 1.0])
    weights, disp = decode_action(raw, cfg)
    assert np.array_equal(weights, [0.0, 1.0])
    scale = cfg.mobility.uav_v_max * cfg.mobility.dt
    assert np.array_equal(disp, scale * np.array([[0.5, -0.5], [0.0, 1.0]]))


def test_decode_action_rejects_bad_input():
    cfg = small_cfg()
    with pytest.raises(ValueError, match="shape"):
        decode_action(np.zeros(5), cfg)
    with pytest.raises(ValueError, match="finite"):
        decode_action([0.0, 0.0, np.nan, 0.0, 0.0, 0.0], cfg)
    with pytest.raises(ValueError, match="lie in"):
        decode_action([0.0, 0.0, 1.5, 0.0, 0.0, 0.0], cfg)


# ------------------------------------------------------------ scalar oracle
# Independent reimplementation of the step reward in plain python/math,
# mirroring the documented arithmetic exactly (same formula shapes), so
# grid rewards must agree bit for bit.

def _oracle_wrap(phi):
    return (phi + math.pi) % (2.0 * math.pi) - math.pi


def _oracle_af(positions, weights, phases, point, lam):
    total = complex(0.0, 0.0)
    k = 2.0 * math.pi / lam
    for (px, py, pz), w, psi in zip(positions, weights, phases):
        dx, dy, dz = px - point[0], py - point[1], pz - point[2]
        d = math.sqrt(dx * dx + dy * dy + dz * dz)
        ph = psi - k * d
        total = total + complex(w * math.cos(ph), w * math.sin(ph))
    return abs(total)


def _oracle_rate(af, dist, cfg):
    lam = cfg.wavelength
    spreading = lam / (4.0 * math.pi * dist)
    p_rx = cfg.physics.element_tx_power * af * af * spreading * spreading
    snr = p_rx / cfg.physics.noise_power
    return math.log2(1.0 + snr)


def _oracle_secrecy(positions, weights, eve_xy, cfg):
    lam = cfg.wavelength
    bs = cfg.physics.bs_position
    k = 2.0 * math.pi / lam
    phases = []
    for px, py, pz in positions:
        dx, dy, dz = px - bs[0], py - bs[1], pz - bs[2]
        d = math.sqrt(dx * dx + dy * dy + dz * dz)
        phases.append(_oracle_wrap(k * d))
    eve_pt = (eve_xy[0], eve_xy[1], 0.0)
    af_bs = _oracle_af(positions, weights, phases, bs, lam)
    af_eve = _oracle_af(positions, weights, phases, eve_pt, lam)
    n = len(positions)
    cx = sum(p[0] for p in positions) / n
    cy = sum(p[1] for p in positions) / n
    cz = sum(p[2] for p in positions) / n
    ddx, ddy, ddz = bs[0] - cx, bs[1] - cy, bs[2] - cz
    d_bs = math.sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
    edx, edy, edz = eve_pt[0] - cx, eve_pt[1] - cy, eve_pt[2] - cz
    d_eve = math.sqrt(edx * edx + edy * edy + edz * edz)
    return max(0.0, _oracle_rate(af_bs, d_bs, cfg) - _oracle_rate(af_eve, d_eve, cfg))


def _oracle_power(v, cfg):
    e = cfg.energy
    v2 = v * v
    blade = e.blade_profile_power * (1.0 + 3.0 * v2 / (e.tip_speed * e.tip_speed))
    x = v2 / (2.0 * e.hover_induced_velocity * e.hover_induced_velocity)
    induced = e.induced_power * math.sqrt(1.0 / (math.sqrt(1.0 + x * x) + x))
    parasite = (0.5 * e.drag_ratio * e.air_density * e.rotor_solidity
                * e.disc_area * v2 * v)
    return blade + induced + parasite


def _oracle_step_reward(state, raw, cfg):
    """Full scalar recomputation of one step's reward from a raw action."""
    m = cfg.mobility
    k = cfg.physics.n_uavs
    raw = [float(v) for v in raw]
    weights = [(raw[i] + 1.0) / 2.0 for i in range(k)]
    scale = m.uav_v_max * m.dt
    lo = (cfg.physics.deploy_lo[0], cfg.physics.deploy_lo[1], cfg.physics.uav_altitude)
    hi = (cfg.physics.deploy_hi[0], cfg.physics.deploy_hi[1], cfg.physics.uav_altitude)
    limit = m.uav_v_max * m.dt
    old = [tuple(p) for p in state.uav_positions]
    moved = []
    speed_count = 0
    boundary_count = 0
    for i in range(k):
        dx = scale * raw[k + 2 * i]
        dy = scale * raw[k + 2 * i + 1]
        dz = 0.0
        norm = math.sqrt(dx * dx + dy * dy + dz * dz)
        if norm > limit:
            speed_count += 1
            s = limit / norm
            dx, dy, dz = dx * s, dy * s, dz * s
        target = (old[i][0] + dx, old[i][1] + dy, old[i][2] + dz)
        new = tuple(min(max(target[j], lo[j]), hi[j]) for j in range(3))
        if any(new[j] != target[j] for j in range(3)):
            boundary_count += 1
        moved.append(new)
    collision_count = 0
    for i in range(k - 1):
        for j in range(i + 1, k):
            ddx = moved[i][0] - moved[j][0]
            ddy = moved[i][1] - moved[j][1]
            if math.sqrt(ddx * ddx + ddy * ddy) < m.d_min:
                collision_count += 1
    positions = old if collision_count > 0 else moved
    energy = 0.0
    for i in range(k):
        ddx = positions[i][0] - old[i][0]
        ddy = positions[i][1] - old[i][1]
        ddz = positions[i][2] - old[i][2]
        v = math.sqrt(ddx * ddx + ddy * ddy + ddz * ddz) / m.dt
        energy += _oracle_power(v, cfg) * m.dt
    secrecy = _oracle_secrecy(positions, weights, tuple(state.eve_true.position), cfg)
    d = cfg.mdp
    eref = cfg.physics.n_uavs * (cfg.energy.blade_profile_power
                                 + cfg.energy.induced_power) * m.dt
    if d.energy_ref is not None:
        eref = d.energy_ref
    return (d.secrecy_weight * (secrecy / d.secrecy_ref)
            - d.energy_weight * (energy / eref)
            - d.violation_penalty * (speed_count + boundary_count)
            - d.collision_penalty * collision_count)


def test_brute_force_grid_oracle_k2():
    """Exhaustive K=2 action grid against the scalar oracle, frozen tap."""
    cfg = small_cfg()
    state = reset(cfg, np.random.default_rng(123))
    weight_vals = (-1.0, 0.0, 1.0)
    disp_vals = (-1.0, 0.0, 1.0)
    grid = [np.array(w + d) for w in itertools.product(weight_vals, repeat=2)
            for d in itertools.product(disp_vals, repeat=4)]
    assert len(grid) == 729
    env_rewards = np.array(
        [step(state, a, cfg, np.random.default_rng(0)).reward for a in grid])
    oracle_rewards = np.array([_oracle_step_reward(state, a, cfg) for a in grid])
    assert np.array_equal(env_rewards, oracle_rewards)
    assert int(np.argmax(env_rewards)) == int(np.argmax(oracle_rewards))
    assert env_rewards.max() == oracle_rewards.max()


def test_secrecy_matches_oracle_k4():
    cfg = RunConfig()
    rng = np.random.default_rng(5)
    for _ in range(50):
        state = reset(cfg, rng)
        weights = rng.uniform(0.0, 1.0, 4)
        got, rate_bs, rate_eve = transmission_secrecy(
            state.uav_positions, weights, state.eve_true.position, cfg)
        want = _oracle_secrecy([tuple(p) for p in state.uav_positions],
                               [float(w) for w in weights],
                               tuple(state.eve_true.position), cfg)
        assert got == pytest.approx(want, rel=1e-10, abs=1e-12)
        assert rate_bs >= 0.0 and rate_eve >= 0.0
        assert got == max(0.0, rate_bs - rate_eve)


# -------------------------------------------------------------------- step

def test_hover_energy_when_static():
    cfg = small_cfg()
    state = reset(cfg, np.random.default_rng(1))
    out = step(state, np.zeros(6), cfg, np.random.default_rng(0))
    hover = cfg.energy_model.hover_power
    assert out.energy == hover * cfg.mobility.dt + hover * cfg.mobility.dt
    assert out.violations == Violations(0, 0, 0)
    assert np.array_equal(out.next_state.uav_positions, state.uav_positions)


def test_speed_violation_rescales_to_limit():
    cfg = small_cfg(deploy_lo=[0.0, 0.0], deploy_hi=[400.0, 400.0])
    state = SwarmState(
        uav_positions=np.array([[200.0, 200.0, 100.0], [100.0, 100.0, 100.0]]),
        eve_true=MoverState(position=np.array([200.0, 0.0]), speed=5.0, heading=0.0),
        eve_estimate=np.array([200.0, 0.0]),
        bs_position=np.array([1000.0, 0.0, 0.0]),
        step_index=0,
        eve_mean_heading=0.0,
    )
    raw = np.array([1.0, 1.0, 1.0, 1.0, 0.0, 0.0])  # uav0 commands sqrt(2)*v_max
    out = step(state, raw, cfg, np.random.default_rng(0))
    assert out.violations.speed_count == 1
    assert out.violations.boundary_count == 0
    moved = np.linalg.norm(out.next_state.uav_positions[0] - state.uav_positions[0])
    limit = cfg.mobility.uav_v_max * cfg.mobility.dt
    assert moved == pytest.approx(limit, rel=1e-12)


def test_boundary_clamp_counts_once():
    cfg = small_cfg()
    state = SwarmState(
        uav_positions=np.array([[39.0, 20.0, 100.0], [5.0, 5.0, 100.0]]),
        eve_true=MoverState(position=np.array([200.0, 0.0]), speed=5.0, heading=0.0),
        eve_estimate=np.array([200.0, 0.0]),
        bs_position=np.array([1000.0, 0.0, 0.0]),
        step_index=0,
        eve_mean_heading=0.0,
    )
    raw = np.array([1.0, 1.0, 0.5, 0.0, 0.0, 0.0])  # uav0 east 5 m, box ends at 40
    out = step(state, raw, cfg, np.random.default_rng(0))
    assert out.violations.boundary_count == 1
    assert out.next_state.uav_positions[0, 0] == 40.0


def test_collision_restores_all_positions():
    cfg = small_cfg()
    state = SwarmState(
        uav_positions=np.array([[10.0, 10.0, 100.0], [12.0, 10.0, 100.0]]),
        eve_true=MoverState(position=np.array([200.0, 0.0]), speed=5.0, heading=0.0),
        eve_estimate=np.array([200.0, 0.0]),
        bs_position=np.array([1000.0, 0.0, 0.0]),
        step_index=0,
        eve_mean_heading=0.0,
    )
    # Drive the pair together: 2 m gap closes to 0.4 m < d_min = 1.
    raw = np.array([0.0, 0.0, 0.08, 0.0, -0.08, 0.0])
    out = step(state, raw, cfg, np.random.default_rng(0))
    assert out.violations.collision_count == 1
    assert np.array_equal(out.next_state.uav_positions, state.uav_positions)
    hover = cfg.energy_model.hover_power
    assert out.energy == hover * cfg.mobility.dt + hover * cfg.mobility.dt


def test_reward_decomposition_exact():
    cfg = RunConfig()
    rng = np.random.default_rng(11)
    state = reset(cfg, rng)
    for _ in range(40):
        raw = rng.uniform(-1.0, 1.0, cfg.act_dim)
        out = step(state, raw, cfg, rng)
        assert out.reward == reward_fn(out.secrecy, out.energy, out.violations, cfg)
        m = cfg.mdp
        mirror = (m.secrecy_weight * (out.secrecy / m.secrecy_ref)
                  - m.energy_weight * (out.energy / cfg.resolved_energy_ref)
                  - m.violation_penalty * (out.violations.speed_count
                                           + out.violations.boundary_count)
                  - m.collision_penalty * out.violations.collision_count)
        assert out.reward == mirror
        state = out.next_state if not out.done else reset(cfg, rng)


def test_invariants_over_long_random_run():
    cfg = from_dict({"physics": {"n_uavs": 3}, "mdp": {"episode_steps": 100}})
    rng = np.random.default_rng(17)
    lo, hi = uav_bounds(cfg)
    state = reset(cfg, rng)
    for _ in range(2000):
        raw = rng.uniform(-1.0, 1.0, cfg.act_dim)
        out = step(state, raw, cfg, rng)
        pos = out.next_state.uav_positions
        assert np.all(pos >= lo - 1e-12) and np.all(pos <= hi + 1e-12)
        assert np.all(pos[:, 2] == cfg.physics.uav_altitude)
        for i in range(3):
            for j in range(i + 1, 3):
                assert np.linalg.norm(pos[i, :2] - pos[j, :2]) >= cfg.mobility.d_min
        speeds = np.linalg.norm(pos - state.uav_positions, axis=1) / cfg.mobility.dt
        assert np.all(speeds <= cfg.mobility.uav_v_max * (1.0 + 1e-12))
        ex, ey = out.next_state.eve_true.position
        assert cfg.physics.eve_lo[0] <= ex <= cfg.physics.eve_hi[0]
        assert cfg.physics.eve_lo[1] <= ey <= cfg.physics.eve_hi[1]
        assert out.secrecy >= 0.0
        assert out.energy > 0.0
        state = out.next_state if not out.done else reset(cfg, rng)


def test_step_determinism_bitwise():
    cfg = RunConfig()

    def run():
        rng = np.random.default_rng(3)
        state = reset(cfg, rng)
        rewards, positions = [], []
        act_rng = np.random.default_rng(99)
        for _ in range(50):
            raw = act_rng.uniform(-1.0, 1.0, cfg.act_dim)
            out = step(state, raw, cfg, rng)
            rewards.append(out.reward)
            positions.append(out.next_state.uav_positions.copy())
            state = out.next_state
        return np.array(rewards), np.array(positions), rng.standard_normal(4)

    r1, p1, tail1 = run()
    r2, p2, tail2 = run()
    assert np.array_equal(r1, r2)
    assert np.array_equal(p1, p2)
    assert np.array_equal(tail1, tail2)  # same rng consumption count


def test_episode_termination():
    cfg = from_dict({"physics": {"n_uavs": 2}, "mdp": {"episode_steps": 3}})
    rng = np.random.default_rng(0)
    state = reset(cfg, rng)
    for i in range(3):
        out = step(state, np.zeros(6), cfg, rng)
        assert out.done == (i == 2)
        state = out.next_state
    with pytest.raises(ValueError, match="finished"):
        step(state, np.zeros(6), cfg, rng)


def test_step_record_is_json_ready():
    cfg = small_cfg()
    rng = np.random.default_rng(2)
    state = reset(cfg, rng)
    raw = rng.uniform(-1.0, 1.0, 6)
    weights, disp = decode_action(raw, cfg)
    out = step(state, raw, cfg, rng)
    rec = step_record(state, weights, disp, out)
    text = json.dumps(rec)
    back = json.loads(text)
    assert back["step"] == 0
    assert back["violations"].keys() == {"speed", "boundary", "collision"}
    assert back["reward"] == out.reward
    assert back["done"] is False
    assert np.array_equal(np.array(back["uav_before"]), state.uav_positions)
