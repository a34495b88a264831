"""Acceptance gate: the nine shipping criteria, one test and pass/fail line each.

Criteria 7 and 8 read the committed desk-scale learning records under
runs/desk/. If those artifacts are absent the tests regenerate them inline
(hours of training) rather than silently passing; set AEROBEAM_SKIP_SLOW
to skip regeneration explicitly.
"""

import itertools
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from aerobeam.array_beam import (
    BeamConfig,
    ElementLayout,
    array_factor,
    steering_phases,
)
from aerobeam.channel import ChannelParams, link_budget, secrecy_rate
from aerobeam.cli import main as cli_main
from aerobeam.config import from_dict
from aerobeam.diffnet import NetSpec, NetParams, backward, forward, init_params
from aerobeam.mobility import GaussMarkovParams, MoverState, gauss_markov_step
from aerobeam.policy import (
    draw_chain_noise,
    make_schedule,
    run_chain,
    chain_backward,
)
from aerobeam.trainer import critic_update, make_agent, train, Batch

from test_env import _oracle_step_reward, small_cfg

REPO = Path(__file__).resolve().parent.parent
DESK_DIR = REPO / "runs" / "desk"
DESK_ALGOS = ("gdmtd3", "td3", "ddpg", "sac")

TINY_TRAIN = {
    "physics": {"n_uavs": 2},
    "mdp": {"episode_steps": 10},
    "algo": {"name": "td3", "episodes": 3, "batch_size": 8,
             "warmup_batches": 1, "buffer_capacity": 500,
             "critic_hidden": [10, 10], "actor_hidden": [10, 10],
             "denoiser_hidden": [10, 10, 10]},
    "seeds": [0],
}


def test_criterion_1_array_physics_exactness():
    """Steered coherence, the K^2 peak, secrecy monotonicity, inverse-square."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)

    worst = 0.0
    for _ in range(300):
        k = int(rng.integers(2, 9))
        positions = np.column_stack([
            rng.uniform(0, 40, k), rng.uniform(0, 40, k), np.full(k, 100.0)])
        lam = 2.99792458e8 / 2.4e9
        layout = ElementLayout(positions=positions, wavelength=lam)
        target = np.array([rng.uniform(500, 2000), rng.uniform(-500, 500), 0.0])
        weights = rng.uniform(0.05, 1.0, k)
        beam = BeamConfig(weights=weights, phases=steering_phases(layout, target))
        af = abs(array_factor(layout, beam, target))
        worst = max(worst, abs(af - weights.sum()) / weights.sum())
    assert worst < 1e-9

    positions = np.column_stack([
        rng.uniform(0, 40, 4), rng.uniform(0, 40, 4), np.full(4, 100.0)])
    layout = ElementLayout(positions=positions, wavelength=lam)
    bs = np.array([1000.0, 0.0, 0.0])
    beam = BeamConfig(weights=np.ones(4), phases=steering_phases(layout, bs))
    peak = abs(array_factor(layout, beam, bs)) ** 2
    assert peak == pytest.approx(16.0, rel=1e-9)

    rb = rng.uniform(0.0, 30.0, 100000)
    re = rng.uniform(0.0, 30.0, 100000)
    bump = rng.uniform(1e-6, 5.0, 100000)
    for i in range(100000):
        s = secrecy_rate(rb[i], re[i])
        assert s >= 0.0
        assert secrecy_rate(rb[i] + bump[i], re[i]) >= s
        assert secrecy_rate(rb[i], re[i] + bump[i]) <= s

    params = ChannelParams(element_tx_power=0.1, wavelength=lam,
                           noise_power=1e-12)
    for _ in range(1000):
        af = rng.uniform(0.1, 16.0)
        d = rng.uniform(10.0, 5000.0)
        near = link_budget(params, af, d).rx_power
        far = link_budget(params, af, 2.0 * d).rx_power
        assert abs(near / far - 4.0) <= 4.0 * 1e-12

    assert time.perf_counter() - t0 < 10.0


def test_criterion_2_ground_mover_stationarity():
    """AR(1) speed process holds its configured stationary moments."""
    t0 = time.perf_counter()
    gm = GaussMarkovParams(mean_speed=5.0, alpha=0.1, sigma=1.0)
    state = MoverState(position=np.zeros(2), speed=5.0, heading=0.0)
    rng = np.random.default_rng(7)
    speeds = np.empty(100000)
    for i in range(100000):
        state = gauss_markov_step(state, gm, 1.0, rng.standard_normal(2),
                                  mean_heading=0.0)
        speeds[i] = state.speed
    mean, var = speeds.mean(), speeds.var()
    assert 4.8 <= mean <= 5.2, mean
    assert 0.8 <= var <= 1.2, var
    assert time.perf_counter() - t0 < 5.0


def test_criterion_3_gradient_oracles():
    """Analytic gradients vs central differences: nets, then the full chain."""
    t0 = time.perf_counter()
    h = 1e-5

    rng = np.random.default_rng(501)
    worst_net = 0.0
    for trial in range(100):
        sizes = (int(rng.integers(1, 5)), int(rng.integers(1, 6)),
                 int(rng.integers(1, 6)), int(rng.integers(1, 4)))
        output = "tanh" if trial % 3 == 0 else "identity"
        spec = NetSpec(sizes=sizes, hidden="mish", output=output)
        params = init_params(spec, int(rng.integers(0, 2**31)))
        x = rng.standard_normal((int(rng.integers(1, 4)), sizes[0]))
        upstream = rng.standard_normal((x.shape[0], sizes[-1]))
        _, cache = forward(params, x)
        grads, _ = backward(params, cache, upstream)

        def loss(p):
            return float(np.sum(forward(p, x)[0] * upstream))

        for li in range(spec.n_layers):
            for idx in np.ndindex(params.weights[li].shape):
                p1, p2 = params.copy(), params.copy()
                p1.weights[li][idx] += h
                p2.weights[li][idx] -= h
                fd = (loss(p1) - loss(p2)) / (2.0 * h)
                an = grads.weights[li][idx]
                worst_net = max(worst_net,
                                abs(fd - an) / max(abs(fd), abs(an), 1e-6))
            for j in range(params.biases[li].shape[0]):
                p1, p2 = params.copy(), params.copy()
                p1.biases[li][j] += h
                p2.biases[li][j] -= h
                fd = (loss(p1) - loss(p2)) / (2.0 * h)
                an = grads.biases[li][j]
                worst_net = max(worst_net,
                                abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    assert worst_net < 1e-5, worst_net

    emb = 4
    rng = np.random.default_rng(502)
    worst_chain = 0.0
    for _ in range(20):
        n_steps = int(rng.integers(1, 5))
        obs_dim = int(rng.integers(1, 4))
        act_dim = int(rng.integers(1, 4))
        sch = make_schedule(n_steps, 0.1, 0.4)
        spec = NetSpec(sizes=(act_dim + emb + obs_dim, 6, 5, act_dim),
                       hidden="mish", output="identity")
        params = init_params(spec, int(rng.integers(0, 2**31)))
        cond = rng.standard_normal((int(rng.integers(1, 3)), obs_dim))
        noise = draw_chain_noise(sch, cond.shape[0], act_dim, rng)
        upstream = rng.standard_normal((cond.shape[0], act_dim))
        tape = run_chain(params, cond, sch, noise, emb, record=True)
        grads = chain_backward(params, tape, upstream, sch)

        def chain_loss(p):
            return float(np.sum(run_chain(p, cond, sch, noise, emb) * upstream))

        for li in range(spec.n_layers):
            for idx in np.ndindex(params.weights[li].shape):
                p1, p2 = params.copy(), params.copy()
                p1.weights[li][idx] += h
                p2.weights[li][idx] -= h
                fd = (chain_loss(p1) - chain_loss(p2)) / (2.0 * h)
                an = grads.weights[li][idx]
                worst_chain = max(worst_chain,
                                  abs(fd - an) / max(abs(fd), abs(an), 1e-6))
            for j in range(params.biases[li].shape[0]):
                p1, p2 = params.copy(), params.copy()
                p1.biases[li][j] += h
                p2.biases[li][j] -= h
                fd = (chain_loss(p1) - chain_loss(p2)) / (2.0 * h)
                an = grads.biases[li][j]
                worst_chain = max(worst_chain,
                                  abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    assert worst_chain < 1e-4, worst_chain
    assert time.perf_counter() - t0 < 60.0


def test_criterion_4_chain_closed_form():
    """Zero denoiser, zero kicks: the chain is a pure 1/sqrt(alpha) rescaling."""
    sch = make_schedule(5, 0.1, 0.5)
    abar5 = float(sch.alpha_bars[-1])
    assert abar5 == pytest.approx(0.1512, abs=1e-15)
    factor = abar5 ** -0.5
    assert factor == pytest.approx(2.5720, abs=5e-4)

    spec = NetSpec(sizes=(3 + 4 + 2, 6, 3), hidden="mish", output="identity")
    zero = init_params(spec, 0)
    for w in zero.weights:
        w[:] = 0.0
    for b in zero.biases:
        b[:] = 0.0
    rng = np.random.default_rng(3)
    cond = rng.standard_normal((4, 2))
    noise = draw_chain_noise(sch, 4, 3, None)  # all-zero injected noise
    noise.x_init[:] = rng.uniform(-0.35, 0.35, (4, 3))
    tape = run_chain(zero, cond, sch, noise, 4, record=True)
    expected = noise.x_init * factor
    assert np.max(np.abs(tape.pre_squash - expected)) < 1e-12


def test_criterion_5_brute_force_grid_oracle():
    """Best grid action and its reward match an exhaustive scalar recomputation."""
    from aerobeam.env import reset, step
    cfg = small_cfg()
    state = reset(cfg, np.random.default_rng(123))
    vals = (-1.0, 0.0, 1.0)
    grid = [np.array(w + d) for w in itertools.product(vals, repeat=2)
            for d in itertools.product(vals, repeat=4)]
    env_rewards = np.array(
        [step(state, a, cfg, np.random.default_rng(0)).reward for a in grid])
    oracle_rewards = np.array([_oracle_step_reward(state, a, cfg) for a in grid])
    assert int(np.argmax(env_rewards)) == int(np.argmax(oracle_rewards))
    assert env_rewards.max() == oracle_rewards.max()
    assert np.array_equal(env_rewards, oracle_rewards)


def test_criterion_6_determinism_and_replay(tmp_path, capsys):
    """Byte-identical reruns; trajectory replay discrepancy below 1e-10."""
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(TINY_TRAIN))
    for out in ("a", "b"):
        assert cli_main(["train", "--config", str(cfg_path), "--seed", "0",
                         "--out", str(tmp_path / out), "--quiet"]) == 0
    csv_a = (tmp_path / "a" / "td3" / "seed_0.csv").read_bytes()
    csv_b = (tmp_path / "b" / "td3" / "seed_0.csv").read_bytes()
    assert csv_a == csv_b

    assert cli_main(["evaluate", "--config", str(cfg_path),
                     "--checkpoint", str(tmp_path / "a" / "td3" / "actor_seed0.json"),
                     "--episodes", "2", "--seed", "1", "--out", str(tmp_path / "ev"),
                     "--trajectory", "--quiet"]) == 0
    capsys.readouterr()
    assert cli_main(["replay", str(tmp_path / "ev" / "trajectory.jsonl"),
                     "--config", str(cfg_path)]) == 0
    text = capsys.readouterr().out
    disc = float(text.split("max discrepancy: ")[1].split()[0])
    assert disc < 1e-10, disc


# ----------------------------------------------------- desk-scale criteria

def _ensure_desk_runs():
    missing = [a for a in DESK_ALGOS
               if not (DESK_DIR / a / "manifest.json").exists()]
    if not missing:
        return
    if os.environ.get("AEROBEAM_SKIP_SLOW"):
        pytest.skip(f"desk artifacts missing for {missing} and "
                    f"AEROBEAM_SKIP_SLOW is set")
    for algo in missing:
        code = cli_main(["train", "--config", str(REPO / "configs" / "desk.json"),
                         "--algo", algo, "--out", str(DESK_DIR), "--quiet"])
        assert code == 0, f"desk-scale training failed for {algo}"


def _final_window(algo: str, window: int = 100):
    """Per-seed final-window means of (reward, secrecy, energy)."""
    manifest = json.loads((DESK_DIR / algo / "manifest.json").read_text())
    rewards, secrecy, energy = [], [], []
    for seed in manifest["seeds"]:
        lines = (DESK_DIR / algo / f"seed_{seed}.csv").read_text().splitlines()
        rows = [ln.split(",") for ln in lines[1:] if ln]
        assert len(rows) >= window, f"{algo} seed {seed}: {len(rows)} episodes"
        tail = rows[-window:]
        rewards.append(sum(float(r[1]) for r in tail) / window)
        secrecy.append(sum(float(r[2]) for r in tail) / window)
        energy.append(sum(float(r[3]) for r in tail) / window)
    return np.array(rewards), np.array(secrecy), np.array(energy)


def test_criterion_7_reward_trend_reproduction():
    """Final-window reward: diffusion actor >= plain twin-delayed baseline,
    with across-seed spread no worse than 1.5x."""
    _ensure_desk_runs()
    rew_g, _, _ = _final_window("gdmtd3")
    rew_t, _, _ = _final_window("td3")
    assert len(rew_g) >= 5 and len(rew_t) >= 5
    mean_g, mean_t = rew_g.mean(), rew_t.mean()
    std_g, std_t = rew_g.std(), rew_t.std()
    print(f"final-100 reward: gdmtd3 {mean_g:.3f}+-{std_g:.3f}, "
          f"td3 {mean_t:.3f}+-{std_t:.3f}")
    assert mean_g >= mean_t, (mean_g, mean_t)
    assert std_g <= 1.5 * std_t, (std_g, std_t)


def test_criterion_8_secrecy_energy_tradeoff(tmp_path, capsys):
    """Positive secrecy delta, no baseline dominates, and the comparison
    command reports the percentage deltas."""
    _ensure_desk_runs()
    _, sec_g, en_g = _final_window("gdmtd3")
    _, sec_t, _ = _final_window("td3")
    print(f"secrecy/step: gdmtd3 {sec_g.mean():.5f}, td3 {sec_t.mean():.5f}")
    assert sec_g.mean() > sec_t.mean(), (sec_g.mean(), sec_t.mean())

    for rival in ("td3", "ddpg", "sac"):
        _, sec_r, en_r = _final_window(rival)
        dominated = sec_r.mean() > sec_g.mean() and en_r.mean() < en_g.mean()
        assert not dominated, f"{rival} dominates on both axes"

    out = tmp_path / "report.json"
    capsys.readouterr()
    assert cli_main(["compare"] + [str(DESK_DIR / a) for a in DESK_ALGOS]
                    + ["--out", str(out)]) == 0
    table = capsys.readouterr().out
    assert "%" in table
    report = json.loads(out.read_text())
    assert report["baseline"] == "td3"
    gdm = report["algorithms"]["gdmtd3"]
    assert math.isfinite(gdm["secrecy_improvement_pct"])
    assert math.isfinite(gdm["energy_reduction_pct"])
    assert gdm["secrecy_improvement_pct"] > 0.0
    print(f"vs td3: secrecy {gdm['secrecy_improvement_pct']:+.2f}%, "
          f"energy {gdm['energy_reduction_pct']:+.2f}%")


def test_criterion_9_baseline_integrity():
    """Reduced-flag aliasing equality and frozen-batch critic descent."""
    base_algo = {**TINY_TRAIN["algo"], "name": "td3", "use_twin_min": False,
                 "target_noise_sigma": 0.0, "policy_delay": 1}
    flagged = from_dict({**TINY_TRAIN, "algo": base_algo})
    plain = from_dict({**TINY_TRAIN, "algo": {**TINY_TRAIN["algo"], "name": "ddpg"}})
    res_a = train(flagged, 17)
    res_b = train(plain, 17)
    assert res_a.records == res_b.records

    cfg = from_dict({**TINY_TRAIN,
                     "algo": {**TINY_TRAIN["algo"], "critic_lr": 1e-3,
                              "critic_hidden": [32, 32]}})
    agent = make_agent(cfg, np.random.default_rng(3))
    rng = np.random.default_rng(4)
    batch = Batch(
        obs=rng.uniform(-1, 1, (8, cfg.obs_dim)),
        actions=rng.uniform(-1, 1, (8, cfg.act_dim)),
        rewards=rng.standard_normal(8),
        next_obs=rng.uniform(-1, 1, (8, cfg.obs_dim)),
        dones=np.zeros(8),
    )
    losses = [critic_update(agent, batch, np.random.default_rng(42))[0]
              for _ in range(50)]
    for prev, cur in zip(losses, losses[1:]):
        assert cur <= prev * (1.0 + 1e-9)
