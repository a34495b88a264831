"""Command-line experiment harness.

Subcommands: train (seed sweeps to per-seed CSV records), evaluate
(checkpoint rollout metrics and optional trajectory dump), compare
(final-window aggregation across run directories), beampattern
(pattern CSV plus an SVG polar cut), replay (trajectory audit by
independent recomputation).

Exit codes: 0 success, 2 configuration error, 3 divergence,
4 I/O or format error. AEROBEAM_THREADS caps seed-level workers.
"""

import argparse
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone

import numpy as np

from . import env as env_mod
from .array_beam import BeamConfig, ElementLayout, beam_pattern, steering_phases
from .config import (
    ALGORITHMS,
    ConfigError,
    RunConfig,
    config_hash,
    from_dict,
    load_config,
    to_dict,
    with_algo,
)
from .diffnet import load_params, save_params
from .errors import DivergenceError, GeometryError
from .mobility import step_energy
from .trainer import evaluate, greedy_policy, make_agent, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

CSV_HEADER = "episode,total_reward,mean_secrecy,mean_energy,speed_violations,collisions"
FINAL_WINDOW = 100

DB_FLOOR = -40.0
SVG_SIZE = 600


class CliError(Exception):
    """User-facing failure with an exit code."""

    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _load_cfg(path: str) -> RunConfig:
    if path is None:
        raise CliError("--config is required", EXIT_CONFIG)
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}", EXIT_IO)
    return load_config(path)


def _worker_cap() -> int:
    raw = os.environ.get("AEROBEAM_THREADS", "")
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise CliError(f"AEROBEAM_THREADS must be an integer, got {raw!r}",
                           EXIT_CONFIG)
        if cap < 1:
            raise CliError(f"AEROBEAM_THREADS must be >= 1, got {cap}", EXIT_CONFIG)
        return cap
    return os.cpu_count() or 1


def _parse_seeds(args, cfg: RunConfig):
    if getattr(args, "seeds", None) is not None and getattr(args, "seed", None) is not None:
        raise CliError("pass --seed or --seeds, not both", EXIT_CONFIG)
    if getattr(args, "seeds", None) is not None:
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
        except ValueError:
            raise CliError(f"--seeds must be comma-separated integers, got {args.seeds!r}",
                           EXIT_CONFIG)
        if not seeds:
            raise CliError("--seeds is empty", EXIT_CONFIG)
    elif getattr(args, "seed", None) is not None:
        seeds = [args.seed]
    else:
        seeds = list(cfg.seeds)
    if len(set(seeds)) != len(seeds):
        raise CliError(f"seeds must be unique, got {seeds}", EXIT_CONFIG)
    if any(s < 0 for s in seeds):
        raise CliError(f"seeds must be non-negative, got {seeds}", EXIT_CONFIG)
    return seeds


# -------------------------------------------------------------------- train

def _write_records_csv(path: str, records) -> None:
    with open(path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for r in records:
            f.write(f"{r.episode},{float(r.total_reward)!r},"
                    f"{float(r.mean_secrecy)!r},{float(r.mean_energy)!r},"
                    f"{r.speed_violations},{r.collisions}\n")


def _train_one_seed(payload):
    """Module-level so seed sweeps survive pickling under spawn."""
    cfg_doc, algo, seed, run_dir = payload
    cfg = with_algo(from_dict(cfg_doc), algo)
    ckpt_dir = None
    if cfg.algo.checkpoint_every > 0:
        ckpt_dir = os.path.join(run_dir, f"checkpoints_seed{seed}")
        os.makedirs(ckpt_dir, exist_ok=True)
    started = time.perf_counter()
    result = train(cfg, seed, checkpoint_dir=ckpt_dir)
    wall = time.perf_counter() - started
    _write_records_csv(os.path.join(run_dir, f"seed_{seed}.csv"), result.records)
    save_params(os.path.join(run_dir, f"actor_seed{seed}.json"), result.agent.actor)
    return seed, wall, result.diverged, result.error


def _run_algo_sweep(cfg: RunConfig, algo: str, seeds, out_dir: str, args) -> bool:
    """Train every seed for one algorithm; returns True if any run diverged."""
    run_dir = os.path.join(out_dir, algo)
    os.makedirs(run_dir, exist_ok=True)
    cfg_doc = to_dict(with_algo(cfg, algo))
    payloads = [(cfg_doc, algo, s, run_dir) for s in seeds]

    workers = min(_worker_cap(), len(payloads))
    results = []
    if workers <= 1 or len(payloads) == 1:
        for p in payloads:
            _say(args, f"[{algo}] training seed {p[2]} ...")
            results.append(_train_one_seed(p))
            seed, wall, diverged, _err = results[-1]
            status = "DIVERGED" if diverged else "ok"
            _say(args, f"[{algo}] seed {seed}: {status} in {wall:.1f}s")
    else:
        import multiprocessing as mp
        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            for seed, wall, diverged, _err in pool.map(_train_one_seed, payloads):
                status = "DIVERGED" if diverged else "ok"
                _say(args, f"[{algo}] seed {seed}: {status} in {wall:.1f}s")
                results.append((seed, wall, diverged, _err))

    manifest = {
        "algo": algo,
        "config_hash": config_hash(with_algo(cfg, algo)),
        "config": cfg_doc,
        "seeds": list(seeds),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "aerobeam": _package_version(),
        },
        "wall_times": {str(s): w for s, w, _, _ in results},
        "diverged": {str(s): e for s, _, d, e in results if d},
        "created": datetime.now(timezone.utc).isoformat(),
    }
    with open(os.path.join(run_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    return any(d for _, _, d, _ in results)


def _package_version() -> str:
    from . import __version__
    return __version__


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    seeds = _parse_seeds(args, cfg)
    out_dir = args.out if args.out is not None else cfg.output_dir
    algos = list(ALGORITHMS) if args.algo == "all" else [args.algo or cfg.algo.name]
    for a in algos:
        if a not in ALGORITHMS:
            raise CliError(f"unknown algorithm {a!r}; choose from "
                           f"{', '.join(ALGORITHMS)} or all", EXIT_CONFIG)
    any_diverged = False
    for algo in algos:
        any_diverged |= _run_algo_sweep(cfg, algo, seeds, out_dir, args)
    if any_diverged:
        print("at least one run diverged; partial artifacts retained",
              file=sys.stderr)
        return EXIT_DIVERGED
    _say(args, f"wrote {len(algos)} run director{'ies' if len(algos) > 1 else 'y'} "
               f"under {out_dir}")
    return EXIT_OK


# ----------------------------------------------------------------- evaluate

def _policy_from_checkpoint(cfg: RunConfig, checkpoint: str):
    if not os.path.exists(checkpoint):
        raise CliError(f"checkpoint not found: {checkpoint}", EXIT_IO)
    try:
        params = load_params(checkpoint)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"bad checkpoint {checkpoint}: {exc}", EXIT_IO)
    agent = make_agent(cfg, np.random.default_rng(0))
    if params.spec != agent.actor.spec:
        raise CliError(
            f"checkpoint actor {params.spec.sizes} does not match the "
            f"{cfg.algo.name} actor {agent.actor.spec.sizes} for this config",
            EXIT_CONFIG)
    agent.actor = params
    return greedy_policy(agent)


def _dump_trajectory(policy, cfg: RunConfig, episodes: int, seed: int, path: str):
    """Replays evaluate()'s exact stream layout, dumping one record per step."""
    env_rng, sample_rng = [
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)]
    with open(path, "w") as f:
        for _ in range(episodes):
            state = env_mod.reset(cfg, env_rng)
            obs = env_mod.observe(state, cfg)
            while True:
                raw = policy(obs, sample_rng)
                weights, disp = env_mod.decode_action(raw, cfg)
                out = env_mod.step(state, raw, cfg, env_rng)
                f.write(json.dumps(env_mod.step_record(state, weights, disp, out)))
                f.write("\n")
                state = out.next_state
                obs = env_mod.observe(state, cfg)
                if out.done:
                    break


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args.config)
    if args.algo is not None:
        cfg = with_algo(cfg, args.algo)
    seed = args.seed if args.seed is not None else 0
    policy = _policy_from_checkpoint(cfg, args.checkpoint)
    metrics = evaluate(policy, cfg, args.episodes, seed)
    out_dir = args.out if args.out is not None else "."
    os.makedirs(out_dir, exist_ok=True)
    doc = {
        "algo": cfg.algo.name,
        "checkpoint": args.checkpoint,
        "episodes": metrics.episodes,
        "steps": metrics.steps,
        "seed": seed,
        "mean_reward": metrics.mean_reward,
        "mean_secrecy": metrics.mean_secrecy,
        "mean_energy": metrics.mean_energy,
    }
    metrics_path = os.path.join(out_dir, "metrics.json")
    with open(metrics_path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
    if args.trajectory:
        traj_path = os.path.join(out_dir, "trajectory.jsonl")
        _dump_trajectory(policy, cfg, args.episodes, seed, traj_path)
        _say(args, f"trajectory -> {traj_path}")
    _say(args, f"mean reward {metrics.mean_reward:.6g}, "
               f"secrecy/step {metrics.mean_secrecy:.6g}, "
               f"energy/step {metrics.mean_energy:.6g} J -> {metrics_path}")
    return EXIT_OK


# ------------------------------------------------------------------ compare

def _read_run_dir(run_dir: str):
    manifest_path = os.path.join(run_dir, "manifest.json")
    if not os.path.isdir(run_dir):
        raise CliError(f"run directory not found: {run_dir}", EXIT_IO)
    if not os.path.exists(manifest_path):
        raise CliError(f"no manifest.json in {run_dir}", EXIT_IO)
    with open(manifest_path) as f:
        try:
            manifest = json.load(f)
        except json.JSONDecodeError as exc:
            raise CliError(f"unreadable manifest in {run_dir}: {exc}", EXIT_IO)
    for key in ("algo", "seeds", "config_hash"):
        if key not in manifest:
            raise CliError(f"manifest in {run_dir} is missing {key!r}", EXIT_IO)
    per_seed = {}
    for seed in manifest["seeds"]:
        csv_path = os.path.join(run_dir, f"seed_{seed}.csv")
        if not os.path.exists(csv_path):
            raise CliError(f"missing {csv_path}", EXIT_IO)
        per_seed[int(seed)] = _read_records_csv(csv_path)
    return manifest, per_seed


def _read_records_csv(path: str):
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0] != CSV_HEADER:
        raise CliError(f"{path}: bad or missing header", EXIT_IO)
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        if ln == "":
            continue
        parts = ln.split(",")
        if len(parts) != 6:
            raise CliError(f"{path}:{i}: expected 6 fields, got {len(parts)}",
                           EXIT_IO)
        try:
            rows.append((int(parts[0]), float(parts[1]), float(parts[2]),
                         float(parts[3]), int(parts[4]), int(parts[5])))
        except ValueError as exc:
            raise CliError(f"{path}:{i}: {exc}", EXIT_IO)
    return rows


def _final_window_stats(per_seed: dict, window: int):
    """Across-seed mean/std (population) of final-window per-seed means."""
    rewards, secrecy, energy = [], [], []
    for seed in sorted(per_seed):
        rows = per_seed[seed]
        if not rows:
            raise CliError(f"seed {seed} has an empty learning record", EXIT_IO)
        tail = rows[-window:]
        rewards.append(sum(r[1] for r in tail) / len(tail))
        secrecy.append(sum(r[2] for r in tail) / len(tail))
        energy.append(sum(r[3] for r in tail) / len(tail))
    stat = lambda xs: {"mean": float(np.mean(xs)), "std": float(np.std(xs))}
    return {"reward": stat(rewards), "secrecy": stat(secrecy),
            "energy": stat(energy)}


def _pct(new: float, base: float) -> float:
    if base == 0.0:
        return math.nan
    return 100.0 * (new - base) / base


def cmd_compare(args) -> int:
    if len(args.run_dirs) < 2:
        raise CliError("compare needs at least two run directories", EXIT_CONFIG)
    entries = []
    for d in args.run_dirs:
        manifest, per_seed = _read_run_dir(d)
        entries.append((manifest, per_seed, d))

    # Deterministic labeling regardless of argument order.
    entries.sort(key=lambda e: (e[0]["algo"], e[0]["config_hash"], e[2]))
    seen = {}
    labeled = []
    for manifest, per_seed, d in entries:
        base = manifest["algo"]
        seen[base] = seen.get(base, 0) + 1
        label = base if seen[base] == 1 else f"{base}@{seen[base]}"
        labeled.append((label, manifest, per_seed, d))

    seed_sets = [tuple(sorted(int(s) for s in m["seeds"])) for _, m, _, _ in labeled]
    if len(set(seed_sets)) != 1:
        detail = "; ".join(f"{lab}: {list(ss)}"
                           for (lab, _, _, _), ss in zip(labeled, seed_sets))
        raise CliError(f"run directories have mismatched seed sets ({detail})",
                       EXIT_CONFIG)

    window = args.window
    stats = {lab: _final_window_stats(ps, window) for lab, _, ps, _ in labeled}
    baseline = "td3" if "td3" in stats else min(stats)
    base = stats[baseline]

    report = {
        "baseline": baseline,
        "window": window,
        "seeds": list(seed_sets[0]),
        "algorithms": {},
    }
    for lab, manifest, _, d in labeled:
        s = stats[lab]
        report["algorithms"][lab] = {
            "run_dir": d,
            "config_hash": manifest["config_hash"],
            "reward": s["reward"],
            "secrecy": s["secrecy"],
            "energy": s["energy"],
            "secrecy_improvement_pct": _pct(s["secrecy"]["mean"],
                                            base["secrecy"]["mean"]) + 0.0,
            "energy_reduction_pct": -_pct(s["energy"]["mean"],
                                          base["energy"]["mean"]) + 0.0,
        }

    out_path = args.out if args.out is not None else "comparison.json"
    with open(out_path, "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)
        f.write("\n")

    if not args.quiet:
        head = (f"{'algo':<10} {'reward (mean+-std)':>24} {'secrecy/step':>20} "
                f"{'energy/step (J)':>20} {'d_secrecy':>10} {'d_energy':>10}")
        print(head)
        print("-" * len(head))
        for lab in sorted(report["algorithms"]):
            a = report["algorithms"][lab]
            print(f"{lab:<10} "
                  f"{a['reward']['mean']:>14.4f} +- {a['reward']['std']:<7.4f} "
                  f"{a['secrecy']['mean']:>11.5f} +- {a['secrecy']['std']:<6.5f} "
                  f"{a['energy']['mean']:>11.2f} +- {a['energy']['std']:<6.2f} "
                  f"{a['secrecy_improvement_pct']:>+9.2f}% "
                  f"{a['energy_reduction_pct']:>+9.2f}%")
        print(f"baseline: {baseline}; final-{window}-episode windows; "
              f"seeds {report['seeds']} -> {out_path}")
    return EXIT_OK


# -------------------------------------------------------------- beampattern

def _parse_weights(raw: str, k: int) -> np.ndarray:
    try:
        vals = [float(x) for x in raw.split(",")]
    except ValueError:
        raise CliError(f"--weights must be comma-separated numbers, got {raw!r}",
                       EXIT_CONFIG)
    if len(vals) != k:
        raise CliError(f"--weights needs {k} entries, got {len(vals)}", EXIT_CONFIG)
    return np.asarray(vals, dtype=float)


def _load_positions(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise CliError(f"positions file not found: {path}", EXIT_IO)
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise CliError(f"unreadable positions file {path}: {exc}", EXIT_IO)
    arr = np.asarray(doc, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise CliError(f"positions must be an (n, 3) array, got {arr.shape}",
                       EXIT_CONFIG)
    return arr


def _svg_path(points) -> str:
    parts = [f"{'M' if i == 0 else 'L'} {x:.3f} {y:.3f}"
             for i, (x, y) in enumerate(points)]
    return " ".join(parts) + " Z"


def svg_polar_cut(azimuths, powers, elevation: float, peak_az: float,
                  peak_val: float) -> str:
    """600x600 polar plot of |AF|^2 over azimuth at one elevation.

    Radial axis is decibels relative to the cut's own peak, floored at
    DB_FLOOR, so a flat pattern renders as the outer circle. Pure
    function of its arguments; identical inputs give identical markup.
    """
    cx = cy = SVG_SIZE / 2.0
    r_max = 260.0
    top = max(float(np.max(powers)), 1e-300)

    def radius(p):
        if p <= 0.0:
            db = DB_FLOOR
        else:
            db = max(10.0 * math.log10(p / top), DB_FLOOR)
        return r_max * (db - DB_FLOOR) / (-DB_FLOOR)

    pts = []
    for az, p in zip(azimuths, powers):
        r = radius(p)
        pts.append((cx + r * math.cos(az), cy - r * math.sin(az)))

    rings = []
    for db in (-30, -20, -10, 0):
        rr = r_max * (db - DB_FLOOR) / (-DB_FLOOR)
        rings.append(
            f'<circle cx="{cx:.0f}" cy="{cy:.0f}" r="{rr:.1f}" fill="none" '
            f'stroke="#ccc" stroke-width="1"/>'
            f'<text x="{cx + rr + 3:.1f}" y="{cy - 3:.0f}" font-size="10" '
            f'fill="#888">{db} dB</text>')

    label = (f"peak |AF|^2 = {peak_val:.6g} at az = {peak_az:.4f} rad, "
             f"el = {elevation:.4f} rad")
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" '
        f'height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">\n'
        f'<rect width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white"/>\n'
        + "\n".join(rings) + "\n"
        f'<line x1="{cx - r_max:.0f}" y1="{cy:.0f}" x2="{cx + r_max:.0f}" '
        f'y2="{cy:.0f}" stroke="#ddd" stroke-width="1"/>\n'
        f'<line x1="{cx:.0f}" y1="{cy - r_max:.0f}" x2="{cx:.0f}" '
        f'y2="{cy + r_max:.0f}" stroke="#ddd" stroke-width="1"/>\n'
        f'<path d="{_svg_path(pts)}" fill="none" stroke="#0a5" '
        f'stroke-width="1.5"/>\n'
        f'<text x="10" y="{SVG_SIZE - 10}" font-size="12" fill="#333">'
        f"{label}</text>\n"
        f"</svg>\n")


def _write_pattern_csv(path: str, azimuths, elevations, grid) -> None:
    with open(path, "w") as f:
        f.write("az_rad,el_rad,af_sq\n")
        for i, az in enumerate(azimuths):
            for j, el in enumerate(elevations):
                f.write(f"{float(az)!r},{float(el)!r},{float(grid[i, j])!r}\n")


def _read_pattern_csv(path: str):
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0] != "az_rad,el_rad,af_sq":
        raise CliError(f"{path}: bad or missing pattern header", EXIT_IO)
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        if ln == "":
            continue
        parts = ln.split(",")
        if len(parts) != 3:
            raise CliError(f"{path}:{i}: expected 3 fields", EXIT_IO)
        rows.append((float(parts[0]), float(parts[1]), float(parts[2])))
    return rows


def cmd_beampattern(args) -> int:
    cfg = _load_cfg(args.config)
    k = cfg.physics.n_uavs
    if args.positions is not None:
        positions = _load_positions(args.positions)
    else:
        state = env_mod.reset(cfg, np.random.default_rng(
            args.seed if args.seed is not None else 0))
        positions = state.uav_positions
    weights = (_parse_weights(args.weights, positions.shape[0])
               if args.weights is not None else np.ones(positions.shape[0]))

    layout = ElementLayout(positions=positions, wavelength=cfg.wavelength)
    bs = np.asarray(cfg.physics.bs_position, dtype=float)
    beam = BeamConfig(weights=weights, phases=steering_phases(layout, bs))

    rel = bs - layout.centroid
    radius = float(np.sqrt(np.sum(rel * rel)))
    bs_az = math.atan2(rel[1], rel[0])
    bs_el = math.asin(rel[2] / radius) if radius > 0 else 0.0

    n_az = args.samples
    azimuths = np.sort(np.mod(bs_az + np.arange(n_az) * (2.0 * math.pi / n_az)
                              + math.pi, 2.0 * math.pi) - math.pi)
    elevations = np.array([bs_el])
    try:
        grid = beam_pattern(layout, beam, azimuths, elevations, radius)
    except GeometryError as exc:
        raise CliError(str(exc), EXIT_CONFIG)

    out_dir = args.out if args.out is not None else "."
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "beampattern.csv")
    _write_pattern_csv(csv_path, azimuths, elevations, grid)

    # SVG is built from the re-read CSV so replotting it is a no-op.
    rows = _read_pattern_csv(csv_path)
    az = [r[0] for r in rows]
    power = [r[2] for r in rows]
    peak_idx = int(np.argmax(power))
    svg = svg_polar_cut(az, power, bs_el, az[peak_idx], power[peak_idx])
    svg_path = os.path.join(out_dir, "beampattern.svg")
    with open(svg_path, "w") as f:
        f.write(svg)
    _say(args, f"{len(rows)} samples, peak |AF|^2 = {power[peak_idx]:.6g} "
               f"at az = {az[peak_idx]:.4f} rad -> {csv_path}, {svg_path}")
    return EXIT_OK


# ------------------------------------------------------------------- replay

REPLAY_KEYS = ("uav_before", "uav_after", "eve_true", "weights",
               "secrecy", "energy", "reward", "violations")


def _recompute_step(rec: dict, cfg: RunConfig, line_no: int):
    for key in REPLAY_KEYS:
        if key not in rec:
            raise CliError(f"line {line_no}: missing field {key!r}", EXIT_IO)
    before = np.asarray(rec["uav_before"], dtype=float)
    after = np.asarray(rec["uav_after"], dtype=float)
    eve = np.asarray(rec["eve_true"], dtype=float)
    weights = np.asarray(rec["weights"], dtype=float)
    k = cfg.physics.n_uavs
    if before.shape != (k, 3) or after.shape != (k, 3):
        raise CliError(f"line {line_no}: positions must be ({k}, 3) for this "
                       f"config, got {before.shape} and {after.shape}", EXIT_IO)
    if weights.shape != (k,) or eve.shape != (2,):
        raise CliError(f"line {line_no}: bad weights or eavesdropper shape",
                       EXIT_IO)
    v = rec["violations"]
    try:
        viol = env_mod.Violations(speed_count=int(v["speed"]),
                                  boundary_count=int(v["boundary"]),
                                  collision_count=int(v["collision"]))
    except (KeyError, TypeError) as exc:
        raise CliError(f"line {line_no}: bad violations field ({exc})", EXIT_IO)

    secrecy, _, _ = env_mod.transmission_secrecy(after, weights, eve, cfg)
    deltas = after - before
    speeds = np.sqrt(np.sum(deltas * deltas, axis=1)) / cfg.mobility.dt
    energy = step_energy(speeds, cfg.energy_model, cfg.mobility.dt)
    if cfg.energy.include_comm_energy:
        energy += k * cfg.physics.element_tx_power * cfg.mobility.dt
    reward = env_mod.reward_fn(secrecy, energy, viol, cfg)
    return (abs(secrecy - float(rec["secrecy"])),
            abs(energy - float(rec["energy"])),
            abs(reward - float(rec["reward"])))


def cmd_replay(args) -> int:
    cfg = _load_cfg(args.config)
    if not os.path.exists(args.trajectory):
        raise CliError(f"trajectory file not found: {args.trajectory}", EXIT_IO)
    worst = {"secrecy": (0.0, None), "energy": (0.0, None), "reward": (0.0, None)}
    n_steps = 0
    with open(args.trajectory) as f:
        for line_no, line in enumerate(f, start=1):
            if line.strip() == "":
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CliError(f"line {line_no}: malformed JSONL ({exc.msg})",
                               EXIT_IO)
            if not isinstance(rec, dict):
                raise CliError(f"line {line_no}: expected an object", EXIT_IO)
            ds, de, dr = _recompute_step(rec, cfg, line_no)
            n_steps += 1
            for name, d in (("secrecy", ds), ("energy", de), ("reward", dr)):
                if d > worst[name][0]:
                    worst[name] = (d, line_no)

    overall = max(v[0] for v in worst.values())
    if n_steps == 0:
        _say(args, "empty trajectory: 0 steps, nothing to check")
        return EXIT_OK
    if not args.quiet:
        print(f"replayed {n_steps} steps")
        for name in ("secrecy", "energy", "reward"):
            d, where = worst[name]
            loc = f" (line {where})" if where is not None and d > 0.0 else ""
            print(f"  max |{name} - recomputed| = {d!r}{loc}")
        print(f"max discrepancy: {overall!r}")
    return EXIT_OK


# --------------------------------------------------------------------- main

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aerobeam",
        description="Swarm beamforming experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds=False):
        p.add_argument("--config", help="JSON config path")
        p.add_argument("--out", help="output directory or file")
        p.add_argument("--quiet", action="store_true",
                       help="suppress informational output")
        p.add_argument("--seed", type=int, help="single seed")
        if seeds:
            p.add_argument("--seeds", help="comma-separated seed list")

    p_train = sub.add_parser("train", help="run a training seed sweep")
    common(p_train, seeds=True)
    p_train.add_argument("--algo", help="algorithm name or 'all'")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="roll out a trained actor")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True, help="actor checkpoint")
    p_eval.add_argument("--algo", help="override the config's algorithm")
    p_eval.add_argument("--episodes", type=int, default=10)
    p_eval.add_argument("--trajectory", action="store_true",
                        help="also dump a per-step trajectory JSONL")
    p_eval.set_defaults(func=cmd_evaluate)

    p_cmp = sub.add_parser("compare", help="aggregate run directories")
    p_cmp.add_argument("run_dirs", nargs="+", metavar="RUN_DIR")
    p_cmp.add_argument("--out", help="report JSON path (default comparison.json)")
    p_cmp.add_argument("--window", type=int, default=FINAL_WINDOW,
                       help="final-episode window size")
    p_cmp.add_argument("--quiet", action="store_true")
    p_cmp.set_defaults(func=cmd_compare)

    p_beam = sub.add_parser("beampattern", help="emit pattern CSV and SVG cut")
    common(p_beam)
    p_beam.add_argument("--positions", help="JSON file with (n, 3) positions")
    p_beam.add_argument("--weights", help="comma-separated excitation weights")
    p_beam.add_argument("--samples", type=int, default=360,
                        help="azimuth sample count")
    p_beam.set_defaults(func=cmd_beampattern)

    p_replay = sub.add_parser("replay", help="audit a trajectory dump")
    p_replay.add_argument("trajectory", help="trajectory JSONL path")
    p_replay.add_argument("--config", help="JSON config path")
    p_replay.add_argument("--quiet", action="store_true")
    p_replay.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
