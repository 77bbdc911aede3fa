"""Run orchestration for the command line: training runs, evaluation presets,
trajectory export, verification and plot re-rendering.

Every file written here carries a run hash that depends only on the inputs
(config, seed, checkpoint bytes), so deterministic re-runs reproduce
byte-identical CSVs.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
import time

import numpy as np

from . import kernels, plots
from .eqnn import NetConfig
from .env import EnvConfig, write_trajectory_log
from .metrics import (EIGHT_DIRECTIONS, evaluate, eight_direction, ideal_poses, initial_states, rollout,
                      te_o, te_p, write_trajectory_csv)
from .rl import PRESETS, Agent, TrainConfig, config_hash, train
from .symmetry import build_g1_profile, build_toy_profile
from .verify import format_table, run_suite  # noqa: F401  (format_table re-exported for the CLI)


class UsageError(ValueError):
    """Bad invocation or configuration (exit code 2)."""


def output_root():
    return os.environ.get("SYMMEQ_OUT") or "."


def resolve_out(out, default):
    """Absolute ``out`` is used as given; relative paths sit under the output root."""
    path = out or default
    return path if os.path.isabs(path) else os.path.join(output_root(), path)


def _hash(*parts):
    h = hashlib.sha256()
    for p in parts:
        h.update(p if isinstance(p, bytes) else json.dumps(p, sort_keys=True).encode())
    return h.hexdigest()[:16]


def load_train_config(path=None, preset=None, **overrides):
    data = {}
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"preset: unknown {preset!r}; expected one of {', '.join(PRESETS)}")
        data = copy.deepcopy(PRESETS[preset])
    if path:
        try:
            with open(path) as fh:
                file_data = json.load(fh)
        except OSError as exc:
            raise UsageError(f"config: cannot read {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config: {path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
        if not isinstance(file_data, dict):
            raise UsageError("config: top level must be an object")
        _merge(data, file_data)
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig.from_json(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _merge(base, over):
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------------ train

def run_train(cfg: TrainConfig, out_dir, log=print):
    """Train one seed; writes metrics.csv, checkpoints and manifest.json."""
    os.makedirs(out_dir, exist_ok=True)
    run_hash = _hash("train", cfg.to_json())
    t0 = time.perf_counter()
    agent, rows = train(cfg, out_dir, tag=run_hash)
    final = {k: v for k, v in rows[-1].items() if k != "wall_time"} if rows else {}
    manifest = {
        "run": run_hash,
        "command": "train",
        "variant": cfg.variant,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "config": cfg.to_json(),
        "kernel_backend": kernels.BACKEND,
        "wall_time": time.perf_counter() - t0,
        "final_metrics": final,
        "checkpoint": f"checkpoint_{cfg.iterations:05d}.json" if cfg.checkpoint_every else None,
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    log(f"{cfg.variant} seed {cfg.seed}: {len(rows)} iterations in {manifest['wall_time']:.1f}s -> {out_dir}")
    return agent, manifest


# ------------------------------------------------------------------- eval

def load_agent(path, profile=None):
    try:
        with open(path) as fh:
            raw = fh.read()
        data = json.loads(raw)
    except OSError as exc:
        raise UsageError(f"checkpoint: cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"checkpoint: {path}: invalid JSON") from exc
    agent, d = Agent.load(data)
    if profile is not None:
        expected = agent.profile.name.split("_")[0]
        if profile != expected:
            raise UsageError(f"checkpoint profile {agent.profile.name!r} does not match --profile {profile}")
    env_cfg = EnvConfig.from_json(d.get("train_config", {}).get("env", {}), "checkpoint.env")
    return agent, env_cfg, raw.encode()


def _curves(trajs):
    tp = np.mean([te_p(t)[0] for t in trajs], axis=0)
    to = np.mean([te_o(t)[0] for t in trajs], axis=0)
    return tp, to


def write_curves(out_dir, trajs, dt, tag):
    tp, to = _curves(trajs)
    path = os.path.join(out_dir, "te_curves.csv")
    with open(path, "w") as fh:
        fh.write(f"# run {tag}\n")
        fh.write("step,time,te_p,te_o\n")
        for i, (a, b) in enumerate(zip(tp, to)):
            fh.write(f"{i},{float(i * dt)!r},{float(a)!r},{float(b)!r}\n")
    render_curves(path, out_dir, tag)
    return path


def render_curves(csv_path, out_dir, tag=None):
    cols = plots.read_csv_columns(csv_path)
    t = cols["time"]
    note = f"run {tag}" if tag else None
    plots.write_svg(os.path.join(out_dir, "te_p.svg"), plots.line_plot(
        [(t, cols["te_p"], "TE-P")], "Position tracking error", "time (s)", "TE-P (m)", note))
    plots.write_svg(os.path.join(out_dir, "te_o.svg"), plots.line_plot(
        [(t, cols["te_o"], "TE-O")], "Heading tracking error", "time (s)", "TE-O (rad)", note))


def direction_name(cx, cy):
    def part(v, pos, neg):
        return pos if v > 0 else neg if v < 0 else ""
    return (part(cx, "fwd", "back") + "_" + part(cy, "left", "right")).strip("_")


def run_eval(checkpoint, out_dir, episodes=64, seed=0, preset="random", steps=None, profile=None, log=print):
    agent, env_cfg, raw = load_agent(checkpoint, profile)
    if episodes < 1:
        raise UsageError("--episodes must be at least 1")
    os.makedirs(out_dir, exist_ok=True)
    tag = _hash("eval", raw, seed, episodes, preset, steps)
    written = []
    summary = {"run": tag, "command": "eval", "checkpoint": os.path.abspath(checkpoint),
               "variant": agent.variant, "seed": seed, "episodes": episodes, "preset": preset}
    if preset in ("random", "all"):
        report, trajs = evaluate(agent, env_cfg, episodes, steps or env_cfg.episode_length, seed)
        report.write_csv(os.path.join(out_dir, "report.csv"), f"run {tag}")
        report.write_json(os.path.join(out_dir, "report.json"), {"run": tag, "variant": agent.variant})
        written += ["report.csv", "report.json", "te_curves.csv", "te_p.svg", "te_o.svg"]
        write_curves(out_dir, trajs, env_cfg.dt, tag)
        summary["metrics"] = report.to_json()
        log(f"TE-V {report.te_v[0]:.3f} cm/s  TE-P {report.te_p[0]:.4f} m  TE-O {report.te_o[0]:.4f} rad  "
            f"Temp-S {report.temp_s[0]:.4f}  Spat-S {report.spat_s[0]:.3e}")
    if preset in ("eight-dir", "all"):
        trajs = eight_direction(agent, env_cfg, seed)
        paths = []
        for (cx, cy), traj in zip(EIGHT_DIRECTIONS, trajs):
            name = f"eight_dir_{direction_name(cx, cy)}.csv"
            write_trajectory_csv(os.path.join(out_dir, name), traj, f"run {tag}")
            written.append(name)
            paths.append((traj.pose[:, :2], ideal_poses(traj)[:, :2], f"({cx:+.1f}, {cy:+.1f})"))
        plots.write_svg(os.path.join(out_dir, "eight_dir_overlay.svg"),
                        plots.path_overlay(paths, "Eight-direction tracking (dashed: ideal)", f"run {tag}"))
        write_drive_profile(out_dir, trajs[0], tag)
        written += ["eight_dir_overlay.svg", "drive_vs_distance.csv", "drive_vs_distance.svg"]
    summary["files"] = written
    _write_json(os.path.join(out_dir, "eval_manifest.json"), summary)
    return summary


def write_drive_profile(out_dir, traj, tag):
    """Per-side stance drive against travelled distance (forward walk)."""
    step_len = np.linalg.norm(np.diff(traj.pose[:, :2], axis=0), axis=1)
    dist = np.cumsum(step_len)
    path = os.path.join(out_dir, "drive_vs_distance.csv")
    with open(path, "w") as fh:
        fh.write(f"# run {tag}\n")
        fh.write("step,distance,drive_left,drive_right\n")
        for i in range(len(dist)):
            fh.write(f"{i + 1},{float(dist[i])!r},{float(traj.drive[i, 0])!r},{float(traj.drive[i, 1])!r}\n")
    render_drive(path, out_dir, tag)


def render_drive(csv_path, out_dir, tag=None):
    cols = plots.read_csv_columns(csv_path)
    svg = plots.line_plot([(cols["distance"], cols["drive_left"], "left"),
                           (cols["distance"], cols["drive_right"], "right", "5 3")],
                          "Drive magnitude per side", "distance travelled (m)", "|joint velocity| (rad/s)",
                          f"run {tag}" if tag else None)
    plots.write_svg(os.path.join(out_dir, "drive_vs_distance.svg"), svg)


# ---------------------------------------------------------------- rollout

def run_rollout(checkpoint, out_dir, episodes=1, seed=0, steps=None, log=print):
    agent, env_cfg, raw = load_agent(checkpoint)
    if episodes < 1:
        raise UsageError("--episodes must be at least 1")
    os.makedirs(out_dir, exist_ok=True)
    tag = _hash("rollout", raw, seed, episodes, steps)
    steps = steps or env_cfg.episode_length
    trajs, S = rollout(agent, env_cfg, initial_states(env_cfg, episodes, seed), steps)
    names = []
    for i, traj in enumerate(trajs):
        name = f"rollout_{i:03d}.csv"
        write_trajectory_log(os.path.join(out_dir, name), S[:-1, i], traj.action, traj.terms, 1.0,
                             env_cfg.k, env_cfg.m, f"run {tag}")
        names.append(name)
    log(f"wrote {len(names)} trajectories of {steps} steps to {out_dir}")
    return names


# ----------------------------------------------------------------- verify

def build_agent_for(profile, variant="se-policy", seed=0):
    if profile == "g1":
        return Agent.build(variant, build_g1_profile(), NetConfig.g1(), seed)
    if profile == "toy":
        return Agent.build(variant, build_toy_profile(), NetConfig(), seed)
    raise UsageError(f"unknown profile {profile!r}; expected g1 or toy")


def run_verify(profile, checkpoint=None, variant="se-policy", seed=0):
    env_cfg = None
    if checkpoint:
        agent, env_cfg, _ = load_agent(checkpoint, profile)
    else:
        agent = build_agent_for(profile, variant, seed)
    return agent, run_suite(agent, profile, env_cfg)


# ------------------------------------------------------------------- plot

def replot(csv_paths, out_dir):
    """Re-render SVGs from CSVs written by train/eval. Returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written, overlay = [], []
    for path in csv_paths:
        cols = plots.read_csv_columns(path)
        stem = os.path.splitext(os.path.basename(path))[0]
        if "iteration" in cols:
            it = cols["iteration"]
            for key, label in (("episode_return", "episode return"), ("tracking_ratio", "tracking ratio"),
                               ("spat_s", "Spat-S (rad)"), ("temp_s", "Temp-S (rad)")):
                target = os.path.join(out_dir, f"{stem}_{key}.svg")
                plots.write_svg(target, plots.line_plot([(it, cols[key], key)], label, "iteration", label))
                written.append(target)
        elif "te_p" in cols:
            render_curves(path, out_dir)
            written += [os.path.join(out_dir, "te_p.svg"), os.path.join(out_dir, "te_o.svg")]
        elif "drive_left" in cols and "distance" in cols:
            render_drive(path, out_dir)
            written.append(os.path.join(out_dir, "drive_vs_distance.svg"))
        elif "ideal_x" in cols:
            actual = np.stack([cols["x"], cols["y"]], axis=1)
            ideal = np.stack([cols["ideal_x"], cols["ideal_y"]], axis=1)
            overlay.append((actual, ideal, stem))
        else:
            raise UsageError(f"{path}: unrecognised CSV layout")
    if overlay:
        target = os.path.join(out_dir, "paths_overlay.svg")
        plots.write_svg(target, plots.path_overlay(overlay, "Tracked paths (dashed: ideal)"))
        written.append(target)
    return written
