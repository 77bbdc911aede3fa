"""Tracking and symmetry metrics: TE-V, TE-P, TE-O, Temp-S, Spat-S.

Evaluation rollouts run the deterministic policy (action means) without
automatic resets, so every trajectory is one uninterrupted episode.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .env import EnvConfig, observe_batch, sample_state_vector
from .symmetry import SignedPermutation

EIGHT_DIRECTIONS = (
    (0.5, 0.0), (-0.5, 0.0), (0.0, 0.5), (0.0, -0.5),
    (0.5, 0.5), (0.5, -0.5), (-0.5, 0.5), (-0.5, -0.5),
)
# body velocity and pose transform under the mirror: (x, -y, -yaw)
PLANAR_MIRROR = SignedPermutation([0, 1, 2], [1, -1, -1])


@dataclass
class TrajectoryRecord:
    """One episode. ``pose`` has T+1 rows (start included); the rest have T."""

    vel: np.ndarray  # (T, 3) body (v_x, v_y, yaw rate) after each step
    pose: np.ndarray  # (T+1, 3) world (x, y, heading)
    command: np.ndarray  # (T, 3)
    action: np.ndarray  # (T, n_a) executed (clipped) action
    phase: np.ndarray  # (T,) phase at each step
    dt: float = 0.02
    drive: np.ndarray | None = None  # (T, 2) per-side stance drive magnitude
    terms: np.ndarray | None = None  # (T, n_terms) weighted reward components

    def __post_init__(self):
        if len(self.vel) == 0:
            raise ValueError("empty trajectory")
        if len(self.pose) != len(self.vel) + 1:
            raise ValueError("pose needs one more row than vel")

    def __len__(self):
        return len(self.vel)

    def mirrored(self, f_a):
        return TrajectoryRecord(
            PLANAR_MIRROR.apply(self.vel), PLANAR_MIRROR.apply(self.pose),
            PLANAR_MIRROR.apply(self.command), f_a.apply(self.action),
            (self.phase + math.pi) % (2 * math.pi), self.dt,
            None if self.drive is None else self.drive[:, ::-1].copy(),
            None if self.terms is None else self.terms.copy(),
        )


def _nonempty(traj):
    if traj is None or len(traj.vel) == 0:
        raise ValueError("empty trajectory")


def te_v(traj):
    _nonempty(traj)
    return float(np.mean(np.linalg.norm(traj.vel - traj.command, axis=1)))


def ideal_poses(traj):
    """Integrate the commands from the recorded start pose."""
    T = len(traj)
    out = np.empty((T + 1, 3))
    out[0] = traj.pose[0]
    for t in range(T):
        x, y, psi = out[t]
        cx, cy, cw = traj.command[t]
        c, s = math.cos(psi), math.sin(psi)
        out[t + 1] = (x + (c * cx - s * cy) * traj.dt, y + (s * cx + c * cy) * traj.dt, psi + cw * traj.dt)
    return out


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + math.pi, 2 * math.pi) - math.pi
    return np.where(w == -math.pi, math.pi, w)


def te_p(traj):
    _nonempty(traj)
    curve = np.linalg.norm(traj.pose[:, :2] - ideal_poses(traj)[:, :2], axis=1)
    return curve, float(curve.mean())


def te_o(traj):
    _nonempty(traj)
    curve = np.abs(wrap_angle(traj.pose[:, 2] - ideal_poses(traj)[:, 2]))
    return curve, float(curve.mean())


def temp_s_actions(actions, f_a, delta):
    actions = np.asarray(actions, dtype=float)
    if delta % 2:
        raise ValueError("gait period in steps must be even")
    half = delta // 2
    if len(actions) <= half:
        raise ValueError(f"trajectory of {len(actions)} steps is shorter than half a period ({half})")
    diff = actions[:-half] - f_a.apply(actions[half:])
    return float(np.mean(np.linalg.norm(diff, axis=1)))


def temp_s(traj, f_a, delta=40):
    return temp_s_actions(traj.action, f_a, delta)


def spat_s(policy, histories, f_o, f_a, fixed_tol=1e-12):
    """Mean ||pi(h) - F_a(pi(F_o(h)))|| over histories that the mirror moves.

    ``policy`` maps a batch of histories (B, rows, n_o) to action means.
    """
    histories = np.asarray(histories, dtype=float)
    mirrored = f_o.apply(histories)
    moved = np.abs(mirrored - histories).reshape(len(histories), -1).max(axis=1) > fixed_tol
    if not moved.any():
        return 0.0
    h, hm = histories[moved], mirrored[moved]
    return float(np.mean(np.linalg.norm(policy(h) - f_a.apply(policy(hm)), axis=1)))


def random_histories(f_o, rows, count, rng, scale=1.0):
    """Gaussian histories; almost surely none is fixed by ``f_o``."""
    return scale * rng.standard_normal((count, rows, f_o.n))


# ------------------------------------------------------------ evaluation

def rollout(agent, cfg: EnvConfig, states, steps, backend=None):
    """Deterministic rollout of every row of ``states`` for ``steps`` steps.

    Returns (list of TrajectoryRecord, state array of shape (steps+1, N, D)).
    """
    impl = backend or kernels
    states = np.array(states, dtype=float, copy=True)
    N = states.shape[0]
    o = kernels.offsets(cfg.k, cfg.m)
    params = cfg.kernel_params()
    rows = agent.actor.cfg.history + 1
    hist = np.zeros((N, rows, agent.profile.obs_dim))
    hist[:, -1] = observe_batch(states, cfg.k, cfg.m)
    k = cfg.k
    all_states = [states]
    acts, vels, phases, drives, terms = [], [], [], [], []
    for _ in range(steps):
        mu = agent.policy_mean(hist)
        nxt, r = impl.step_batch(states, mu, params, cfg.k, cfg.m)
        terms.append(r)
        phases.append(np.where(states[:, o["half"]] > 0, states[:, o["ph"]], states[:, o["ph"]] + math.pi))
        thd = nxt[:, o["thd"]:o["thd"] + 2 * k]
        drives.append(np.stack([np.abs(thd[:, :k]).sum(axis=1), np.abs(thd[:, k:]).sum(axis=1)], axis=1))
        # the env clips before applying, so record what was actually executed
        acts.append(np.clip(mu, -cfg.action_clip, cfg.action_clip))
        vels.append(nxt[:, 3:6])
        states = nxt
        all_states.append(states)
        hist[:, :-1] = hist[:, 1:]
        hist[:, -1] = observe_batch(states, cfg.k, cfg.m)
    S = np.stack(all_states)
    trajs = []
    for i in range(N):
        trajs.append(TrajectoryRecord(
            vel=np.stack([v[i] for v in vels]),
            pose=np.stack([S[:, i, 0], S[:, i, 1], S[:, i, 2]], axis=1),
            command=np.repeat(S[0, i, o["cmd"]:o["cmd"] + 3][None], steps, axis=0),
            action=np.stack([a[i] for a in acts]),
            phase=np.array([p[i] for p in phases]),
            dt=cfg.dt,
            drive=np.stack([d[i] for d in drives]),
            terms=np.stack([r[i] for r in terms]),
        ))
    return trajs, S


def initial_states(cfg: EnvConfig, episodes, seed, level=1.0):
    seqs = np.random.SeedSequence(seed).spawn(episodes)
    return np.stack([sample_state_vector(cfg, np.random.default_rng(s), level) for s in seqs])


def mirror_rollout_error(agent, cfg: EnvConfig, seed=0, steps=200, state=None):
    """Max componentwise gap between the rollout from F_s(s0) and the mirrored rollout from s0."""
    cfg = cfg.noise_free()
    f_s = agent.profile.f_s
    s0 = initial_states(cfg, 1, seed)[0] if state is None else np.asarray(state, dtype=float)
    _, a = rollout(agent, cfg, s0[None], steps)
    _, b = rollout(agent, cfg, f_s.apply(s0)[None], steps)
    gap = np.abs(b[:, 0] - f_s.apply(a[:, 0]))
    if not np.all(np.isfinite(gap)):
        return float("inf")
    return float(gap.max())


@dataclass
class MetricsReport:
    te_v: tuple  # (mean, std) in cm/s
    te_p: tuple  # m
    te_o: tuple  # rad
    temp_s: tuple  # rad
    spat_s: tuple  # rad
    episodes: int = 0

    FIELDS = ("te_v", "te_p", "te_o", "temp_s", "spat_s")
    UNITS = {"te_v": "cm/s", "te_p": "m", "te_o": "rad", "temp_s": "rad", "spat_s": "rad"}

    def to_json(self):
        out = {f: {"mean": float(getattr(self, f)[0]), "std": float(getattr(self, f)[1]),
                   "unit": self.UNITS[f]} for f in self.FIELDS}
        out["episodes"] = self.episodes
        return out

    def write_csv(self, path, header=None):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["metric", "mean", "std", "unit"])
            for f in self.FIELDS:
                m, s = getattr(self, f)
                w.writerow([f, repr(float(m)), repr(float(s)), self.UNITS[f]])

    def write_json(self, path, extra=None):
        with open(path, "w") as fh:
            json.dump({**self.to_json(), **(extra or {})}, fh, indent=2)


def _ms(values):
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std())


def evaluate(agent, cfg: EnvConfig, episodes=64, steps=400, seed=0, level=1.0, delta=None):
    """Random-command evaluation; returns (MetricsReport, trajectories)."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    delta = delta or cfg.gait_steps
    trajs, S = rollout(agent, cfg, initial_states(cfg, episodes, seed, level), steps)
    rows = agent.actor.cfg.history + 1
    # histories drawn from the evaluation rollouts themselves
    obs = np.stack([observe_batch(S[t], cfg.k, cfg.m) for t in range(S.shape[0])], axis=1)
    rng = np.random.default_rng(seed)
    picks = rng.integers(rows, S.shape[0], size=(episodes,))
    hist = np.stack([obs[i, p - rows + 1:p + 1] for i, p in enumerate(picks)])
    f_o, f_a = agent.profile.f_o, agent.profile.f_a
    per_ep_spat = [spat_s(agent.policy_mean, hist[i:i + 1], f_o, f_a) for i in range(episodes)]
    report = MetricsReport(
        te_v=_ms([100.0 * te_v(t) for t in trajs]),
        te_p=_ms([te_p(t)[1] for t in trajs]),
        te_o=_ms([te_o(t)[1] for t in trajs]),
        temp_s=_ms([temp_s(t, f_a, delta) for t in trajs]),
        spat_s=_ms(per_ep_spat),
        episodes=episodes,
    )
    return report, trajs


def eight_direction(agent, cfg: EnvConfig, seed=0, duration=12.0):
    """Commands along the eight compass directions from rest at the origin."""
    cfg = cfg.noise_free()
    steps = int(round(duration / cfg.dt))
    base = initial_states(cfg, len(EIGHT_DIRECTIONS), seed, 0.0)
    o = kernels.offsets(cfg.k, cfg.m)
    for i, (cx, cy) in enumerate(EIGHT_DIRECTIONS):
        base[i, o["cmd"]:o["cmd"] + 3] = (cx, cy, 0.0)
    trajs, _ = rollout(agent, cfg, base, steps)
    return trajs


def write_trajectory_csv(path, traj, header=None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        n_a = traj.action.shape[1]
        w.writerow(["step", "x", "y", "heading", "ideal_x", "ideal_y", "ideal_heading", "v_x", "v_y",
                    "yaw_rate", "cmd_x", "cmd_y", "cmd_yaw", "phase", "drive_left", "drive_right"]
                   + [f"a{i}" for i in range(n_a)])
        ideal = ideal_poses(traj)
        drive = traj.drive if traj.drive is not None else np.zeros((len(traj), 2))
        for t in range(len(traj)):
            w.writerow([t + 1, *map(repr, traj.pose[t + 1].tolist()), *map(repr, ideal[t + 1].tolist()),
                        *map(repr, traj.vel[t].tolist()), *map(repr, traj.command[t].tolist()),
                        repr(float(traj.phase[t])), *map(repr, drive[t].tolist()), *map(repr, traj.action[t].tolist())])
