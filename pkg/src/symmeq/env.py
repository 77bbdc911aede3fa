"""BilateralTracker: a planar, left/right symmetric velocity-tracking task.

A point body with heading is propelled by ``2k + m`` PD-driven joints. The
left and right limbs only push while their phase-locked stance gate is open;
center joints steer. Every term is built so that mirroring the state and the
action mirrors the next state and leaves the reward unchanged.

State vectors follow ``symmetry.toy_state``; the hot loop lives in
``symmeq.kernels``.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .symmetry import build_toy_profile, toy_state

REWARD_TERMS = (
    "track_lin_vel", "track_ang_vel", "alive", "action_rate",
    "action_smoothness", "torques", "swing_drive",
)


@dataclass
class EnvConfig:
    k: int = 2
    m: int = 1
    dt: float = 0.02
    period: float = 0.8
    kp: float = 20.0
    kd: float = 0.5
    inertia: float = 0.1
    c1: float = 1.5
    c2: float = 0.8
    c3: float = 0.4
    c4: float = 0.6
    drag_x: float = 1.0
    drag_y: float = 1.0
    drag_yaw: float = 0.8
    zone_half_width: float = 0.5
    episode_length: int = 400
    sigma: float = 0.25
    action_clip: float = 1.0
    action_scale: float = 0.25  # joint target = action_scale * action
    command_max: tuple = (0.8, 0.8, 0.5)
    # weights: tracking lin, tracking yaw, alive, rate, smoothness, torque, swing
    reward_weights: tuple = (2.0, 2.0, 2.0, -0.005, -0.01, -1e-5, -0.1)
    randomize: bool = True
    kp_range: tuple = (0.9, 1.1)
    kd_range: tuple = (0.9, 1.1)
    strength_range: tuple = (0.9, 1.1)
    drag_range: tuple = (0.9, 1.1)
    terrain_range: tuple = (0.8, 1.2)
    delay_prob: float = 0.5
    obs_noise: float = 0.01
    curriculum_step: float = 0.05
    curriculum_threshold: float = 0.8
    max_speed: float = 20.0

    def __post_init__(self):
        if self.dt <= 0 or self.period <= 0:
            raise ValueError("dt and period must be positive")
        if min(self.kp, self.kd, self.inertia, self.action_scale) <= 0:
            raise ValueError("kp, kd, inertia and action_scale must be positive")
        if self.k < 1 or self.m < 0:
            raise ValueError("need k >= 1 and m >= 0")
        for name in ("command_max", "reward_weights", "kp_range", "kd_range",
                     "strength_range", "drag_range", "terrain_range"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))

    @property
    def n_joints(self):
        return 2 * self.k + self.m

    @property
    def gait_steps(self):
        return int(round(self.period / self.dt))

    def noise_free(self):
        return dataclasses.replace(self, randomize=False, obs_noise=0.0)

    def kernel_params(self):
        return np.array([
            self.dt, self.period, self.kp, self.kd, self.inertia,
            self.c1, self.c2, self.c3, self.c4, self.drag_x, self.drag_y, self.drag_yaw,
            self.zone_half_width, self.action_clip, self.sigma, *self.reward_weights, self.action_scale,
        ])

    def to_json(self):
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in dataclasses.fields(self)}

    @classmethod
    def from_json(cls, d, path="env"):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ValueError(f"{path}.{unknown[0]}: unknown key")
        return cls(**d)


@dataclass
class ToyState:
    k: int
    m: int
    pos: np.ndarray = None  # (x, y) world frame
    heading: float = 0.0
    vel: np.ndarray = None  # (v_x, v_y) body frame
    yaw_rate: float = 0.0
    theta: np.ndarray = None  # joints ordered left k, right k, center m
    theta_dot: np.ndarray = None
    phase_angle: float = 0.0  # in [0, pi)
    phase_half: float = 1.0  # +1: phi = angle, -1: phi = angle + pi
    command: np.ndarray = None
    terrain: np.ndarray = None  # drag multipliers (left, middle, right)
    prev_action: np.ndarray = None
    prev_action2: np.ndarray = None
    kp_scale: float = 1.0
    kd_scale: float = 1.0
    strength: float = 1.0
    drag_scale: float = 1.0
    delay: float = 0.0
    step_count: float = 0.0

    def __post_init__(self):
        n = 2 * self.k + self.m
        for name, size, fill in (("pos", 2, 0.0), ("vel", 2, 0.0), ("theta", n, 0.0),
                                 ("theta_dot", n, 0.0), ("command", 3, 0.0), ("terrain", 3, 1.0),
                                 ("prev_action", n, 0.0), ("prev_action2", n, 0.0)):
            v = getattr(self, name)
            v = np.full(size, fill) if v is None else np.array(v, dtype=np.float64).reshape(size)
            setattr(self, name, v)

    @property
    def n(self):
        return 2 * self.k + self.m

    @property
    def phi(self):
        return self.phase_angle if self.phase_half > 0 else self.phase_angle + math.pi

    @property
    def theta_left(self):
        return self.theta[:self.k]

    @property
    def theta_right(self):
        return self.theta[self.k:2 * self.k]

    @property
    def theta_center(self):
        return self.theta[2 * self.k:]

    def to_vector(self):
        return np.concatenate([
            self.pos, [self.heading], self.vel, [self.yaw_rate],
            self.theta, self.theta_dot, [self.phase_angle, self.phase_half],
            self.command, self.terrain, self.prev_action, self.prev_action2,
            [self.kp_scale, self.kd_scale, self.strength, self.drag_scale, self.delay, self.step_count],
        ])

    @classmethod
    def from_vector(cls, x, k, m):
        x = np.asarray(x, dtype=np.float64)
        o = kernels.offsets(k, m)
        n = 2 * k + m
        if x.shape != (o["dim"],):
            raise ValueError(f"state vector must have length {o['dim']}")
        par = x[o["par"]:o["par"] + 6]
        return cls(
            k, m, pos=x[0:2], heading=x[2], vel=x[3:5], yaw_rate=x[5],
            theta=x[o["th"]:o["th"] + n], theta_dot=x[o["thd"]:o["thd"] + n],
            phase_angle=x[o["ph"]], phase_half=x[o["half"]], command=x[o["cmd"]:o["cmd"] + 3],
            terrain=x[o["ter"]:o["ter"] + 3], prev_action=x[o["a1"]:o["a1"] + n],
            prev_action2=x[o["a2"]:o["a2"] + n], kp_scale=par[0], kd_scale=par[1],
            strength=par[2], drag_scale=par[3], delay=par[4], step_count=par[5],
        )

    @classmethod
    def with_phase(cls, k, m, phi, **kw):
        phi = float(phi) % (2.0 * math.pi)
        if phi >= math.pi:
            return cls(k, m, phase_angle=phi - math.pi, phase_half=-1.0, **kw)
        return cls(k, m, phase_angle=phi, phase_half=1.0, **kw)


@dataclass
class StepResult:
    state: ToyState
    observation: np.ndarray
    reward: float
    breakdown: dict
    done: bool
    diagnostic: str = ""


# ------------------------------------------------------------ single state

def _profile_for(cfg):
    return build_toy_profile(cfg.k, cfg.m)


def sample_state_vector(cfg, rng, level):
    """Fresh episode state: body at rest, random phase, command scaled by ``level``."""
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"curriculum level {level} outside [0, 1]")
    o = kernels.offsets(cfg.k, cfg.m)
    x = np.zeros(o["dim"])
    phi = rng.uniform(0.0, 2.0 * math.pi)
    if phi >= math.pi:
        x[o["ph"]], x[o["half"]] = phi - math.pi, -1.0
    else:
        x[o["ph"]], x[o["half"]] = phi, 1.0
    bounds = np.asarray(cfg.command_max) * level
    x[o["cmd"]:o["cmd"] + 3] = rng.uniform(-1.0, 1.0, 3) * bounds
    par = o["par"]
    if cfg.randomize:
        x[o["ter"]:o["ter"] + 3] = rng.uniform(*cfg.terrain_range, 3)
        x[par] = rng.uniform(*cfg.kp_range)
        x[par + 1] = rng.uniform(*cfg.kd_range)
        x[par + 2] = rng.uniform(*cfg.strength_range)
        x[par + 3] = rng.uniform(*cfg.drag_range)
        x[par + 4] = float(rng.uniform() < cfg.delay_prob)
    else:
        x[o["ter"]:o["ter"] + 3] = 1.0
        x[par:par + 4] = 1.0
    return x


def reset(cfg, rng, level=0.0):
    return ToyState.from_vector(sample_state_vector(cfg, rng, level), cfg.k, cfg.m)


def observe_batch(states, k, m):
    """Observation rows (toy profile order) for a batch of state vectors."""
    states = np.atleast_2d(states)
    o = kernels.offsets(k, m)
    n = 2 * k + m
    half, ang = states[:, o["half"]], states[:, o["ph"]]
    return np.concatenate([
        states[:, 3:6],
        states[:, o["cmd"]:o["cmd"] + 3],
        states[:, o["th"]:o["th"] + n],
        states[:, o["thd"]:o["thd"] + n],
        states[:, o["a1"]:o["a1"] + n],
        (half * np.sin(ang))[:, None],
        (half * np.cos(ang))[:, None],
    ], axis=1)


def observe(s):
    return observe_batch(s.to_vector(), s.k, s.m)[0]


def mirror_state(s):
    f_s = build_toy_profile(s.k, s.m).f_s
    return ToyState.from_vector(f_s.apply(s.to_vector()), s.k, s.m)


def _breakdown(terms):
    return dict(zip(REWARD_TERMS, (float(t) for t in terms)))


def _stances(half, angle):
    sin_phi = half * np.sin(angle)
    return (sin_phi > 0.0).astype(float), (sin_phi < 0.0).astype(float)


def reward(s, a, s_next, cfg):
    """Reward of the transition (s, a) -> s_next and its weighted components.

    Torque is recomputed from ``s`` and the applied action; drives come from
    the joint velocities of ``s_next``; stance from the phase of ``s``.
    """
    k = s.k
    w = cfg.reward_weights
    a = np.clip(np.asarray(a, dtype=np.float64), -cfg.action_clip, cfg.action_clip)
    applied = cfg.action_scale * (s.prev_action if s.delay > 0.5 else a)
    tau = s.strength * (cfg.kp * s.kp_scale * (applied - s.theta) - cfg.kd * s.kd_scale * s.theta_dot)
    st_l, st_r = _stances(s.phase_half, s.phase_angle)
    u_l = -s_next.theta_dot[:k]
    u_r = s_next.theta_dot[k:2 * k]
    ex, ey = s_next.vel - s.command[:2]
    ew = s_next.yaw_rate - s.command[2]
    d1 = a - s.prev_action
    d2 = a - 2.0 * s.prev_action + s.prev_action2
    terms = (
        w[0] * math.exp(-(ex * ex + ey * ey) / cfg.sigma),
        w[1] * math.exp(-(ew * ew) / cfg.sigma),
        w[2],
        w[3] * float(np.sum(d1 * d1)),
        w[4] * float(np.sum(d2 * d2)),
        w[5] * float(np.sum(tau * tau)),
        w[6] * float(np.sum((1.0 - st_l) * u_l * u_l) + np.sum((1.0 - st_r) * u_r * u_r)),
    )
    bd = _breakdown(terms)
    return float(sum(terms)), bd


def step(s, a, cfg, backend=None):
    impl = backend or kernels
    a = np.asarray(a, dtype=np.float64).reshape(1, -1)
    if a.shape[1] != s.n:
        raise ValueError(f"action must have {s.n} entries")
    out, terms = impl.step_batch(s.to_vector()[None, :], a, cfg.kernel_params(), s.k, s.m)
    nxt = ToyState.from_vector(out[0], s.k, s.m)
    finite = bool(np.all(np.isfinite(out)))
    diag = "" if finite else "non-finite state after step"
    return StepResult(nxt, observe(nxt), float(terms[0].sum()), _breakdown(terms[0]), not finite, diag)


def update_curriculum(level, ratio, step_size=0.05, threshold=0.8):
    if not (0.0 <= level <= 1.0 and 0.0 <= ratio <= 1.0):
        raise ValueError("level and ratio must lie in [0, 1]")
    return min(1.0, level + step_size) if ratio > threshold else level


# ------------------------------------------------------------ vector env

@dataclass
class BatchStep:
    obs: np.ndarray  # observations after auto-reset, noise applied
    rewards: np.ndarray
    terms: np.ndarray
    dones: np.ndarray  # terminal (divergence): bootstrap 0
    timeouts: np.ndarray  # episode length reached: bootstrap from final obs
    final_obs: np.ndarray  # noise-free observation before any reset
    final_height: np.ndarray
    states: np.ndarray = field(repr=False, default=None)  # pre-reset next states


class BilateralTracker:
    """``num_envs`` independent copies with per-instance rng streams."""

    def __init__(self, cfg: EnvConfig, num_envs=1, seed=0, level=0.0, backend=None, workers=1):
        self.cfg = cfg
        self.workers = max(1, int(workers))
        self.num_envs = num_envs
        self.level = float(level)
        self.profile = _profile_for(cfg)
        self.impl = backend or kernels
        self._params = cfg.kernel_params()
        seqs = np.random.SeedSequence(seed).spawn(num_envs + 1)
        self.rngs = [np.random.default_rng(s) for s in seqs[:num_envs]]
        self.noise_rng = np.random.default_rng(seqs[-1])
        self.states = np.stack([sample_state_vector(cfg, r, self.level) for r in self.rngs])
        self.diverged = 0

    @property
    def obs_dim(self):
        return self.profile.obs_dim

    def reset(self, level=None):
        if level is not None:
            self.level = float(level)
        self.states = np.stack([sample_state_vector(self.cfg, r, self.level) for r in self.rngs])
        return self.observe()

    def set_states(self, states):
        self.states = np.array(states, dtype=np.float64, copy=True)

    def _noisy(self, obs):
        if self.cfg.obs_noise > 0:
            obs = obs + self.cfg.obs_noise * self.noise_rng.standard_normal(obs.shape)
        return obs

    def observe(self, noise=True):
        obs = observe_batch(self.states, self.cfg.k, self.cfg.m)
        return self._noisy(obs) if noise else obs

    def height(self):
        o = kernels.offsets(self.cfg.k, self.cfg.m)
        return self.states[:, o["ter"]:o["ter"] + 3].copy()

    def _advance(self, actions):
        if self.workers == 1 or self.num_envs < 2 * self.workers:
            return self.impl.step_batch(self.states, actions, self._params, self.cfg.k, self.cfg.m)
        # rows are independent; chunks are merged back in instance order
        from concurrent.futures import ThreadPoolExecutor

        chunks = np.array_split(np.arange(self.num_envs), self.workers)
        with ThreadPoolExecutor(self.workers) as pool:
            parts = list(pool.map(
                lambda idx: self.impl.step_batch(self.states[idx], actions[idx], self._params,
                                                 self.cfg.k, self.cfg.m), chunks))
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def step(self, actions):
        cfg = self.cfg
        nxt, terms = self._advance(np.asarray(actions, dtype=np.float64))
        o = kernels.offsets(cfg.k, cfg.m)
        bad = ~np.all(np.isfinite(nxt), axis=1) | (np.abs(nxt[:, 3:6]).max(axis=1) > cfg.max_speed)
        terms[bad] = 0.0
        rewards = terms.sum(axis=1)
        timeouts = (nxt[:, o["par"] + 5] >= cfg.episode_length) & ~bad
        final_obs = observe_batch(np.where(bad[:, None], 0.0, nxt), cfg.k, cfg.m)
        final_height = nxt[:, o["ter"]:o["ter"] + 3].copy()
        self.states = nxt
        self.diverged += int(bad.sum())
        for i in np.flatnonzero(bad | timeouts):
            self.states[i] = sample_state_vector(cfg, self.rngs[i], self.level)
        return BatchStep(self.observe(), rewards, terms, bad, timeouts, final_obs, final_height, nxt)


# ------------------------------------------------------------ trajectory log

PARAM_FIELDS = ("kp_scale", "kd_scale", "strength", "drag_scale", "delay", "step")


def state_field_names(k, m):
    names = []
    for comp in toy_state(k, m):
        if comp.name == "params":
            names += PARAM_FIELDS
        elif comp.dim == 1:
            names.append(comp.name)
        else:
            names += [f"{comp.name}_{i}" for i in range(comp.dim)]
    return names


def write_trajectory_log(path, states, actions, terms, level, k, m, header=None):
    """One row per step: the state before the step, the action, the reward terms."""
    states, actions, terms = np.atleast_2d(states), np.atleast_2d(actions), np.atleast_2d(terms)
    if not (len(states) >= len(actions) == len(terms)):
        raise ValueError("need one state per action and one term row per action")
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["step", *state_field_names(k, m), *(f"action_{i}" for i in range(actions.shape[1])),
                    *REWARD_TERMS, "curriculum_level"])
        for t in range(len(actions)):
            w.writerow([t, *map(repr, states[t].tolist()), *map(repr, actions[t].tolist()),
                        *map(repr, terms[t].tolist()), repr(float(level))])
