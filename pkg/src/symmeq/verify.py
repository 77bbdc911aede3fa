"""Property checks behind ``symmeq verify``.

Each check returns a :class:`CheckResult` with the worst residual seen and
the tolerance it was held to.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .eqnn import EquivariantLinear
from .env import EnvConfig, _profile_for, observe_batch, sample_state_vector
from .metrics import random_histories, spat_s


@dataclass
class CheckResult:
    name: str
    passed: bool
    residual: float
    tolerance: float
    expected_fail: bool = False
    detail: str = ""

    @property
    def status(self):
        if self.expected_fail:
            return "XFAIL" if not self.passed else "XPASS"
        return "PASS" if self.passed else "FAIL"

    @property
    def blocking(self):
        return not self.passed and not self.expected_fail


def _result(name, residual, tol, expected_fail=False, detail=""):
    return CheckResult(name, bool(residual < tol), float(residual), tol, expected_fail, detail)


# Rows of the G1 mirror table written out independently of ComponentSpec:
# (row, observation slice, map from the row's entries to their mirror).
def _limbs(v):
    arm_l, arm_r, leg_l, leg_r, waist = v[0:7], v[7:14], v[14:20], v[20:26], v[26:27]
    return np.concatenate([-arm_r, -arm_l, -leg_r, -leg_l, waist])


G1_OBSERVATION_ROWS = (
    ("base angular velocity", slice(0, 3), lambda v: np.array([-v[0], v[1], -v[2]])),
    ("projected gravity", slice(3, 6), lambda v: np.array([v[0], -v[1], v[2]])),
    ("velocity commands", slice(6, 9), lambda v: np.array([v[0], -v[1], -v[2]])),
    ("joint positions", slice(9, 36), _limbs),
    ("joint velocities", slice(36, 63), _limbs),
    ("previous action", slice(63, 90), _limbs),
    ("phase input", slice(90, 92), lambda v: -v),
)
G1_ACTION_ROW = ("action", slice(0, 27), _limbs)


def _height_row(v, split=(85, 17, 85)):
    left, mid, _ = split
    return np.concatenate([v[left + mid:], v[left:left + mid], v[:left]])


def mirror_rows(profile):
    """Per-row max deviation of the profile's transforms on basis vectors."""
    out = []
    if profile.obs_dim != 92 or profile.act_dim != 27:
        raise ValueError("mirror table rows are defined for the g1 profile")
    for name, sl, fn, perm, n in (
        *((r[0], r[1], r[2], profile.f_o, profile.obs_dim) for r in G1_OBSERVATION_ROWS),
        (G1_ACTION_ROW[0], G1_ACTION_ROW[1], G1_ACTION_ROW[2], profile.f_a, profile.act_dim),
        ("height map", slice(0, profile.height_dim), _height_row, profile.f_h, profile.height_dim),
    ):
        worst = 0.0
        for i in range(sl.start, sl.stop):
            e = np.zeros(n)
            e[i] = 1.0
            got = perm.apply(e)
            want = np.zeros(n)
            want[sl] = fn(e[sl])
            worst = max(worst, float(np.abs(got - want).max()))
        out.append((name, worst))
    return out


def check_mirror_rows(profile):
    rows = mirror_rows(profile)
    worst = max(r for _, r in rows)
    bad = [n for n, r in rows if r > 0]
    return _result("mirror table conformance", worst, 1e-15, detail=", ".join(bad))


def check_involutions(profile):
    worst = 0.0
    names = []
    for name, t in profile.transforms.items():
        x = np.random.default_rng(0).standard_normal((4, t.n))
        r = float(np.abs(t.apply(t.apply(x)) - x).max())
        if r > 0:
            names.append(name)
        worst = max(worst, r)
    return _result("involutions (" + ", ".join(profile.transforms) + ")", worst, 1e-15, detail=", ".join(names))


def _layers(net):
    return [layer for layer in net.layers if isinstance(layer, EquivariantLinear)]


def check_intertwiners(agent):
    """||W rho_in - rho_out W|| over every equivariant layer of the agent."""
    layers = []
    for mlp in [*agent.actor.networks.values(), *agent.critic.networks.values()]:
        layers += _layers(mlp)
    if not layers:
        return _result("intertwiner residual", 0.0, 1e-12, detail="no equivariant layers")
    worst = 0.0
    for layer in layers:
        W, b = layer.realized()
        A, B = layer.rho_in.matrix(), layer.rho_out.matrix()
        worst = max(worst, float(np.abs(W @ A - B @ W).max()), float(np.abs(B @ b - b).max()))
    return _result(f"intertwiner residual ({len(layers)} layers)", worst, 1e-12)


def check_actor(agent, count=1000, seed=0):
    prof = agent.profile
    rng = np.random.default_rng(seed)
    hist = random_histories(prof.f_o, agent.actor.cfg.history + 1, count, rng)
    err = spat_s(agent.policy_mean, hist, prof.f_o, prof.f_a)
    eq = agent.actor.equivariant
    return _result("actor equivariance (Spat-S)", err, 1e-10, expected_fail=not eq)


def check_critic(agent, count=1000, seed=1):
    prof = agent.profile
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((count, prof.height_dim))
    o = rng.standard_normal((count, prof.obs_dim))
    err = float(np.abs(agent.value(prof.f_h.apply(h), prof.f_o.apply(o)) - agent.value(h, o)).max())
    return _result("critic invariance", err, 1e-10, expected_fail=not agent.critic.equivariant)


def check_env(cfg: EnvConfig, samples=10000, seed=0):
    """Transition mirror consistency and exact reward-term invariance."""
    prof = _profile_for(cfg)
    f_s = prof.f_s
    rng = np.random.default_rng(seed)
    states = np.stack([sample_state_vector(cfg, rng, 1.0) for _ in range(samples)])
    o = kernels.offsets(cfg.k, cfg.m)
    n = cfg.n_joints
    # spread the dynamic fields beyond what a reset produces
    for key, width, scale in (("th", n, 0.5), ("thd", n, 2.0), ("a1", n, 1.0), ("a2", n, 1.0)):
        states[:, o[key]:o[key] + width] = scale * rng.standard_normal((samples, width))
    states[:, 0:6] = rng.standard_normal((samples, 6))
    actions = rng.standard_normal((samples, n))
    p = cfg.kernel_params()
    nxt, terms = kernels.step_batch(states, actions, p, cfg.k, cfg.m)
    nxt_m, terms_m = kernels.step_batch(f_s.apply(states), prof.f_a.apply(actions), p, cfg.k, cfg.m)
    trans = float(np.abs(nxt_m - f_s.apply(nxt)).max())
    rew = float(np.abs(terms_m - terms).max())
    obs = float(np.abs(observe_batch(f_s.apply(states), cfg.k, cfg.m)
                       - prof.f_o.apply(observe_batch(states, cfg.k, cfg.m))).max())
    return [
        _result("env transition mirror consistency", trans, 1e-10),
        _result("env reward invariance", rew, 1e-12),
        _result("env observation consistency", obs, 1e-15),
    ]


def run_suite(agent, profile_name, env_cfg=None):
    prof = agent.profile
    results = [check_involutions(prof)]
    if profile_name == "g1":
        results.append(check_mirror_rows(prof))
    results.append(check_intertwiners(agent))
    if profile_name == "toy":
        results += check_env(env_cfg or EnvConfig())
    results += [check_actor(agent), check_critic(agent)]
    return results


def format_table(results):
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  status  residual    tolerance"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.status:<6}  {r.residual:<10.3e}  {r.tolerance:.0e}")
    return "\n".join(lines)
