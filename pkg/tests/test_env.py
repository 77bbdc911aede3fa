import csv
import math

import numpy as np
import pytest

from symmeq import _kernels_py, kernels
from symmeq.env import (REWARD_TERMS, BilateralTracker, EnvConfig, ToyState, mirror_state, observe, observe_batch,
                        reset, reward, sample_state_vector, state_field_names, step, update_curriculum,
                        write_trajectory_log)
from symmeq.symmetry import build_toy_profile
from symmeq.verify import check_env

CFG = EnvConfig()
NF = CFG.noise_free()


def random_states(cfg, n, rng):
    """Reset states with every dynamic field spread out."""
    o = kernels.offsets(cfg.k, cfg.m)
    nj = cfg.n_joints
    s = np.stack([sample_state_vector(cfg, rng, 1.0) for _ in range(n)])
    s[:, 0:6] = rng.standard_normal((n, 6))
    for key, scale in (("th", 0.5), ("thd", 2.0), ("a1", 1.0), ("a2", 1.0)):
        s[:, o[key]:o[key] + nj] = scale * rng.standard_normal((n, nj))
    return s


# ------------------------------------------------------------- symmetry

def test_mirror_consistency_and_reward_invariance():
    trans, rew, obs = check_env(CFG, samples=10000, seed=7)
    assert trans.residual < 1e-10
    assert rew.residual < 1e-12
    assert obs.residual == 0.0


def test_reward_function_matches_kernel_and_is_invariant(rng):
    f_a = build_toy_profile().f_a
    for x in random_states(CFG, 50, rng):
        s = ToyState.from_vector(x, 2, 1)
        a = rng.standard_normal(5)
        res = step(s, a, CFG)
        r, bd = reward(s, a, res.state, CFG)
        assert abs(r - res.reward) < 1e-12
        assert abs(sum(bd.values()) - r) < 1e-12
        r_m, bd_m = reward(mirror_state(s), f_a.apply(a), mirror_state(res.state), CFG)
        for name in REWARD_TERMS:
            assert abs(bd_m[name] - bd[name]) < 1e-12, name


def test_mirror_state_examples():
    s = ToyState.with_phase(2, 1, 0.0)
    m = mirror_state(s)
    assert m.phi == pytest.approx(math.pi)
    assert np.array_equal(m.to_vector()[:-8], ToyState.with_phase(2, 1, math.pi).to_vector()[:-8])
    rng = np.random.default_rng(3)
    x = random_states(CFG, 1, rng)[0]
    s = ToyState.from_vector(x, 2, 1)
    assert np.array_equal(mirror_state(mirror_state(s)).to_vector(), x)
    m = mirror_state(s)
    assert np.array_equal(m.theta_left, -s.theta_right) and np.array_equal(m.theta_center, -s.theta_center)
    assert np.array_equal(m.terrain, s.terrain[::-1])
    assert (m.pos[1], m.heading, m.yaw_rate) == (-s.pos[1], -s.heading, -s.yaw_rate)


def test_mirrored_phase_negates_phase_features(rng):
    for phi in rng.uniform(0, 2 * math.pi, 20):
        o, om = observe(ToyState.with_phase(2, 1, phi)), observe(mirror_state(ToyState.with_phase(2, 1, phi)))
        assert np.array_equal(om[-2:], -o[-2:])


# ------------------------------------------------------------- dynamics

def test_zero_state_is_a_fixed_point():
    s = ToyState.with_phase(2, 1, 0.3)
    res = step(s, np.zeros(5), NF)
    want = s.to_vector().copy()
    o = kernels.offsets(2, 1)
    want[o["ph"]] += 2 * math.pi * NF.dt / NF.period
    want[o["par"] + 5] += 1.0
    assert np.array_equal(res.state.to_vector(), want)


def _hand_step(x, a, cfg):
    """Scalar re-derivation of one control step for k=2, m=1."""
    dt, kp, kd, inertia = cfg.dt, cfg.kp, cfg.kd, cfg.inertia
    pos_x, pos_y, psi, vx, vy, w = x[0:6]
    th, thd = list(x[6:11]), list(x[11:16])
    ang, half = x[16], x[17]
    cmd, ter = x[18:21], x[21:24]
    prev1, prev2 = list(x[24:29]), list(x[29:34])
    kp_s, kd_s, strength, drag_s, delay, count = x[34:40]
    a = [min(max(v, -cfg.action_clip), cfg.action_clip) for v in a]
    targets = [cfg.action_scale * (prev1[i] if delay > 0.5 else a[i]) for i in range(5)]
    tau = [strength * (kp * kp_s * (targets[i] - th[i]) - kd * kd_s * thd[i]) for i in range(5)]
    thd_n = [thd[i] + tau[i] / inertia * dt for i in range(5)]
    th_n = [th[i] + thd_n[i] * dt for i in range(5)]
    uL = [-thd_n[0], -thd_n[1]]
    uR = [thd_n[2], thd_n[3]]
    phi = ang if half > 0 else ang + math.pi
    stL, stR = float(math.sin(phi) > 0), float(math.sin(phi) < 0)
    zone = ter[0] if pos_y > cfg.zone_half_width else ter[2] if pos_y < -cfg.zone_half_width else ter[1]
    drag = zone * drag_s
    lateral = uL[1] * stL - uR[1] * stR
    fx = cfg.c1 * (uL[0] * stL + uR[0] * stR) - cfg.drag_x * vx * drag
    fy = cfg.c2 * lateral - cfg.drag_y * vy * drag
    tz = cfg.c3 * lateral + cfg.c4 * th_n[4] - cfg.drag_yaw * w * drag
    vx_n, vy_n, w_n = vx + fx * dt, vy + fy * dt, w + tz * dt
    px_n = pos_x + (math.cos(psi) * vx_n - math.sin(psi) * vy_n) * dt
    py_n = pos_y + (math.sin(psi) * vx_n + math.cos(psi) * vy_n) * dt
    psi_n = psi + w_n * dt
    phi_n = (phi + 2 * math.pi * dt / cfg.period) % (2 * math.pi)
    out = [px_n, py_n, psi_n, vx_n, vy_n, w_n, *th_n, *thd_n,
           phi_n % math.pi, 1.0 if phi_n < math.pi else -1.0, *cmd, *ter, *a, *prev1,
           kp_s, kd_s, strength, drag_s, delay, count + 1]
    wts = cfg.reward_weights
    d1 = [a[i] - prev1[i] for i in range(5)]
    d2 = [a[i] - 2 * prev1[i] + prev2[i] for i in range(5)]
    terms = [
        wts[0] * math.exp(-((vx_n - cmd[0]) ** 2 + (vy_n - cmd[1]) ** 2) / cfg.sigma),
        wts[1] * math.exp(-((w_n - cmd[2]) ** 2) / cfg.sigma),
        wts[2],
        wts[3] * sum(v * v for v in d1),
        wts[4] * sum(v * v for v in d2),
        wts[5] * sum(v * v for v in tau),
        wts[6] * ((1 - stL) * (uL[0] ** 2 + uL[1] ** 2) + (1 - stR) * (uR[0] ** 2 + uR[1] ** 2)),
    ]
    return np.array(out), np.array(terms)


# A documented nonzero state: moving, turned, in the left terrain zone, left
# stance, no delay, mildly randomized dynamics.
GOLDEN_STATE = np.array([
    0.3, 0.7, 0.4, 0.5, -0.2, 0.3,  # pose, body velocity
    0.1, -0.2, 0.05, 0.15, -0.1,  # joint angles L0 L1 R0 R1 C
    0.5, -1.0, 0.8, 0.3, 0.2,  # joint velocities
    1.0, 1.0,  # phase angle, half (phi = 1.0 rad)
    0.4, 0.1, -0.2,  # command
    1.1, 0.9, 1.0,  # terrain
    0.2, -0.3, 0.1, 0.4, 0.0,  # a_{t-1}
    0.1, 0.0, -0.2, 0.3, 0.1,  # a_{t-2}
    1.05, 0.95, 1.02, 0.98, 0.0, 12.0,  # kp, kd, strength, drag, delay, step
])
GOLDEN_ACTION = np.array([0.6, -0.4, 1.5, 0.2, -0.3])
# Values from the hand integration above, frozen.
GOLDEN_VELOCITY = (0.4692475, -0.1880928, 0.2974922528)
GOLDEN_REWARD = 3.8869607625263503


@pytest.mark.parametrize("backend", ["python", "cython"])
def test_golden_step_matches_hand_integration(backend):
    impl = kernels.get_backend(backend)
    want, want_terms = _hand_step(GOLDEN_STATE, GOLDEN_ACTION, NF)
    got, terms = impl.step_batch(GOLDEN_STATE[None], GOLDEN_ACTION[None], NF.kernel_params(), 2, 1)
    assert np.abs(got[0] - want).max() < 1e-12
    assert np.abs(terms[0] - want_terms).max() < 1e-12
    assert np.abs(got[0, 3:6] - GOLDEN_VELOCITY).max() < 1e-12
    assert abs(terms[0].sum() - GOLDEN_REWARD) < 1e-12


def test_golden_step_with_delay_uses_previous_action():
    x = GOLDEN_STATE.copy()
    x[38] = 1.0
    want, _ = _hand_step(x, GOLDEN_ACTION, NF)
    got, _ = kernels.step_batch(x[None], GOLDEN_ACTION[None], NF.kernel_params(), 2, 1)
    assert np.abs(got[0] - want).max() < 1e-12


def test_backends_agree(rng):
    s = random_states(CFG, 500, rng)
    a = 2 * rng.standard_normal((500, 5))
    p = CFG.kernel_params()
    py_out = _kernels_py.step_batch(s, a, p, 2, 1)
    cy_out = kernels.get_backend("cython").step_batch(s, a, p, 2, 1)
    for u, v in zip(py_out, cy_out):
        assert np.abs(u - v).max() < 1e-13


def test_energy_sanity_body_speed_decays(rng):
    o = kernels.offsets(2, 1)
    for _ in range(20):
        x = sample_state_vector(CFG, rng, 1.0)
        x[0:2] = rng.uniform(-1, 1, 2)
        x[3:6] = rng.standard_normal(3)
        x[o["par"] + 4] = 0.0
        s = x[None]
        speeds = [np.abs(s[0, 3:6])]
        for _ in range(50):
            s, _ = kernels.step_batch(s, np.zeros((1, 5)), CFG.kernel_params(), 2, 1)
            speeds.append(np.abs(s[0, 3:6]))
        speeds = np.array(speeds)
        assert np.all(np.diff(speeds, axis=0) <= 1e-15)


def test_stance_gates_at_boundaries():
    o = kernels.offsets(2, 1)
    # both gates closed at sin(phi) = 0: a moving swing limb is penalized on both sides
    for ang, half in ((0.0, 1.0), (0.0, -1.0)):
        x = np.zeros(o["dim"])
        x[o["ph"]], x[o["half"]] = ang, half
        x[o["thd"]:o["thd"] + 4] = [1.0, 1.0, 1.0, 1.0]
        x[o["par"]:o["par"] + 4] = 1.0
        nxt, terms = kernels.step_batch(x[None], np.zeros((1, 5)), NF.kernel_params(), 2, 1)
        u = nxt[0, o["thd"]:o["thd"] + 4]
        assert terms[0, 6] == pytest.approx(-0.1 * float(np.sum(u * u)), abs=1e-15)
        assert nxt[0, 3] == 0.0  # no stance, no forward force


def test_stance_left_at_phi_equals_stance_right_at_phi_plus_pi(rng):
    from symmeq.env import _stances

    for phi in np.concatenate([rng.uniform(0, 2 * np.pi, 100), [0.0, np.pi / 2]]):
        a = ToyState.with_phase(2, 1, phi)
        b = ToyState.with_phase(2, 1, phi + math.pi)
        assert _stances(a.phase_half, a.phase_angle)[0] == _stances(b.phase_half, b.phase_angle)[1]


def test_non_finite_state_terminates():
    s = ToyState.with_phase(2, 1, 0.5)
    s.theta_dot[0] = np.inf
    res = step(s, np.zeros(5), NF)
    assert res.done and res.diagnostic


def test_action_length_checked():
    with pytest.raises(ValueError):
        step(ToyState.with_phase(2, 1, 0.5), np.zeros(4), NF)


# --------------------------------------------------------------- reward

def test_perfect_tracking_reward_is_six():
    s = ToyState.with_phase(2, 1, 0.0)
    r, bd = reward(s, np.zeros(5), s, NF)
    assert r == 6.0 and bd["alive"] == 2.0


def test_tracking_term_two_over_e():
    s = ToyState.with_phase(2, 1, 0.0)
    nxt = ToyState.with_phase(2, 1, 0.0, vel=[0.5, 0.0])
    _, bd = reward(s, np.zeros(5), nxt, NF)
    assert bd["track_lin_vel"] == pytest.approx(2.0 / math.e, abs=1e-15)
    assert bd["track_ang_vel"] == 2.0


# ---------------------------------------------------- observation / reset

def test_observation_width_and_phase_block():
    s = ToyState.with_phase(2, 1, math.pi / 2)
    o = observe(s)
    assert o.shape == (23,)
    assert o[-2] == 1.0 and abs(o[-1]) < 1e-16


def test_observation_consistency_on_random_states(rng):
    prof = build_toy_profile()
    x = random_states(CFG, 10000, rng)
    assert np.array_equal(observe_batch(prof.f_s.apply(x), 2, 1), prof.f_o.apply(observe_batch(x, 2, 1)))


def test_reset_level_zero_and_one(rng):
    assert np.array_equal(reset(CFG, rng, 0.0).command, np.zeros(3))
    cmds = np.array([reset(CFG, rng, 1.0).command for _ in range(2000)])
    assert np.all(np.abs(cmds) <= [0.8, 0.8, 0.5])
    assert np.all(np.abs(cmds).max(axis=0) > [0.75, 0.75, 0.45])
    with pytest.raises(ValueError):
        reset(CFG, rng, 1.5)


def test_reset_is_deterministic_and_in_range():
    a = reset(CFG, np.random.default_rng(9), 0.7)
    b = reset(CFG, np.random.default_rng(9), 0.7)
    assert np.array_equal(a.to_vector(), b.to_vector())
    assert 0 <= a.phi < 2 * math.pi
    assert np.all((a.terrain >= 0.8) & (a.terrain <= 1.2))
    assert np.array_equal(a.theta, np.zeros(5)) and np.array_equal(a.vel, np.zeros(2))


def test_vector_env_is_deterministic(rng):
    runs = []
    for _ in range(2):
        env = BilateralTracker(CFG, num_envs=8, seed=4, level=1.0)
        act_rng = np.random.default_rng(0)
        obs = []
        for _ in range(450):  # crosses an episode boundary
            out = env.step(act_rng.standard_normal((8, 5)))
            obs.append(out.obs)
        runs.append(np.array(obs))
    assert np.array_equal(runs[0], runs[1])


def test_worker_threads_match_serial():
    outs = []
    for workers in (1, 4):
        env = BilateralTracker(CFG, num_envs=16, seed=2, level=1.0, workers=workers)
        act_rng = np.random.default_rng(1)
        outs.append([env.step(act_rng.standard_normal((16, 5))).obs for _ in range(20)])
    assert np.array_equal(np.array(outs[0]), np.array(outs[1]))


def test_timeout_flags_and_reset():
    cfg = EnvConfig(episode_length=5)
    env = BilateralTracker(cfg, num_envs=2, seed=0)
    flags = [env.step(np.zeros((2, 5))).timeouts.copy() for _ in range(5)]
    assert not any(f.any() for f in flags[:4]) and flags[4].all()
    assert np.all(env.states[:, kernels.offsets(2, 1)["par"] + 5] == 0)


# ----------------------------------------------------------- curriculum

@pytest.mark.parametrize("level,ratio,want", [(1.0, 0.3, 1.0), (1.0, 0.95, 1.0), (0.5, 0.9, 0.55), (0.5, 0.5, 0.5)])
def test_curriculum_rule(level, ratio, want):
    assert update_curriculum(level, ratio) == pytest.approx(want)


def test_curriculum_rejects_out_of_range():
    with pytest.raises(ValueError):
        update_curriculum(1.2, 0.5)


# ---------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ValueError):
        EnvConfig(dt=0.0)
    with pytest.raises(ValueError):
        EnvConfig(kp=-1.0)
    with pytest.raises(ValueError):
        EnvConfig.from_json({"dt": 0.02, "gravity": 9.8})
    assert EnvConfig.from_json(CFG.to_json()) == CFG


# ------------------------------------------------------------ trajectory log

def test_trajectory_log(tmp_path, rng):
    x = random_states(CFG, 4, rng)
    a = rng.standard_normal((3, 5))
    terms = rng.standard_normal((3, 7))
    path = tmp_path / "log.csv"
    write_trajectory_log(path, x, a, terms, 0.35, 2, 1, header="run abc")
    lines = path.read_text().splitlines()
    assert lines[0] == "# run abc"
    rows = list(csv.reader(lines[1:]))
    names = state_field_names(2, 1)
    assert len(names) == 40
    assert rows[0] == ["step", *names, *(f"action_{i}" for i in range(5)), *REWARD_TERMS, "curriculum_level"]
    assert len(rows) == 4
    assert np.array_equal(np.array(rows[2][1:41], dtype=float), x[1])
    assert float(rows[1][-1]) == 0.35
