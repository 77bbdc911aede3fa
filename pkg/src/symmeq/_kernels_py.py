"""Pure numpy kernels; same arithmetic, same operation order as ``_kernels.pyx``."""
import numpy as np

N_TERMS = 7
BACKEND = "python"


def offsets(k, m):
    n = 2 * k + m
    return {
        "th": 6, "thd": 6 + n, "ph": 6 + 2 * n, "half": 7 + 2 * n, "cmd": 8 + 2 * n,
        "ter": 11 + 2 * n, "a1": 14 + 2 * n, "a2": 14 + 3 * n, "par": 14 + 4 * n,
        "dim": 20 + 4 * n,
    }


def step_batch(state, action, params, k, m):
    """Advance every row of ``state`` by one control step.

    Returns ``(next_state, terms)`` where ``terms`` holds the weighted reward
    components (tracking lin, tracking yaw, alive, action rate, smoothness,
    torque, swing drive) per row.
    """
    state = np.ascontiguousarray(state, dtype=np.float64)
    action = np.ascontiguousarray(action, dtype=np.float64)
    p = params
    n = 2 * k + m
    o = offsets(k, m)
    dt, period, kp, kd, inertia = p[0], p[1], p[2], p[3], p[4]
    c1, c2, c3, c4, dx, dy, dw, zone_w, a_clip, sigma = p[5:15]
    li = 1 if k >= 2 else 0

    th = state[:, o["th"]:o["th"] + n]
    thd = state[:, o["thd"]:o["thd"] + n]
    a1 = state[:, o["a1"]:o["a1"] + n]
    a2 = state[:, o["a2"]:o["a2"] + n]
    par = state[:, o["par"]:o["par"] + 6]
    kp_s, kd_s, strength, drag_s, delay = (par[:, i:i + 1] for i in range(5))

    a = np.clip(action, -a_clip, a_clip)
    applied = p[22] * np.where(delay > 0.5, a1, a)
    tau = strength * (kp * kp_s * (applied - th) - kd * kd_s * thd)
    thd_new = thd + tau / inertia * dt
    th_new = th + thd_new * dt

    u_l = -thd_new[:, 0:k]
    u_r = thd_new[:, k:2 * k]
    sin_phi = state[:, o["half"]] * np.sin(state[:, o["ph"]])
    st_l = (sin_phi > 0.0).astype(np.float64)
    st_r = (sin_phi < 0.0).astype(np.float64)

    py = state[:, 1]
    ter = state[:, o["ter"]:o["ter"] + 3]
    zone = np.where(py > zone_w, ter[:, 0], np.where(py < -zone_w, ter[:, 2], ter[:, 1]))
    drag = zone * drag_s[:, 0]

    vx, vy, w = state[:, 3], state[:, 4], state[:, 5]
    lat = u_l[:, li] * st_l - u_r[:, li] * st_r
    fx = c1 * (u_l[:, 0] * st_l + u_r[:, 0] * st_r) - dx * vx * drag
    fy = c2 * lat - dy * vy * drag
    center = th_new[:, 2 * k:].sum(axis=1) if m else 0.0
    tz = c3 * lat + c4 * center - dw * w * drag
    vx_n = vx + fx * dt
    vy_n = vy + fy * dt
    w_n = w + tz * dt

    psi = state[:, 2]
    cp, sp = np.cos(psi), np.sin(psi)
    out = state.copy()
    out[:, 0] = state[:, 0] + (cp * vx_n - sp * vy_n) * dt
    out[:, 1] = py + (sp * vx_n + cp * vy_n) * dt
    out[:, 2] = psi + w_n * dt
    out[:, 3], out[:, 4], out[:, 5] = vx_n, vy_n, w_n
    out[:, o["th"]:o["th"] + n] = th_new
    out[:, o["thd"]:o["thd"] + n] = thd_new
    ph = state[:, o["ph"]] + 2.0 * np.pi * dt / period
    wrap = ph >= np.pi
    out[:, o["ph"]] = np.where(wrap, ph - np.pi, ph)
    out[:, o["half"]] = np.where(wrap, -state[:, o["half"]], state[:, o["half"]])
    out[:, o["a1"]:o["a1"] + n] = a
    out[:, o["a2"]:o["a2"] + n] = a1
    out[:, o["par"] + 5] = par[:, 5] + 1.0

    cmd = state[:, o["cmd"]:o["cmd"] + 3]
    terms = np.empty((state.shape[0], N_TERMS))
    ex, ey, ew = vx_n - cmd[:, 0], vy_n - cmd[:, 1], w_n - cmd[:, 2]
    terms[:, 0] = p[15] * np.exp(-(ex * ex + ey * ey) / sigma)
    terms[:, 1] = p[16] * np.exp(-(ew * ew) / sigma)
    terms[:, 2] = p[17]
    d1 = a - a1
    d2 = a - 2.0 * a1 + a2
    terms[:, 3] = p[18] * (d1 * d1).sum(axis=1)
    terms[:, 4] = p[19] * (d2 * d2).sum(axis=1)
    terms[:, 5] = p[20] * (tau * tau).sum(axis=1)
    swing = ((1.0 - st_l)[:, None] * u_l * u_l).sum(axis=1) + ((1.0 - st_r)[:, None] * u_r * u_r).sum(axis=1)
    terms[:, 6] = p[21] * swing
    return out, terms


def gae(rewards, values, dones, last_values, gamma, lam):
    """Backward GAE recursion over (T, N) arrays; returns (advantages, returns)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    next_v = np.asarray(last_values, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        notdone = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_v * notdone - values[t]
        running = delta + gamma * lam * notdone * running
        adv[t] = running
        next_v = values[t]
    return adv, adv + values
