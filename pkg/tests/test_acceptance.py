"""Acceptance criteria, one test each, at the stated tolerances and time budgets.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""
import itertools
import time

import numpy as np
import pytest

from conftest import directional_fd, record_criterion
from symmeq import numerics as nx
from symmeq.eqnn import (REGULAR, SIGN, TRIVIAL, EquivariantLinear, GaussianPolicyHead, Linear, MLP, NetConfig,
                         build_vanilla_mlp, equivariant_mlp, orbit_tables)
from symmeq.env import BilateralTracker, EnvConfig
from symmeq.metrics import evaluate, mirror_rollout_error, random_histories, spat_s
from symmeq.rl import (Adam, Agent, PPOConfig, ae_loss, collect_rollouts, compute_gae, gae_bruteforce, ppo_loss,
                       reg_loss, train, update, value_loss)
from symmeq.runs import load_train_config
from symmeq.symmetry import build_g1_profile, build_toy_profile, direct_sum
from symmeq.verify import check_env


class Clock:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


def _finish(number, passed, detail, clock, budget):
    ok = passed and clock.seconds < budget
    if passed and not ok:
        detail += f"; over the {budget:.0f}s budget"
    record_criterion(number, ok, detail, clock.seconds)
    assert ok, detail


# ------------------------------------------------- checkpoints for 1 and 2

def _three_checkpoints(variant):
    """The agent at init, after 100 optimizer steps, and after a checkpoint round-trip."""
    prof = build_toy_profile()
    agent = Agent.build(variant, prof, NetConfig(), seed=0, obs_normalization=True)
    yield "init", agent
    env = BilateralTracker(EnvConfig(), num_envs=4, seed=0, level=1.0)
    buf = collect_rollouts(agent, env, 8, seed=0)
    agent.normalizer.update(buf.flat("histories")[:, -1])
    adv = compute_gae(buf.rewards, buf.values, buf.dones, buf.last_values, 0.99, 0.95)
    opt = Adam(agent.parameters(), 1e-3)
    update(agent, opt, buf, adv, PPOConfig(epochs=25, minibatches=4, adaptive_lr=False), np.random.default_rng(0))
    assert opt.t == 100
    yield "100 steps", agent
    loaded, _ = Agent.load(agent.checkpoint(opt.state_dict(), opt.t))
    yield "round-trip", loaded


def test_criterion_01_actor_equivariance():
    worst = {}
    with Clock() as c:
        for variant in ("se-policy", "se-actor-only"):
            for stage, agent in _three_checkpoints(variant):
                prof = agent.profile
                hist = random_histories(prof.f_o, agent.actor.cfg.history + 1, 1000, np.random.default_rng(1))
                worst[f"{variant}@{stage}"] = spat_s(agent.policy_mean, hist, prof.f_o, prof.f_a)
    top = max(worst.values())
    _finish(1, top < 1e-10, f"max Spat-S {top:.2e} over {len(worst)} checkpoints (tol 1e-10)", c, 60)


def test_criterion_02_critic_invariance():
    worst = {}
    with Clock() as c:
        for stage, agent in _three_checkpoints("se-policy"):
            prof = agent.profile
            rng = np.random.default_rng(2)
            h = rng.standard_normal((1000, prof.height_dim))
            o = rng.standard_normal((1000, prof.obs_dim))
            gap = agent.value(prof.f_h.apply(h), prof.f_o.apply(o)) - agent.value(h, o)
            worst[stage] = float(np.abs(gap).max())
    top = max(worst.values())
    _finish(2, top < 1e-10, f"max |V(F(h),F(o)) - V(h,o)| {top:.2e} over 3 checkpoints (tol 1e-10)", c, 60)


# ------------------------------------------------------------ intertwiners

def _all_reps(max_dim=6):
    blocks = (TRIVIAL, SIGN, REGULAR)
    reps = {}
    for k in range(1, max_dim + 1):
        for combo in itertools.product(blocks, repeat=k):
            if sum(b.n for b in combo) <= max_dim:
                r = direct_sum(*combo)
                reps[(tuple(r.target), tuple(r.sign))] = r
    return list(reps.values())


def test_criterion_03_intertwiner_completeness():
    rng = np.random.default_rng(3)
    pairs = mismatches = 0
    worst = 0.0
    with Clock() as c:
        by_dim = {}
        for r in _all_reps():
            by_dim.setdefault(r.n, []).append((r, r.matrix()))
        for n_in, ins in by_dim.items():
            for n_out, outs in by_dim.items():
                # vec(W A) - vec(B W) = (A^T kron I - I kron B) vec(W), one SVD per pair, batched
                ka = np.stack([np.kron(a.T, np.eye(n_out)) for _, a in ins])
                kb = np.stack([np.kron(np.eye(n_in), b) for _, b in outs])
                s = np.linalg.svd((ka[:, None] - kb[None, :]).reshape(-1, n_in * n_out, n_in * n_out),
                                  compute_uv=False)
                nullity = (n_in * n_out - (s > 1e-9).sum(axis=1)).reshape(len(ins), len(outs))
                for (i, (ri, a)), (j, (ro, b)) in itertools.product(enumerate(ins), enumerate(outs)):
                    index, sign, n_free = orbit_tables(ri, ro)
                    pairs += 1
                    mismatches += int(n_free != nullity[i, j])
                    if n_free:
                        w = rng.standard_normal((200, n_free))[:, index] * sign
                        worst = max(worst, float(np.abs(w @ a - b @ w).max()))
    ok = mismatches == 0 and worst < 1e-12
    _finish(3, ok, f"{pairs} rep pairs, {mismatches} orbit/nullity mismatches, max residual {worst:.1e}", c, 60)


# --------------------------------------------------------------------- env

def test_criterion_04_environment_symmetry():
    with Clock() as c:
        trans, rew, _ = check_env(EnvConfig(), samples=10000, seed=4)
    ok = trans.residual < 1e-10 and rew.residual < 1e-12
    _finish(4, ok, f"transition residual {trans.residual:.1e} (tol 1e-10), "
                   f"reward-term residual {rew.residual:.1e} (tol 1e-12)", c, 60)


# --------------------------------------------------------------- gradients

def _instances(make_loss, params, rng, count=100, scale=0.5):
    worst = 0.0
    for _ in range(count):
        for p in params:
            p.data = rng.standard_normal(p.data.shape) * scale
        grads = nx.backward(make_loss())
        worst = max(worst, directional_fd(lambda: make_loss().item(), params, grads, rng, directions=1))
    return worst


def _net_loss(net, x, w):
    return lambda: nx.sum(nx.mul(net(nx.Tensor(x)), w))


def test_criterion_05_gradient_integrity():
    rng = np.random.default_rng(5)
    prof = build_toy_profile()
    net_cfg = NetConfig(actor_widths=(8, 8), critic_widths=(8, 8), encoder_widths=(8, 32), history=2)
    errors = {}
    with Clock() as c:
        rep_in, rep_out = direct_sum(SIGN, REGULAR), direct_sum(REGULAR, SIGN)
        x, w = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        for name, net in (("linear", MLP([Linear(3, 3, rng)])),
                          ("equivariant linear", MLP([EquivariantLinear(rep_in, rep_out, rng)]))):
            errors[name] = _instances(_net_loss(net, x, w), net.parameters(), rng)
        for act in ("elu", "relu", "tanh"):
            for kind, net in (("equivariant", equivariant_mlp(rep_in, (6, 4), rep_out, act, rng)),
                              ("vanilla", build_vanilla_mlp(3, 3, (6, 4), act, rng))):
                errors[f"{kind} mlp/{act}"] = _instances(_net_loss(net, x, w), net.parameters(), rng)

        head = GaussianPolicyHead(prof.f_a)
        mu = nx.Tensor(np.zeros((5, prof.act_dim)), requires_grad=True)
        acts = rng.standard_normal((5, prof.act_dim))
        errors["gaussian head"] = _instances(
            lambda: nx.add(nx.sum(head.log_prob(mu, acts)), head.entropy()), [mu, head.log_std], rng, scale=0.3)

        lp_new = nx.Tensor(np.zeros(8), requires_grad=True)
        lp_old, adv = rng.normal(0, 0.1, 8), rng.standard_normal(8)
        errors["ppo surrogate"] = _instances(lambda: ppo_loss(lp_new, lp_old, adv, 0.2)[0], [lp_new], rng, scale=0.1)

        agent = Agent.build("vanilla-regu", prof, net_cfg, seed=0)
        h, o, y = rng.standard_normal((6, prof.height_dim)), rng.standard_normal((6, prof.obs_dim)), rng.standard_normal(6)
        errors["value mse"] = _instances(lambda: value_loss(agent.critic(h, o), y), agent.critic.parameters(), rng)
        actor = agent.actor
        hist, nxt = rng.standard_normal((5, 3, prof.obs_dim)), rng.standard_normal((5, prof.obs_dim))
        errors["autoencoder"] = _instances(lambda: ae_loss(actor.predict_next(actor.encode(hist)), nxt),
                                           actor.encoder.parameters() + actor.decoder.parameters(), rng)
        errors["mirror regularizer"] = _instances(lambda: reg_loss(actor, hist),
                                                  actor.encoder.parameters() + actor.policy.parameters(), rng)
    name, top = max(errors.items(), key=lambda kv: kv[1])
    _finish(5, top < 1e-4, f"{len(errors)} layer/loss checks x 100 instances, "
                           f"max relative error {top:.1e} ({name}; tol 1e-4)", c, 300)


# --------------------------------------------------------------------- GAE

def test_criterion_06_gae_oracle():
    rng = np.random.default_rng(6)
    worst = 0.0
    with Clock() as c:
        for _ in range(1000):
            T = int(rng.integers(1, 7))
            r, v = rng.standard_normal(T), rng.standard_normal(T)
            d = (rng.random(T) < 0.3).astype(float)
            last = float(rng.standard_normal())
            gamma, lam = rng.uniform(0.5, 1.0 - 1e-9), rng.uniform(0.0, 1.0)
            est = compute_gae(r, v, d, last, gamma, lam)
            adv, ret = gae_bruteforce(r, v, d, last, gamma, lam)
            worst = max(worst, float(np.abs(est.advantages - adv).max()), float(np.abs(est.returns - ret).max()))
    _finish(6, worst < 1e-12, f"1000 trajectories, max |analytic - double loop| {worst:.1e} (tol 1e-12)", c, 10)


# ------------------------------------------------------------ mirror table

def _g1_expected():
    """Hand-written mirror matrices for the G1 observation, action and height layouts."""
    def joint_block():
        m = np.zeros((27, 27))
        for left, right, width in ((0, 7, 7), (14, 20, 6)):
            for k in range(width):
                m[right + k, left + k] = m[left + k, right + k] = -1.0
        m[26, 26] = 1.0
        return m

    obs = np.zeros((92, 92))
    obs[:9, :9] = np.diag([-1, 1, -1, 1, -1, 1, 1, -1, -1])
    for off in (9, 36, 63):
        obs[off:off + 27, off:off + 27] = joint_block()
    obs[90:, 90:] = -np.eye(2)
    height = np.zeros((187, 187))
    height[:85, 102:] = height[102:, :85] = np.eye(85)
    height[85:102, 85:102] = np.eye(17)
    return {"obs": obs, "act": joint_block(), "height": height}


def test_criterion_07_mirror_table_conformance():
    with Clock() as c:
        prof = build_g1_profile()
        expected = _g1_expected()
        row_gap = max(float(np.abs(prof.transforms[k].matrix() - m).max()) for k, m in expected.items())
        inv_gap = max(float(np.abs(t.matrix() @ t.matrix() - np.eye(t.n)).max()) for t in prof.transforms.values())
    ok = row_gap == 0.0 and inv_gap == 0.0
    _finish(7, ok, f"rows vs hand table max gap {row_gap:.0e}, involution gap {inv_gap:.0e} "
                   f"over {', '.join(prof.transforms)}", c, 1)


# ---------------------------------------------------------- reproduction

VARIANTS4 = ("se-policy", "vanilla", "vanilla-regu", "se-actor-only")


@pytest.mark.slow
def test_criterion_08_directional_reproduction():
    results = {}
    with Clock() as c:
        for seed in (0, 1, 2):
            for variant in VARIANTS4:
                cfg = load_train_config(preset="desk", variant=variant, seed=seed, iterations=200)
                agent, _ = train(cfg)
                report, _ = evaluate(agent, cfg.env, episodes=64, seed=1000 + seed)
                results[variant, seed] = report
    seeds = (0, 1, 2)
    te = sum(results["se-policy", s].te_v[0] <= results["vanilla", s].te_v[0] for s in seeds)
    se_zero = all(results[v, s].spat_s[0] < 1e-10 for v in ("se-policy",) for s in seeds)
    positive = all(results[v, s].spat_s[0] > 0 for v in ("vanilla", "vanilla-regu") for s in seeds)
    regu = sum(results["vanilla-regu", s].spat_s[0] < results["vanilla", s].spat_s[0] for s in seeds)
    temp = sum(results["se-policy", s].temp_s[0] <= results["vanilla", s].temp_s[0] for s in seeds)
    for (v, s), r in sorted(results.items(), key=lambda kv: (kv[0][1], VARIANTS4.index(kv[0][0]))):
        print(f"seed {s} {v:14s} TE-V {r.te_v[0]:7.2f} cm/s  Temp-S {r.temp_s[0]:.3f}  Spat-S {r.spat_s[0]:.3e}")
    ok = te >= 2 and se_zero and positive and regu >= 2 and temp >= 2
    _finish(8, ok, f"(a) TE-V SE<=vanilla {te}/3; (b) SE Spat-S==0 {se_zero}, baselines>0 {positive}, "
                   f"regu<vanilla {regu}/3; (c) Temp-S SE<=vanilla {temp}/3", c, 1800)


def test_criterion_09_mirrored_rollouts():
    with Clock() as c:
        prof = build_toy_profile()
        cfg = EnvConfig()
        se = max(mirror_rollout_error(Agent.build("se-policy", prof, NetConfig(), seed=s), cfg, seed=s, steps=200)
                 for s in range(3))
        vanilla = mirror_rollout_error(Agent.build("vanilla", prof, NetConfig(), seed=0), cfg, seed=0, steps=200)
    ok = se < 1e-6 and vanilla > 1e-3
    _finish(9, ok, f"SE-Policy max gap {se:.1e} (tol 1e-6); vanilla gap {vanilla:.2e} (must exceed 1e-3)", c, 10)


def test_criterion_10_regularizer_fixed_point():
    rng = np.random.default_rng(10)
    worst = 0.0
    with Clock() as c:
        prof = build_toy_profile()
        for seed in range(5):
            actor = Agent.build("se-policy", prof, NetConfig(), seed=seed).actor
            for p in actor.parameters():
                p.data = rng.standard_normal(p.data.shape)
            hist = rng.standard_normal((64, actor.cfg.history + 1, prof.obs_dim))
            worst = max(worst, reg_loss(actor, hist).item())
    _finish(10, worst < 1e-18, f"max L_reg on SE actors {worst:.1e} (tol 1e-18)", c, 1)
