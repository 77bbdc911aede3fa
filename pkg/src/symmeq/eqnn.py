"""Equivariant and plain MLPs built on the autodiff core.

An equivariant layer stores one free coefficient per orbit of weight-matrix
entries under ``(i, j) -> (t_out[i], t_in[j])``; the realized matrix then
satisfies ``W @ rho_in == rho_out @ W`` by construction. Hidden features are
copies of the 2-d swap representation, so pointwise activations commute with
the group action.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .symmetry import LayoutProfile, SignedPermutation, direct_sum, repeat

TRIVIAL = SignedPermutation.identity(1)
SIGN = SignedPermutation.negation(1)
REGULAR = SignedPermutation.pair_swap(2)

ACTIVATIONS = {"elu": nx.elu, "relu": nx.relu, "tanh": nx.tanh}


# ------------------------------------------------------------ intertwiners

@dataclass(frozen=True)
class IntertwinerOrbit:
    entries: tuple  # ((i, j), ...)
    signs: tuple  # relative sign per entry, first entry +1
    free: bool  # False: orbit forced to zero

    @property
    def size(self):
        return len(self.entries)


def _check_involution(rep, what):
    if not rep.is_involution():
        raise ValueError(f"{what} representation is not an involution")


def orbit_tables(rho_in, rho_out):
    """Index/sign tables realizing the intertwiner space.

    Returns ``(index, sign, n_free)`` with shape ``(out, in)``; the realized
    weight is ``coeffs[index] * sign``. Entries forced to zero carry sign 0.
    """
    _check_involution(rho_in, "input")
    _check_involution(rho_out, "output")
    n_out, n_in = rho_out.n, rho_in.n
    flat = np.arange(n_out * n_in).reshape(n_out, n_in)
    partner = flat[np.ix_(rho_out.target, rho_in.target)]
    rel = np.outer(rho_out.sign, rho_in.sign)
    canon = np.minimum(flat, partner)
    dead = (partner == flat) & (rel < 0)
    sign = np.where(dead, 0.0, np.where(flat == canon, 1.0, rel))
    live = np.unique(canon[~dead])
    lookup = np.zeros(n_out * n_in, dtype=np.int64)
    lookup[live] = np.arange(live.size)
    index = np.where(dead, 0, lookup[canon])
    return index, sign, int(live.size)


def bias_tables(rho_out):
    """Tables for ``b = rho_out @ b``: same construction with a 1-d trivial input."""
    index, sign, n = orbit_tables(TRIVIAL, rho_out)
    return index[:, 0], sign[:, 0], n


def solve_intertwiner_basis(rho_in, rho_out):
    """Orbit decomposition of the (out x in) matrix entries."""
    _check_involution(rho_in, "input")
    _check_involution(rho_out, "output")
    seen, orbits = set(), []
    for i in range(rho_out.n):
        for j in range(rho_in.n):
            if (i, j) in seen:
                continue
            p = (int(rho_out.target[i]), int(rho_in.target[j]))
            rel = float(rho_out.sign[i] * rho_in.sign[j])
            seen.update({(i, j), p})
            if p == (i, j):
                orbits.append(IntertwinerOrbit(((i, j),), (1.0,), rel > 0))
            else:
                orbits.append(IntertwinerOrbit(((i, j), p), (1.0, rel), True))
    return orbits


def project_bias(rho_out):
    _check_involution(rho_out, "output")
    seen, orbits = set(), []
    for i in range(rho_out.n):
        if i in seen:
            continue
        p = int(rho_out.target[i])
        seen.update({i, p})
        if p == i:
            orbits.append(IntertwinerOrbit((i,), (1.0,), rho_out.sign[i] > 0))
        else:
            orbits.append(IntertwinerOrbit((i, p), (1.0, float(rho_out.sign[i])), True))
    return orbits


def constraint_nullity(rho_in, rho_out):
    """Dimension of {W : W rho_in = rho_out W} via SVD of the vectorized constraint."""
    a, b = rho_in.matrix(), rho_out.matrix()
    # vec(W A) - vec(B W) = (A^T kron I - I kron B) vec(W)
    m = np.kron(a.T, np.eye(rho_out.n)) - np.kron(np.eye(rho_in.n), b)
    s = np.linalg.svd(m, compute_uv=False)
    return int(m.shape[1] - np.sum(s > 1e-9))


# ------------------------------------------------------------------ layers

def _rep_to_json(rep):
    return {"target": rep.target.tolist(), "sign": [int(s) for s in rep.sign]}


def _rep_from_json(d):
    return SignedPermutation(d["target"], d["sign"])


def _take(coeffs, index, sign):
    return coeffs[index] * sign if coeffs.size else np.zeros(index.shape)


class EquivariantLinear:
    def __init__(self, rho_in, rho_out, rng=None):
        self.rho_in, self.rho_out = rho_in, rho_out
        w_index, w_sign, n_w = orbit_tables(rho_in, rho_out)
        # stored transposed so forward is x @ W^T without a transpose op
        self.w_index, self.w_sign = w_index.T.copy(), w_sign.T.copy()
        self.b_index, self.b_sign, n_b = bias_tables(rho_out)
        bound = 1.0 / math.sqrt(rho_in.n)
        rng = rng if rng is not None else np.random.default_rng()
        self.weight = nx.Tensor(rng.uniform(-bound, bound, n_w), requires_grad=True, name="w")
        self.bias = nx.Tensor(rng.uniform(-bound, bound, n_b), requires_grad=True, name="b")

    @property
    def in_dim(self):
        return self.rho_in.n

    @property
    def out_dim(self):
        return self.rho_out.n

    def parameters(self):
        return [self.weight, self.bias]

    def realized(self):
        """(W, b) as dense arrays, W with shape (out, in)."""
        w = _take(self.weight.data, self.w_index, self.w_sign).T
        return w, _take(self.bias.data, self.b_index, self.b_sign)

    def __call__(self, x):
        w = nx.gather_signed(self.weight, self.w_index, self.w_sign)
        b = nx.gather_signed(self.bias, self.b_index, self.b_sign)
        return nx.matmul(x, w) + b

    def forward_np(self, x):
        w, b = self.realized()
        return x @ w.T + b

    def to_json(self):
        return {
            "kind": "equivariant",
            "in_rep": _rep_to_json(self.rho_in),
            "out_rep": _rep_to_json(self.rho_out),
        }


class Linear:
    """Unconstrained dense layer (the baseline networks)."""

    def __init__(self, in_dim, out_dim, rng=None):
        bound = 1.0 / math.sqrt(in_dim)
        rng = rng if rng is not None else np.random.default_rng()
        self.weight = nx.Tensor(rng.uniform(-bound, bound, (in_dim, out_dim)), requires_grad=True, name="w")
        self.bias = nx.Tensor(rng.uniform(-bound, bound, out_dim), requires_grad=True, name="b")

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]

    def parameters(self):
        return [self.weight, self.bias]

    def realized(self):
        return self.weight.data.T, self.bias.data

    def __call__(self, x):
        return nx.matmul(x, self.weight) + self.bias

    def forward_np(self, x):
        return x @ self.weight.data + self.bias.data

    def to_json(self):
        return {"kind": "dense", "in_dim": self.in_dim, "out_dim": self.out_dim}


class MLP:
    """Layers with a pointwise activation between them (none after the last)."""

    def __init__(self, layers, activation="elu"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.layers = layers
        self.activation = activation
        for layer in layers[:-1]:
            rep = getattr(layer, "rho_out", None)
            if rep is not None and rep.has_negative_sign():
                raise ValueError("pointwise activation on a feature whose representation flips signs")

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    @property
    def widths(self):
        return [layer.out_dim for layer in self.layers[:-1]]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, x):
        act = ACTIVATIONS[self.activation]
        for layer in self.layers[:-1]:
            x = act(layer(x))
        return self.layers[-1](x)

    def forward_np(self, x):
        return self(nx.Tensor(x)).data


def equivariant_mlp(rho_in, widths, rho_out, activation="elu", rng=None):
    """Input rep -> copies of the swap rep (one per pair of hidden units) -> output rep."""
    reps = [rho_in]
    for w in widths:
        if w % 2:
            raise ValueError(f"hidden width {w} is odd; equivariant hidden layers need even widths")
        reps.append(repeat(REGULAR, w // 2))
    reps.append(rho_out)
    layers = [EquivariantLinear(a, b, rng) for a, b in zip(reps[:-1], reps[1:])]
    return MLP(layers, activation)


def build_vanilla_mlp(in_dim, out_dim, widths, activation="elu", rng=None):
    dims = [in_dim, *widths, out_dim]
    return MLP([Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])], activation)


# ------------------------------------------------------------ actor/critic

@dataclass
class NetConfig:
    actor_widths: tuple = (64, 64)
    critic_widths: tuple = (64, 64)
    encoder_widths: tuple = (64, 32)  # hidden widths, then the latent size
    history: int = 5  # h: the encoder sees h + 1 observation rows
    activation: str = "elu"
    init_log_std: float = 0.0

    @property
    def latent_size(self):
        return self.encoder_widths[-1]

    @property
    def decoder_widths(self):
        return tuple(reversed(self.encoder_widths))

    @classmethod
    def g1(cls):
        return cls((512, 256, 128), (512, 256, 128), (512, 256, 128, 64), 5)


class GaussianPolicyHead:
    """Diagonal Gaussian; log-std tied across action swap pairs when ``tied``."""

    LOG_2PI = math.log(2.0 * math.pi)

    def __init__(self, f_a, init_log_std=0.0, tied=True):
        self.f_a = f_a
        rep = SignedPermutation(f_a.target) if tied else SignedPermutation.identity(f_a.n)
        self.index, self.sign, n = bias_tables(rep)
        self.log_std = nx.Tensor(np.full(n, float(init_log_std)), requires_grad=True, name="log_std")

    def parameters(self):
        return [self.log_std]

    def log_std_full(self):
        return nx.gather_signed(self.log_std, self.index, self.sign)

    def std(self):
        return np.exp(self.log_std.data[self.index])

    def log_prob(self, mu, actions):
        """Per-sample log density (Tensor, shape (batch,))."""
        ls = self.log_std_full()
        diff = nx.sub(actions, mu)
        z = nx.mul(diff, nx.exp(nx.neg(ls)))
        per_dim = nx.sub(nx.mul(nx.square(z), -0.5), ls)
        return nx.sub(nx.sum(per_dim, axis=1), 0.5 * self.LOG_2PI * mu.shape[1])

    def log_prob_np(self, mu, actions):
        ls = self.log_std.data[self.index]
        z = (actions - mu) * np.exp(-ls)
        return np.sum(-0.5 * z * z - ls, axis=-1) - 0.5 * self.LOG_2PI * mu.shape[-1]

    def entropy(self):
        ls = self.log_std_full()
        return nx.add(nx.sum(ls), 0.5 * (1.0 + self.LOG_2PI) * ls.shape[0])

    def sample(self, mu, rng):
        """Draw actions and their log-probs for a batch of means."""
        mu = np.asarray(mu, dtype=np.float64)
        if not np.all(np.isfinite(mu)):
            raise nx.NonFiniteError("policy mean")
        a = mu + self.std() * rng.standard_normal(mu.shape)
        return a, self.log_prob_np(mu, a)


class Actor:
    """History encoder + observation decoder + policy net + Gaussian head."""

    def __init__(self, profile: LayoutProfile, cfg: NetConfig, equivariant=True, rng=None):
        self.profile, self.cfg, self.equivariant = profile, cfg, equivariant
        rng = rng if rng is not None else np.random.default_rng()
        f_o, f_z, f_a = profile.f_o, profile.f_z, profile.f_a
        rows = cfg.history + 1
        act = cfg.activation
        if cfg.latent_size != profile.latent_size:
            raise ValueError(f"encoder ends at {cfg.latent_size} but the profile latent is {profile.latent_size}")
        enc_hidden, dec_hidden = cfg.encoder_widths[:-1], cfg.decoder_widths[1:]
        if equivariant:
            self.encoder = equivariant_mlp(repeat(f_o, rows), enc_hidden, f_z, act, rng)
            self.decoder = equivariant_mlp(f_z, dec_hidden, f_o, act, rng)
            self.policy = equivariant_mlp(direct_sum(f_o, f_z), cfg.actor_widths, f_a, act, rng)
        else:
            n_o, n_z = f_o.n, f_z.n
            self.encoder = build_vanilla_mlp(rows * n_o, n_z, enc_hidden, act, rng)
            self.decoder = build_vanilla_mlp(n_z, n_o, dec_hidden, act, rng)
            self.policy = build_vanilla_mlp(n_o + n_z, f_a.n, cfg.actor_widths, act, rng)
        self.head = GaussianPolicyHead(f_a, cfg.init_log_std, tied=equivariant)

    @property
    def networks(self):
        return {"encoder": self.encoder, "decoder": self.decoder, "policy": self.policy}

    def parameters(self):
        return [p for net in self.networks.values() for p in net.parameters()] + self.head.parameters()

    def _split(self, history):
        """history (batch, h+1, n_o) -> (flat Tensor, current obs Tensor)."""
        history = np.asarray(history, dtype=np.float64)
        rows, n_o = self.cfg.history + 1, self.profile.obs_dim
        if history.shape[-2:] != (rows, n_o):
            raise ValueError(f"history must be (batch, {rows}, {n_o}), got {history.shape}")
        flat = history.reshape(history.shape[0], rows * n_o)
        return nx.Tensor(flat), nx.Tensor(history[:, -1, :])

    def encode(self, history):
        flat, _ = self._split(history)
        return self.encoder(flat)

    def mean(self, history):
        """Deterministic action mean and latent for a batch of histories."""
        flat, obs = self._split(history)
        z = self.encoder(flat)
        return self.policy(nx.concat([obs, z], axis=1)), z

    def predict_next(self, z):
        return self.decoder(z)

    def act_mean(self, history):
        return self.mean(history)[0].data


class Critic:
    """V(H, o): privileged terrain strip plus current observation."""

    def __init__(self, profile: LayoutProfile, cfg: NetConfig, equivariant=True, rng=None):
        self.profile, self.equivariant = profile, equivariant
        rng = rng if rng is not None else np.random.default_rng()
        if equivariant:
            rep_in = direct_sum(profile.f_h, profile.f_o)
            self.net = equivariant_mlp(rep_in, cfg.critic_widths, TRIVIAL, cfg.activation, rng)
        else:
            self.net = build_vanilla_mlp(
                profile.height_dim + profile.obs_dim, 1, cfg.critic_widths, cfg.activation, rng
            )

    @property
    def networks(self):
        return {"critic": self.net}

    def parameters(self):
        return self.net.parameters()

    def __call__(self, height, obs):
        x = nx.concat([nx.as_tensor(np.asarray(height, float)), nx.as_tensor(np.asarray(obs, float))], axis=1)
        return nx.reshape(self.net(x), (-1,))

    def value_np(self, height, obs):
        return self(height, obs).data


# -------------------------------------------------------------- checkpoint

def _fmt(values):
    # repr of a float is the shortest string that round-trips exactly
    return [repr(float(v)) for v in np.asarray(values).reshape(-1)]


def _parse(strings, shape):
    return np.array([float(s) for s in strings], dtype=np.float64).reshape(shape)


def _net_to_json(mlp, name):
    return {
        "name": name,
        "activation": mlp.activation,
        "widths": mlp.widths,
        "layers": [
            {**layer.to_json(), "weight": _fmt(layer.weight.data), "bias": _fmt(layer.bias.data)}
            for layer in mlp.layers
        ],
    }


def _load_net(mlp, d):
    if len(d["layers"]) != len(mlp.layers):
        raise ValueError(f"{d['name']}: layer count mismatch")
    for layer, ld in zip(mlp.layers, d["layers"]):
        if ld["kind"] == "equivariant":
            if not isinstance(layer, EquivariantLinear) or (
                _rep_from_json(ld["in_rep"]) != layer.rho_in or _rep_from_json(ld["out_rep"]) != layer.rho_out
            ):
                raise ValueError(f"{d['name']}: representation mismatch")
        layer.weight.data = _parse(ld["weight"], layer.weight.shape)
        layer.bias.data = _parse(ld["bias"], layer.bias.shape)


def checkpoint_dict(actor, critic, optimizer_state=None, step=0, extra=None):
    nets = [_net_to_json(net, name) for name, net in actor.networks.items()]
    nets.append(_net_to_json(critic.net, "critic"))
    return {
        "format": "symmeq-checkpoint/1",
        "profile": actor.profile.to_json(),
        "net_config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(actor.cfg).items()},
        "actor_equivariant": actor.equivariant,
        "critic_equivariant": critic.equivariant,
        "networks": nets,
        "log_std": _fmt(actor.head.log_std.data),
        "optimizer": optimizer_state or {},
        "step": int(step),
        **(extra or {}),
    }


def save_checkpoint(path, actor, critic, optimizer_state=None, step=0, extra=None):
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(actor, critic, optimizer_state, step, extra), fh)


def load_checkpoint(path_or_dict):
    """Rebuild (actor, critic, checkpoint dict) from a saved checkpoint."""
    if isinstance(path_or_dict, dict):
        d = path_or_dict
    else:
        with open(path_or_dict) as fh:
            d = json.load(fh)
    profile = LayoutProfile.from_json(d["profile"])
    nc = dict(d["net_config"])
    cfg = NetConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in nc.items()})
    actor = Actor(profile, cfg, d["actor_equivariant"], np.random.default_rng(0))
    critic = Critic(profile, cfg, d["critic_equivariant"], np.random.default_rng(0))
    by_name = {n["name"]: n for n in d["networks"]}
    for name, net in actor.networks.items():
        _load_net(net, by_name[name])
    _load_net(critic.net, by_name["critic"])
    actor.head.log_std.data = _parse(d["log_std"], actor.head.log_std.shape)
    return actor, critic, d


class ObsNormalizer:
    """Running mean/variance whose statistics are kept mirror-symmetric.

    After every update the mean is projected onto the fixed space of ``f_o``
    and the variance is averaged over swapped coordinates, so
    ``normalize(f_o(x)) == f_o(normalize(x))`` holds exactly.
    """

    def __init__(self, f_o, eps=1e-8, clip=10.0):
        self.f_o = f_o
        self.perm = SignedPermutation(f_o.target)
        self.mean = np.zeros(f_o.n)
        self.var = np.ones(f_o.n)
        self.count = eps
        self.eps, self.clip = eps, clip

    def update(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.f_o.n)
        b_mean, b_var, b_n = x.mean(axis=0), x.var(axis=0), x.shape[0]
        delta = b_mean - self.mean
        total = self.count + b_n
        self.mean = self.mean + delta * b_n / total
        m2 = self.var * self.count + b_var * b_n + delta * delta * self.count * b_n / total
        self.var = m2 / total
        self.count = total
        self.symmetrize()

    def symmetrize(self):
        self.mean = 0.5 * (self.mean + self.f_o.apply(self.mean))
        self.var = 0.5 * (self.var + self.perm.apply(self.var))

    def __call__(self, x):
        return np.clip((x - self.mean) / np.sqrt(self.var + self.eps), -self.clip, self.clip)

    def state_dict(self):
        return {"mean": _fmt(self.mean), "var": _fmt(self.var), "count": repr(float(self.count))}

    def load_state_dict(self, d):
        self.mean = _parse(d["mean"], self.mean.shape)
        self.var = _parse(d["var"], self.var.shape)
        self.count = float(d["count"])
