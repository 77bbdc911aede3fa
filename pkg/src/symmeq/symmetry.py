"""Reflection (C2) actions on observation, action, state, latent and height-map spaces.

Every space carries one signed permutation: coordinate ``i`` is sent to
``target[i]`` and multiplied by ``sign[i]``. Layout profiles assemble those
permutations from named components.
"""
from __future__ import annotations

import json
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np


class SignedPermutation:
    """Signed permutation acting on R^n by ``out[target[i]] = sign[i] * x[i]``."""

    __slots__ = ("target", "sign", "_src")

    def __init__(self, target, sign=None):
        target = np.asarray(target, dtype=np.int64).reshape(-1)
        n = target.size
        if sorted(target.tolist()) != list(range(n)):
            raise ValueError("target is not a bijection on [0, n)")
        sign = np.ones(n) if sign is None else np.asarray(sign, dtype=np.float64).reshape(-1)
        if sign.size != n or not np.all(np.abs(sign) == 1.0):
            raise ValueError("sign must hold one +1/-1 entry per index")
        self.target = target
        self.sign = sign
        self.target.setflags(write=False)
        self.sign.setflags(write=False)
        src = np.empty(n, dtype=np.int64)
        src[target] = np.arange(n)
        src.setflags(write=False)
        self._src = src

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n))

    @classmethod
    def negation(cls, n):
        return cls(np.arange(n), -np.ones(n))

    @classmethod
    def pair_swap(cls, n):
        """Adjacent pairs (2i, 2i+1) exchanged, signs +1 (the latent transform)."""
        if n % 2:
            raise ValueError("pair swap needs an even size")
        return cls(np.arange(n) ^ 1)

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m)
        rows, cols = np.nonzero(m)
        if rows.size != m.shape[1]:
            raise ValueError("not a signed permutation matrix")
        target = np.empty(m.shape[1], dtype=np.int64)
        target[cols] = rows
        return cls(target, m[target, np.arange(m.shape[1])])

    def __len__(self):
        return self.target.size

    @property
    def n(self):
        return self.target.size

    def __eq__(self, other):
        return (
            isinstance(other, SignedPermutation)
            and np.array_equal(self.target, other.target)
            and np.array_equal(self.sign, other.sign)
        )

    def __hash__(self):
        return hash((self.target.tobytes(), self.sign.tobytes()))

    def __repr__(self):
        return f"SignedPermutation(n={self.n})"

    def apply(self, x):
        """Act on the last axis of ``x`` (so batches of vectors work too)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n:
            raise ValueError(f"length mismatch: transform has {self.n}, input has {x.shape[-1]}")
        return x[..., self._src] * self.sign[self._src]

    __call__ = apply

    def matrix(self):
        m = np.zeros((self.n, self.n))
        m[self.target, np.arange(self.n)] = self.sign
        return m

    def is_involution(self):
        return bool(
            np.array_equal(self.target[self.target], np.arange(self.n))
            and np.all(self.sign * self.sign[self.target] == 1.0)
        )

    def is_identity(self):
        return bool(np.array_equal(self.target, np.arange(self.n)) and np.all(self.sign == 1.0))

    def has_negative_sign(self):
        return bool(np.any(self.sign < 0))

    def direct_sum(self, *others):
        return direct_sum(self, *others)


def compose(t1, t2):
    """``compose(t1, t2).apply(x) == t1.apply(t2.apply(x))``."""
    if t1.n != t2.n:
        raise ValueError(f"length mismatch: {t1.n} vs {t2.n}")
    return SignedPermutation(t1.target[t2.target], t2.sign * t1.sign[t2.target])


def direct_sum(*perms):
    """Block-diagonal action on the concatenation of the input spaces."""
    targets, signs, offset = [], [], 0
    for p in perms:
        targets.append(p.target + offset)
        signs.append(p.sign)
        offset += p.n
    return SignedPermutation(np.concatenate(targets), np.concatenate(signs))


def repeat(perm, copies):
    return direct_sum(*([perm] * copies))


def mirror_history(f_o, history):
    """Apply ``f_o`` to every row of a stacked observation history."""
    history = np.asarray(history, dtype=np.float64)
    if history.shape[-1] != f_o.n:
        raise ValueError(f"width mismatch: rows have {history.shape[-1]}, transform has {f_o.n}")
    return f_o.apply(history)


# ----------------------------------------------------------------- layouts

KINDS = ("fixed", "negated", "diag", "swap")


@dataclass(frozen=True)
class ComponentSpec:
    """One named block of a space.

    ``fixed`` and ``negated`` act in place with sign +1 / -1, ``diag`` acts in
    place with explicit per-dim ``signs``, and ``swap`` exchanges the block
    with ``partner`` (same dimension), multiplying by ``signs`` (default -1).
    """

    name: str
    dim: int
    kind: str = "fixed"
    partner: str | None = None
    signs: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError(f"{self.name}: dim must be positive")
        if self.kind == "swap" and not self.partner:
            raise ValueError(f"{self.name}: swap component needs a partner")
        if self.kind == "diag" and self.signs is None:
            raise ValueError(f"{self.name}: diag component needs signs")
        if self.signs is not None:
            object.__setattr__(self, "signs", tuple(float(s) for s in self.signs))
            if len(self.signs) != self.dim:
                raise ValueError(f"{self.name}: {len(self.signs)} signs for dim {self.dim}")

    def dim_signs(self):
        if self.signs is not None:
            return np.array(self.signs)
        default = {"fixed": 1.0, "negated": -1.0, "swap": -1.0}[self.kind]
        return np.full(self.dim, default)

    def to_json(self):
        out = {"name": self.name, "dim": self.dim, "kind": self.kind}
        if self.partner:
            out["partner"] = self.partner
        if self.signs is not None:
            out["signs"] = list(self.signs)
        return out

    @classmethod
    def from_json(cls, d):
        unknown = set(d) - {"name", "dim", "kind", "partner", "signs"}
        if unknown:
            raise ValueError(f"unknown component keys: {sorted(unknown)}")
        return cls(d["name"], int(d["dim"]), d.get("kind", "fixed"), d.get("partner"), d.get("signs"))


def assemble(components):
    """Build the signed permutation of a space described by ordered components."""
    offsets, total = {}, 0
    for c in components:
        if c.name in offsets:
            raise ValueError(f"duplicate component {c.name!r}")
        offsets[c.name] = total
        total += c.dim
    by_name = {c.name: c for c in components}
    target = np.empty(total, dtype=np.int64)
    sign = np.empty(total)
    for c in components:
        lo = offsets[c.name]
        idx = np.arange(lo, lo + c.dim)
        if c.kind == "swap":
            p = by_name.get(c.partner)
            if p is None:
                raise ValueError(f"{c.name}: partner {c.partner!r} not in layout")
            if p.dim != c.dim or p.partner != c.name:
                raise ValueError(f"{c.name} and {p.name} are not a matched swap pair")
            target[idx] = np.arange(offsets[p.name], offsets[p.name] + c.dim)
        else:
            target[idx] = idx
        sign[idx] = c.dim_signs()
    perm = SignedPermutation(target, sign)
    if not perm.is_involution():
        raise ValueError("assembled transform is not an involution (mismatched swap signs?)")
    return perm


def component_slices(components):
    out, lo = {}, 0
    for c in components:
        out[c.name] = slice(lo, lo + c.dim)
        lo += c.dim
    return out


@dataclass(frozen=True)
class LayoutProfile:
    name: str
    observation: tuple
    action: tuple
    state: tuple
    height_map: tuple
    latent_size: int
    transforms: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.latent_size < 2 or self.latent_size % 2:
            raise ValueError("latent size must be a positive even number")
        t = {
            "obs": assemble(self.observation),
            "act": assemble(self.action),
            "state": assemble(self.state),
            "height": assemble(self.height_map),
            "latent": SignedPermutation.pair_swap(self.latent_size),
        }
        for key, perm in t.items():
            if not compose(perm, perm).is_identity():
                raise ValueError(f"{self.name}: {key} transform is not an involution")
        object.__setattr__(self, "transforms", t)

    @property
    def f_o(self):
        return self.transforms["obs"]

    @property
    def f_a(self):
        return self.transforms["act"]

    @property
    def f_s(self):
        return self.transforms["state"]

    @property
    def f_h(self):
        return self.transforms["height"]

    @property
    def f_z(self):
        return self.transforms["latent"]

    @property
    def obs_dim(self):
        return self.f_o.n

    @property
    def act_dim(self):
        return self.f_a.n

    @property
    def height_dim(self):
        return self.f_h.n

    def to_json(self):
        return {
            "name": self.name,
            "latent_size": self.latent_size,
            "observation": [c.to_json() for c in self.observation],
            "action": [c.to_json() for c in self.action],
            "state": [c.to_json() for c in self.state],
            "height_map": [c.to_json() for c in self.height_map],
        }

    def dumps(self):
        return json.dumps(self.to_json(), indent=2)

    @classmethod
    def from_json(cls, d):
        unknown = set(d) - {"name", "latent_size", "observation", "action", "state", "height_map"}
        if unknown:
            raise ValueError(f"unknown profile keys: {sorted(unknown)}")

        def comps(key):
            return tuple(ComponentSpec.from_json(c) for c in d[key])

        return cls(
            d["name"], comps("observation"), comps("action"), comps("state"),
            comps("height_map"), int(d["latent_size"]),
        )


G1_HEIGHT_SPLIT = (85, 17, 85)


def _g1_joint_block(prefix):
    # Order: left arm, right arm, left leg, right leg, waist.
    return (
        ComponentSpec(f"{prefix}_arm_left", 7, "swap", f"{prefix}_arm_right"),
        ComponentSpec(f"{prefix}_arm_right", 7, "swap", f"{prefix}_arm_left"),
        ComponentSpec(f"{prefix}_leg_left", 6, "swap", f"{prefix}_leg_right"),
        ComponentSpec(f"{prefix}_leg_right", 6, "swap", f"{prefix}_leg_left"),
        ComponentSpec(f"{prefix}_waist", 1, "fixed"),
    )


@lru_cache(maxsize=None)
def build_g1_profile(latent_size=64):
    """Unitree G1 layout: 92-dim observation, 27-dim action, 187-dim height map.

    The height map is ordered (left 85, middle 17, right 85) with the right
    block stored in mirrored point order, so the mirror is a plain block swap.
    """
    left, mid, right = G1_HEIGHT_SPLIT
    obs = (
        ComponentSpec("ang_vel", 3, "diag", signs=(-1, 1, -1)),
        ComponentSpec("gravity", 3, "diag", signs=(1, -1, 1)),
        ComponentSpec("command", 3, "diag", signs=(1, -1, -1)),
        *_g1_joint_block("dof_pos"),
        *_g1_joint_block("dof_vel"),
        *_g1_joint_block("last_action"),
        ComponentSpec("phase", 2, "negated"),
    )
    height = (
        ComponentSpec("height_left", left, "swap", "height_right", signs=(1,) * left),
        ComponentSpec("height_middle", mid, "fixed"),
        ComponentSpec("height_right", right, "swap", "height_left", signs=(1,) * right),
    )
    # critic-side state: everything the policy sees plus the privileged terrain
    return LayoutProfile(
        name="g1",
        observation=obs,
        action=_g1_joint_block("action"),
        state=obs + height,
        height_map=height,
        latent_size=latent_size,
    )


def _toy_joint_block(prefix, k, m):
    out = [
        ComponentSpec(f"{prefix}_left", k, "swap", f"{prefix}_right"),
        ComponentSpec(f"{prefix}_right", k, "swap", f"{prefix}_left"),
    ]
    if m:
        out.append(ComponentSpec(f"{prefix}_center", m, "negated"))
    return out


def toy_observation(k, m):
    return (
        ComponentSpec("vel_x", 1, "fixed"),
        ComponentSpec("vel_y", 1, "negated"),
        ComponentSpec("yaw_rate", 1, "negated"),
        ComponentSpec("cmd_x", 1, "fixed"),
        ComponentSpec("cmd_y", 1, "negated"),
        ComponentSpec("cmd_yaw", 1, "negated"),
        *_toy_joint_block("dof_pos", k, m),
        *_toy_joint_block("dof_vel", k, m),
        *_toy_joint_block("last_action", k, m),
        ComponentSpec("phase", 2, "negated"),
    )


def toy_state(k, m):
    """State vector layout of the planar tracker (see ``symmeq.env``).

    The phase is stored as an angle in [0, pi) plus a half-cycle sign, so the
    mirror (phase + pi) is a pure sign flip and stays exact in floating point.
    Per-episode randomization and the step counter are mirror-neutral.
    """
    comps = [
        ComponentSpec("pos_x", 1, "fixed"),
        ComponentSpec("pos_y", 1, "negated"),
        ComponentSpec("heading", 1, "negated"),
        ComponentSpec("vel_x", 1, "fixed"),
        ComponentSpec("vel_y", 1, "negated"),
        ComponentSpec("yaw_rate", 1, "negated"),
        *_toy_joint_block("dof_pos", k, m),
        *_toy_joint_block("dof_vel", k, m),
        ComponentSpec("phase_angle", 1, "fixed"),
        ComponentSpec("phase_half", 1, "negated"),
        ComponentSpec("cmd_x", 1, "fixed"),
        ComponentSpec("cmd_y", 1, "negated"),
        ComponentSpec("cmd_yaw", 1, "negated"),
        ComponentSpec("terrain_left", 1, "swap", "terrain_right", signs=(1,)),
        ComponentSpec("terrain_middle", 1, "fixed"),
        ComponentSpec("terrain_right", 1, "swap", "terrain_left", signs=(1,)),
        *_toy_joint_block("prev_action", k, m),
        *_toy_joint_block("prev_action2", k, m),
        ComponentSpec("params", 6, "fixed"),
    ]
    return tuple(comps)


@lru_cache(maxsize=None)
def build_toy_profile(k=2, m=1, latent_size=32):
    if k < 1 or m < 0:
        raise ValueError("need k >= 1 joints per side and m >= 0 center joints")
    height = (
        ComponentSpec("terrain_left", 1, "swap", "terrain_right", signs=(1,)),
        ComponentSpec("terrain_middle", 1, "fixed"),
        ComponentSpec("terrain_right", 1, "swap", "terrain_left", signs=(1,)),
    )
    return LayoutProfile(
        name=f"toy_k{k}_m{m}",
        observation=toy_observation(k, m),
        action=tuple(_toy_joint_block("action", k, m)),
        state=toy_state(k, m),
        height_map=height,
        latent_size=latent_size,
    )


def build_profile(name, **kw):
    if name == "g1":
        return build_g1_profile(**kw)
    if name == "toy":
        return build_toy_profile(**kw)
    raise ValueError(f"unknown profile {name!r}; expected 'g1' or 'toy'")
