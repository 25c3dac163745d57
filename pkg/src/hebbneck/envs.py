"""Desk-scale control tasks with five named variations each.

``cartpole-var``
    Cart-pole with viscous cart friction and a constant lateral push.
    State ``[x, dx, theta, dtheta]``; one action in ``[-1, 1]`` scaled to
    +/-10 N. Reward per step is ``1 - 0.01 * a^2``; the episode fails when
    ``|x| > 2.4`` or ``|theta| > 12 deg``. 500 steps of 0.02 s, each
    integrated as 5 semi-implicit Euler substeps.

``reacher-var``
    Planar two-link arm with independent damped joints. State
    ``[q1, q2, dq1, dq2, target_x, target_y]``; two torque actions. Reward
    per step is minus the tip-to-target distance. 200 steps of 0.02 s, no
    failure condition.

Variation presets live in ``data/variations.json``. All dynamics are
written elementwise so the same functions serve single states and batches
whose physical coefficients differ per row.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources

import numpy as np

TASKS = ("cartpole-var", "reacher-var")
N_VARIATIONS = 5

# cart-pole constants
GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
POLE_HALF_LENGTH = 0.5
FORCE_MAG = 10.0
BASE_CART_FRICTION = 0.5
X_LIMIT = 2.4
THETA_LIMIT = 12 * 2 * np.pi / 360
CARTPOLE_OBS_SCALE = np.array([X_LIMIT, 2.0, THETA_LIMIT, 2.0])
ACTION_PENALTY = 0.01

# reacher constants
LINK1 = 0.1
LINK2 = 0.11
GEAR = 0.02
JOINT_DAMPING = 0.005
TARGET_CENTER = (0.08, 0.08)

TASK_DEFAULTS = {
    "cartpole-var": dict(
        obs_dim=4, act_dim=1, max_steps=500, dt=0.02, substeps=5,
        reset_noise=(0.05, 0.05, 0.05, 0.05), reward_bound=1.0,
    ),
    "reacher-var": dict(
        obs_dim=10, act_dim=2, max_steps=200, dt=0.02, substeps=1,
        reset_noise=(0.1, 0.1, 0.05, 0.05, 0.06, 0.06), reward_bound=1.0,
    ),
}


@lru_cache(maxsize=None)
def load_presets() -> dict:
    text = resources.files("hebbneck").joinpath("data/variations.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class CartPoleVariation:
    friction: float = 1.0
    push: float = 0.0
    pole_length: float = 1.0

    def __post_init__(self):
        if not (self.friction > 0 and self.pole_length > 0):
            raise ValueError("variation multipliers must be positive")


@dataclass(frozen=True)
class ReacherVariation:
    link1: float = 1.0
    link2: float = 1.0
    motor_mask: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "motor_mask", tuple(float(m) for m in self.motor_mask))
        if not (self.link1 > 0 and self.link2 > 0):
            raise ValueError("variation multipliers must be positive")


VariationParams = CartPoleVariation | ReacherVariation


@dataclass(frozen=True)
class CartPolePhysics:
    """Absolute coefficients; fields may be arrays to describe a batch."""

    friction: float = BASE_CART_FRICTION
    push: float = 0.0
    half_length: float = POLE_HALF_LENGTH
    gravity: float = GRAVITY
    cart_mass: float = CART_MASS
    pole_mass: float = POLE_MASS
    force_mag: float = FORCE_MAG


@dataclass(frozen=True)
class ReacherPhysics:
    link1: float = LINK1
    link2: float = LINK2
    mask1: float = 1.0
    mask2: float = 1.0
    gear: float = GEAR
    damping: float = JOINT_DAMPING


def physics_for(task: str, variation: VariationParams):
    if task == "cartpole-var":
        return CartPolePhysics(
            friction=BASE_CART_FRICTION * variation.friction,
            push=variation.push,
            half_length=POLE_HALF_LENGTH * variation.pole_length,
        )
    return ReacherPhysics(
        link1=LINK1 * variation.link1,
        link2=LINK2 * variation.link2,
        mask1=variation.motor_mask[0],
        mask2=variation.motor_mask[1],
    )


@dataclass(frozen=True)
class EnvSpec:
    task: str
    variation_id: int
    name: str
    variation: VariationParams
    physics: CartPolePhysics | ReacherPhysics
    max_steps: int
    obs_dim: int
    act_dim: int
    dt: float
    substeps: int
    reset_noise: tuple[float, ...]
    reward_bound: float

    @property
    def min_fitness(self) -> float:
        """Fitness assigned to aborted episodes: the lowest attainable value."""
        return -self.reward_bound * self.max_steps


@dataclass
class EnvState:
    values: np.ndarray
    steps: int | np.ndarray = 0


@dataclass(frozen=True)
class MetaTask:
    task: str
    held_out_id: int
    train_specs: tuple[EnvSpec, ...]
    test_spec: EnvSpec


@dataclass
class EpisodeResult:
    fitness: float
    steps: int
    terminated_early: bool
    aborted: bool = field(default=False)


def _check_task(task):
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


def _check_variation(variation_id):
    if variation_id not in range(1, N_VARIATIONS + 1):
        raise ValueError(f"variation id must be 1..{N_VARIATIONS}, got {variation_id}")


def make_variation(task: str, variation_id: int, **overrides) -> EnvSpec:
    """Spec for one preset; keyword overrides replace EnvSpec fields."""
    _check_task(task)
    _check_variation(variation_id)
    preset = dict(load_presets()["tasks"][task]["variations"][str(variation_id)])
    name = preset.pop("name")
    variation = CartPoleVariation(**preset) if task == "cartpole-var" else ReacherVariation(**preset)
    spec = EnvSpec(
        task=task, variation_id=variation_id, name=name, variation=variation,
        physics=physics_for(task, variation), **TASK_DEFAULTS[task],
    )
    return replace(spec, **overrides) if overrides else spec


def variation_names(task: str) -> list[str]:
    _check_task(task)
    presets = load_presets()["tasks"][task]["variations"]
    return [presets[str(i)]["name"] for i in range(1, N_VARIATIONS + 1)]


def make_meta_task(task: str, held_out_id: int, **overrides) -> MetaTask:
    """Leave-one-out split: train on four variations, test on the fifth."""
    _check_task(task)
    _check_variation(held_out_id)
    specs = [make_variation(task, i, **overrides) for i in range(1, N_VARIATIONS + 1)]
    train = tuple(s for s in specs if s.variation_id != held_out_id)
    return MetaTask(task, held_out_id, train, specs[held_out_id - 1])


def rest_state(spec: EnvSpec) -> np.ndarray:
    if spec.task == "cartpole-var":
        return np.zeros(4)
    return np.array([0.0, 0.0, 0.0, 0.0, *TARGET_CENTER])


def reset(spec: EnvSpec, seed) -> EnvState:
    """Rest state plus independent uniform noise of half-width ``reset_noise``."""
    rng = np.random.default_rng(seed)
    noise = np.asarray(spec.reset_noise, dtype=float)
    return EnvState(rest_state(spec) + rng.uniform(-1.0, 1.0, size=noise.shape) * noise, 0)


# dynamics -----------------------------------------------------------------

def cartpole_accel(s: np.ndarray, force, p: CartPolePhysics):
    """Cart and pole accelerations for state(s) ``s`` under horizontal ``force``."""
    x_dot, theta, theta_dot = s[..., 1], s[..., 2], s[..., 3]
    total = p.cart_mass + p.pole_mass
    sin, cos = np.sin(theta), np.cos(theta)
    temp = (force + p.pole_mass * p.half_length * theta_dot**2 * sin - p.friction * x_dot) / total
    theta_acc = (p.gravity * sin - cos * temp) / (
        p.half_length * (4.0 / 3.0 - p.pole_mass * cos**2 / total)
    )
    x_acc = temp - p.pole_mass * p.half_length * theta_acc * cos / total
    return x_acc, theta_acc


def cartpole_energy(s: np.ndarray, p: CartPolePhysics = CartPolePhysics()):
    """Mechanical energy, potential measured from the lowest pole position."""
    x_dot, theta, theta_dot = s[..., 1], s[..., 2], s[..., 3]
    m, l = p.pole_mass, p.half_length
    kinetic = (
        0.5 * (p.cart_mass + m) * x_dot**2
        + m * l * x_dot * theta_dot * np.cos(theta)
        + (2.0 / 3.0) * m * l**2 * theta_dot**2
    )
    return kinetic + m * p.gravity * l * (1.0 + np.cos(theta))


def _cartpole_transition(s, a, spec: EnvSpec, p: CartPolePhysics):
    force = p.force_mag * a[..., 0] + p.push
    h = spec.dt / spec.substeps
    x, x_dot, theta, theta_dot = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    for _ in range(spec.substeps):
        state = np.stack([x, x_dot, theta, theta_dot], axis=-1)
        x_acc, theta_acc = cartpole_accel(state, force, p)
        x_dot = x_dot + h * x_acc
        theta_dot = theta_dot + h * theta_acc
        x = x + h * x_dot
        theta = theta + h * theta_dot
    nxt = np.stack([x, x_dot, theta, theta_dot], axis=-1)
    reward = 1.0 - ACTION_PENALTY * (a**2).sum(axis=-1)
    failed = (np.abs(x) > X_LIMIT) | (np.abs(theta) > THETA_LIMIT)
    return nxt, reward, failed


def reacher_tip(s, p: ReacherPhysics):
    q1, q2 = s[..., 0], s[..., 1]
    return (p.link1 * np.cos(q1) + p.link2 * np.cos(q1 + q2),
            p.link1 * np.sin(q1) + p.link2 * np.sin(q1 + q2))


def _reacher_transition(s, a, spec: EnvSpec, p: ReacherPhysics):
    h = spec.dt / spec.substeps
    q1, q2, dq1, dq2 = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    inertia1 = p.link1**2 / 3.0
    inertia2 = p.link2**2 / 3.0
    tau1 = p.gear * p.mask1 * a[..., 0]
    tau2 = p.gear * p.mask2 * a[..., 1]
    for _ in range(spec.substeps):
        dq1 = dq1 + h * (tau1 - p.damping * dq1) / inertia1
        dq2 = dq2 + h * (tau2 - p.damping * dq2) / inertia2
        q1 = q1 + h * dq1
        q2 = q2 + h * dq2
    nxt = np.stack([q1, q2, dq1, dq2, s[..., 4], s[..., 5]], axis=-1)
    tx, ty = reacher_tip(nxt, p)
    reward = -np.hypot(tx - s[..., 4], ty - s[..., 5])
    return nxt, reward, np.zeros(reward.shape, dtype=bool)


def observe(state: EnvState | np.ndarray, spec: EnvSpec, physics=None) -> np.ndarray:
    s = state.values if isinstance(state, EnvState) else np.asarray(state)
    p = spec.physics if physics is None else physics
    if spec.task == "cartpole-var":
        return s / CARTPOLE_OBS_SCALE
    tx, ty = reacher_tip(s, p)
    q1, q2 = s[..., 0], s[..., 1]
    return np.stack([
        np.cos(q1), np.sin(q1), np.cos(q2), np.sin(q2),
        s[..., 2] / 5.0, s[..., 3] / 5.0,
        s[..., 4] / 0.2, s[..., 5] / 0.2,
        (tx - s[..., 4]) / 0.2, (ty - s[..., 5]) / 0.2,
    ], axis=-1)


def transition(values, action, spec: EnvSpec, physics=None):
    """Raw dynamics: ``(next values, reward, failed)`` for clamped actions."""
    p = spec.physics if physics is None else physics
    fn = _cartpole_transition if spec.task == "cartpole-var" else _reacher_transition
    return fn(values, action, spec, p)


def step(state: EnvState, action, spec: EnvSpec):
    """Advance one control step.

    Returns ``(next_state, reward, done)``. Actions are clamped to ``[-1, 1]``.
    A non-finite action ends the episode without moving the state and with
    zero reward; rollouts then assign ``spec.min_fitness``.
    """
    a = np.asarray(action, dtype=float).reshape(-1)
    if a.shape != (spec.act_dim,):
        raise ValueError(f"action must have {spec.act_dim} entries, got {a.shape}")
    if not np.all(np.isfinite(a)):
        return EnvState(state.values.copy(), state.steps), 0.0, True
    nxt, reward, failed = transition(state.values, np.clip(a, -1.0, 1.0), spec)
    steps = state.steps + 1
    return EnvState(nxt, steps), float(reward), bool(failed) or steps >= spec.max_steps


def _stack_physics(specs):
    cls = type(specs[0].physics)
    names = cls.__dataclass_fields__
    return cls(**{n: np.array([getattr(s.physics, n) for s in specs]) for n in names})


class BatchEnv:
    """Many independent episodes of one task, stepped together.

    Finished episodes are frozen: their state stops changing and they
    accumulate no further reward.
    """

    def __init__(self, specs, seeds):
        specs = list(specs)
        if len({s.task for s in specs}) != 1:
            raise ValueError("a batch must hold a single task")
        first = specs[0]
        for attr in ("max_steps", "dt", "substeps", "obs_dim", "act_dim"):
            if len({getattr(s, attr) for s in specs}) != 1:
                raise ValueError(f"specs in a batch must share {attr}")
        self.specs = specs
        self.spec = first
        self.physics = _stack_physics(specs)
        self.values = np.stack([reset(s, seed).values for s, seed in zip(specs, seeds)])
        n = len(specs)
        self.steps = np.zeros(n, dtype=np.int64)
        self.fitness = np.zeros(n)
        self.done = np.zeros(n, dtype=bool)
        self.failed = np.zeros(n, dtype=bool)
        self.aborted = np.zeros(n, dtype=bool)
        self.min_fitness = np.array([s.min_fitness for s in specs])

    def observe(self) -> np.ndarray:
        return observe(self.values, self.spec, self.physics)

    def step(self, actions) -> np.ndarray:
        actions = np.asarray(actions, dtype=float).reshape(len(self.specs), self.spec.act_dim)
        live = ~self.done
        bad = live & ~np.all(np.isfinite(actions), axis=-1)
        self.aborted |= bad
        self.done |= bad
        live &= ~bad
        safe = np.where(live[:, None], np.clip(actions, -1.0, 1.0), 0.0)
        nxt, reward, failed = transition(self.values, safe, self.spec, self.physics)
        self.values = np.where(live[:, None], nxt, self.values)
        self.fitness = np.where(live, self.fitness + reward, self.fitness)
        self.steps = self.steps + live
        self.failed |= live & failed
        self.done |= self.failed | (self.steps >= self.spec.max_steps)
        return reward

    def results(self) -> list[EpisodeResult]:
        fitness = np.where(self.aborted, self.min_fitness, self.fitness)
        return [
            EpisodeResult(float(f), int(t), bool(fl or ab), bool(ab))
            for f, t, fl, ab in zip(fitness, self.steps, self.failed, self.aborted)
        ]


def random_policy_floor(spec: EnvSpec, episodes: int = 1000, seed: int = 0) -> float:
    """Mean fitness of uniformly random actions over a fixed seed set."""
    from .seeding import derive_seed, rng_for

    seeds = [derive_seed(seed, "random-policy", spec.variation_id, i) for i in range(episodes)]
    env = BatchEnv([spec] * episodes, seeds)
    rng = rng_for(seed, "random-policy", spec.variation_id, episodes)
    while not env.done.all():
        env.step(rng.uniform(-1.0, 1.0, size=(episodes, spec.act_dim)))
    return float(np.mean([r.fitness for r in env.results()]))
