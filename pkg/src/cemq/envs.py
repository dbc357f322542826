"""Toy continuous-control environments with exact time-limit semantics.

Both environments take actions in the open box (-1, 1)^d and scale them to
their physical torque/force range internally. Episode ends distinguish a
Markovian, state-dependent ``TERMINAL`` from a ``TIME_LIMIT`` cutoff; the
two never co-occur (a terminal state on the last allowed step reports
TERMINAL). Dynamics are deterministic closed-form updates, documented per
class so a standalone integrator can reproduce any trajectory.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .nets import DTYPE


class EndKind(IntEnum):
    NOT_DONE = 0
    TERMINAL = 1
    TIME_LIMIT = 2


@dataclass(frozen=True)
class EnvSpec:
    name: str
    observation_dim: int
    action_dim: int
    max_episode_steps: int
    action_scale: float  # physical units per unit of agent action


@dataclass(frozen=True)
class StepResult:
    next_observation: np.ndarray
    reward: float
    end_kind: EndKind


class PendulumSwingup:
    """Torque-limited rigid-rod pendulum, swing up to and hold the upright.

    State is (theta, theta_dot) with theta measured from upright (theta=0 is
    up); observation is (cos theta, sin theta, theta_dot). Never terminal:
    episodes always run to the 200-step limit (pure time-limit env).

    Dynamics (semi-implicit Euler, dt=0.05, g=10, m=1, l=1, rod inertia
    m*l^2/3, torque u = 2*a for agent action a in [-1, 1]):

        alpha      = (3*g / (2*l)) * sin(theta) + (3 / (m*l^2)) * u
        theta_dot' = clip(theta_dot + alpha*dt, -8, 8)
        theta'     = theta + theta_dot' * dt

    Reward is assessed on the pre-step state and applied torque:

        r = -(wrap(theta)^2 + 0.1*theta_dot^2 + 0.001*u^2)

    with wrap() into [-pi, pi). Maximum per-step reward is 0, at rest
    upright with zero torque. Reset draws theta ~ U(-pi, pi) and
    theta_dot ~ U(-1, 1).
    """

    GRAVITY = 10.0
    MASS = 1.0
    LENGTH = 1.0
    DT = 0.05
    MAX_TORQUE = 2.0
    MAX_SPEED = 8.0
    MAX_STEPS = 200

    spec = EnvSpec(
        name="pendulum-swingup",
        observation_dim=3,
        action_dim=1,
        max_episode_steps=MAX_STEPS,
        action_scale=MAX_TORQUE,
    )

    def __init__(self):
        self.theta = 0.0
        self.theta_dot = 0.0
        self.steps = 0
        self.clamp_count = 0  # actions outside [-1, 1] seen by step()

    def reset(self, rng) -> np.ndarray:
        self.theta = rng.uniform(-np.pi, np.pi)
        self.theta_dot = rng.uniform(-1.0, 1.0)
        self.steps = 0
        return self._observe()

    def set_state(self, theta: float, theta_dot: float) -> np.ndarray:
        """Debug/test hook: place the pendulum exactly, resetting the clock."""
        self.theta = float(theta)
        self.theta_dot = float(theta_dot)
        self.steps = 0
        return self._observe()

    def _observe(self) -> np.ndarray:
        return np.array(
            [np.cos(self.theta), np.sin(self.theta), self.theta_dot], dtype=DTYPE
        )

    def step(self, action) -> StepResult:
        if self.steps >= self.MAX_STEPS:
            raise RuntimeError("episode is over; call reset()")
        a = float(np.asarray(action).ravel()[0])
        if not -1.0 <= a <= 1.0:
            self.clamp_count += 1
            a = min(1.0, max(-1.0, a))
        u = self.MAX_TORQUE * a

        wrapped = (self.theta + np.pi) % (2.0 * np.pi) - np.pi
        reward = -(wrapped**2 + 0.1 * self.theta_dot**2 + 0.001 * u**2)

        alpha = (3.0 * self.GRAVITY / (2.0 * self.LENGTH)) * np.sin(self.theta)
        alpha += 3.0 / (self.MASS * self.LENGTH**2) * u
        self.theta_dot = min(
            self.MAX_SPEED, max(-self.MAX_SPEED, self.theta_dot + alpha * self.DT)
        )
        self.theta = self.theta + self.theta_dot * self.DT
        self.steps += 1

        end = EndKind.TIME_LIMIT if self.steps >= self.MAX_STEPS else EndKind.NOT_DONE
        return StepResult(self._observe(), float(reward), end)

    def energy(self) -> float:
        """Mechanical energy: (1/6) m l^2 w^2 + (m g l / 2) cos(theta)."""
        kinetic = self.MASS * self.LENGTH**2 * self.theta_dot**2 / 6.0
        potential = self.MASS * self.GRAVITY * self.LENGTH * np.cos(self.theta) / 2.0
        return float(kinetic + potential)


class PointMassReacher:
    """2-D double integrator steering to a random goal.

    Observation is (goal - position, velocity), 4-dimensional. Acceleration
    is u = 1.0 * a for agent action a in [-1, 1]^2. Semi-implicit Euler with
    dt=0.1 and a speed limit of 2 per axis:

        v' = clip(v + u*dt, -2, 2)     (per axis)
        p' = p + v'*dt

    Reward is the negative post-step distance, r = -||p' - goal||_2; the
    episode is TERMINAL once that distance is <= 0.05 (reaching the goal is
    state-dependent, hence Markovian), otherwise TIME_LIMIT at 150 steps.
    Reset draws position ~ U(-1, 1)^2 and goal ~ U(-0.5, 0.5)^2, with zero
    velocity.
    """

    DT = 0.1
    MAX_ACCEL = 1.0
    MAX_SPEED = 2.0
    GOAL_RADIUS = 0.05
    MAX_STEPS = 150

    spec = EnvSpec(
        name="point-mass-reacher",
        observation_dim=4,
        action_dim=2,
        max_episode_steps=MAX_STEPS,
        action_scale=MAX_ACCEL,
    )

    def __init__(self):
        self.pos = np.zeros(2, dtype=DTYPE)
        self.vel = np.zeros(2, dtype=DTYPE)
        self.goal = np.zeros(2, dtype=DTYPE)
        self.steps = 0
        self.clamp_count = 0

    def reset(self, rng) -> np.ndarray:
        self.pos = rng.uniform(-1.0, 1.0, size=2).astype(DTYPE)
        self.goal = rng.uniform(-0.5, 0.5, size=2).astype(DTYPE)
        self.vel = np.zeros(2, dtype=DTYPE)
        self.steps = 0
        return self._observe()

    def set_state(self, pos, vel, goal) -> np.ndarray:
        self.pos = np.asarray(pos, dtype=DTYPE).copy()
        self.vel = np.asarray(vel, dtype=DTYPE).copy()
        self.goal = np.asarray(goal, dtype=DTYPE).copy()
        self.steps = 0
        return self._observe()

    def _observe(self) -> np.ndarray:
        return np.concatenate([self.goal - self.pos, self.vel]).astype(DTYPE)

    def step(self, action) -> StepResult:
        if self.steps >= self.MAX_STEPS:
            raise RuntimeError("episode is over; call reset()")
        a = np.asarray(action, dtype=DTYPE).ravel()
        if a.shape[0] != 2:
            raise ValueError(f"action must have 2 components, got shape {a.shape}")
        if np.any(np.abs(a) > 1.0):
            self.clamp_count += 1
            a = np.clip(a, -1.0, 1.0)
        u = self.MAX_ACCEL * a

        self.vel = np.clip(self.vel + u * self.DT, -self.MAX_SPEED, self.MAX_SPEED)
        self.pos = self.pos + self.vel * self.DT
        self.steps += 1

        dist = float(np.linalg.norm(self.pos - self.goal))
        reward = -dist
        if dist <= self.GOAL_RADIUS:
            end = EndKind.TERMINAL
        elif self.steps >= self.MAX_STEPS:
            end = EndKind.TIME_LIMIT
        else:
            end = EndKind.NOT_DONE
        return StepResult(self._observe(), reward, end)


_REGISTRY = {
    PendulumSwingup.spec.name: PendulumSwingup,
    PointMassReacher.spec.name: PointMassReacher,
}


def env_names() -> list[str]:
    return sorted(_REGISTRY)


def make_env(name: str):
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; known: {env_names()}") from None


def dump_trajectory(env, policy_fn, seed: int, path, max_steps=None) -> int:
    """Roll one episode and write (step, obs..., action..., reward, end_kind)
    rows to a CSV. Returns the number of steps written."""
    rng = np.random.default_rng(seed)
    obs = env.reset(rng)
    spec = env.spec
    header = (
        ["step"]
        + [f"obs_{i}" for i in range(spec.observation_dim)]
        + [f"action_{i}" for i in range(spec.action_dim)]
        + ["reward", "end_kind"]
    )
    limit = max_steps if max_steps is not None else spec.max_episode_steps
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for step in range(1, limit + 1):
            action = np.asarray(policy_fn(obs), dtype=DTYPE).ravel()
            result = env.step(action)
            writer.writerow(
                [step]
                + [repr(float(v)) for v in obs]
                + [repr(float(v)) for v in action]
                + [repr(float(result.reward)), result.end_kind.name.lower()]
            )
            obs = result.next_observation
            if result.end_kind != EndKind.NOT_DONE:
                return step
    return limit
