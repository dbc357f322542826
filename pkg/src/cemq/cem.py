"""Cross-entropy-method action optimizer.

Given a state-bound score function (in practice a Q-network), iteratively
sample Gaussian pre-squash actions, score the tanh of them, and refit the
proposal to the top-k pre-squash elites. Returns the best-scoring elite of
the final iteration, squashed into (-1, 1)^d.

Refitting happens in pre-tanh space; tanh is applied only for scoring and
for the returned action. Each iteration makes exactly one batched score
call, so a caller sees ``iterations`` score invocations per optimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import DTYPE, NumericalError


@dataclass(frozen=True)
class CemConfig:
    iterations: int = 2
    samples: int = 64
    elites: int = 6
    action_dim: int = 1
    variance_floor: float = 1e-6

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.samples < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")
        if not 1 <= self.elites <= self.samples:
            raise ValueError(
                f"elites must be in [1, samples={self.samples}], got {self.elites}"
            )
        if self.action_dim < 1:
            raise ValueError(f"action_dim must be >= 1, got {self.action_dim}")
        if self.variance_floor < 0.0:
            raise ValueError(f"variance_floor must be >= 0, got {self.variance_floor}")


def cem_argmax_batch(score_fn, batch_size: int, config: CemConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Run independent CEM optimizations for a batch of states at once.

    ``score_fn`` maps squashed actions [B, n, d] to values [B, n]; each row
    is one independent optimization (one state). Returns (actions [B, d],
    values [B]) where each action is the best final-iteration elite for its
    row.
    """
    n, k, d = config.samples, config.elites, config.action_dim
    mu = np.zeros((batch_size, d), dtype=DTYPE)
    var = np.ones((batch_size, d), dtype=DTYPE)
    rows = np.arange(batch_size)
    best_actions = best_values = None
    for _ in range(config.iterations):
        noise = rng.standard_normal((batch_size, n, d))
        pre = mu[:, None, :] + np.sqrt(var)[:, None, :] * noise
        squashed = np.tanh(pre)
        values = np.asarray(score_fn(squashed), dtype=DTYPE)
        if values.shape != (batch_size, n):
            raise ValueError(
                f"score function returned shape {values.shape}, expected {(batch_size, n)}"
            )
        if not np.isfinite(values).all():
            b, i = np.argwhere(~np.isfinite(values))[0]
            raise NumericalError(
                f"non-finite score {values[b, i]} for action {squashed[b, i]}"
            )
        # Descending stable sort: ties broken by sample index.
        order = np.argsort(-values, axis=1, kind="stable")[:, :k]
        elite_pre = np.take_along_axis(pre, order[:, :, None], axis=1)
        mu = elite_pre.mean(axis=1)
        var = np.maximum(elite_pre.var(axis=1), config.variance_floor)
        top = order[:, 0]
        best_actions = squashed[rows, top]
        best_values = values[rows, top]
    return best_actions, best_values


def cem_argmax(score_fn, config: CemConfig, rng) -> tuple[np.ndarray, float]:
    """Single-state CEM: ``score_fn`` maps actions [n, d] to values [n]."""

    def batched(actions):
        return np.asarray(score_fn(actions[0]))[None, :]

    actions, values = cem_argmax_batch(batched, 1, config, rng)
    return actions[0], float(values[0])


def cem_policy(state, q_fn, config: CemConfig, rng) -> np.ndarray:
    """Approximate argmax_a q(state, a): one CEM run with the state tiled
    across the sample batch so all n evaluations are a single q_fn call."""
    state = np.asarray(state, dtype=DTYPE)

    def score(actions):
        states = np.broadcast_to(state, (actions.shape[0], state.shape[0]))
        return q_fn(states, actions)

    action, _ = cem_argmax(score, config, rng)
    return action


def cem_policy_batch(states, q_fn, config: CemConfig, rng) -> np.ndarray:
    """cem_policy for a batch of states, vectorized into one q_fn call per
    CEM iteration. Returns actions [B, d]."""
    states = np.asarray(states, dtype=DTYPE)
    batch_size = states.shape[0]
    n = config.samples

    def score(actions):
        flat = actions.reshape(batch_size * n, config.action_dim)
        tiled = np.repeat(states, n, axis=0)
        return np.asarray(q_fn(tiled, flat)).reshape(batch_size, n)

    actions, _ = cem_argmax_batch(score, batch_size, config, rng)
    return actions
