"""Transition storage: fixed-capacity ring buffer with uniform sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .nets import DTYPE

_SAVE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Transition:
    """One environment step: (s, a, r, s', end_kind).

    ``end_kind`` uses the envs.EndKind codes: 0 not_done, 1 terminal (state-
    dependent, Markovian), 2 time_limit (step budget ran out).
    """

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    end_kind: int


@dataclass
class Batch:
    """Column-structured sample: matrices [b, dim], vectors [b]."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    end_kinds: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]


class ReplayBuffer:
    """Ring of transitions; oldest evicted past capacity. Dimensions are
    locked in by the first push."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.size = 0
        self._pos = 0
        self._states = None
        self._actions = None
        self._rewards = None
        self._next_states = None
        self._end_kinds = None

    def _allocate(self, obs_dim: int, act_dim: int) -> None:
        self._states = np.empty((self.capacity, obs_dim), dtype=DTYPE)
        self._actions = np.empty((self.capacity, act_dim), dtype=DTYPE)
        self._rewards = np.empty(self.capacity, dtype=DTYPE)
        self._next_states = np.empty((self.capacity, obs_dim), dtype=DTYPE)
        self._end_kinds = np.empty(self.capacity, dtype=np.int8)

    def push(self, t: Transition) -> None:
        state = np.asarray(t.state, dtype=DTYPE).ravel()
        action = np.asarray(t.action, dtype=DTYPE).ravel()
        next_state = np.asarray(t.next_state, dtype=DTYPE).ravel()
        if self._states is None:
            self._allocate(state.shape[0], action.shape[0])
        if state.shape[0] != self._states.shape[1] or next_state.shape[0] != self._states.shape[1]:
            raise ValueError(
                f"state dim {state.shape[0]}/{next_state.shape[0]} does not match "
                f"first stored transition ({self._states.shape[1]})"
            )
        if action.shape[0] != self._actions.shape[1]:
            raise ValueError(
                f"action dim {action.shape[0]} does not match first stored "
                f"transition ({self._actions.shape[1]})"
            )
        i = self._pos
        self._states[i] = state
        self._actions[i] = action
        self._rewards[i] = t.reward
        self._next_states[i] = next_state
        self._end_kinds[i] = int(t.end_kind)
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng) -> Batch:
        """Uniform i.i.d. draws with replacement."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(
            states=self._states[idx],
            actions=self._actions[idx],
            rewards=self._rewards[idx],
            next_states=self._next_states[idx],
            end_kinds=self._end_kinds[idx],
        )

    def state_matrix(self) -> np.ndarray:
        """Read-only view of all stored states (for held-out distillation checks)."""
        if self.size == 0:
            raise ValueError("buffer is empty")
        return self._states[: self.size]

    def save(self, path) -> None:
        if self._states is None:
            raise ValueError("cannot save an unallocated (never-pushed) buffer")
        meta = {
            "format_version": _SAVE_FORMAT_VERSION,
            "capacity": self.capacity,
            "size": self.size,
            "pos": self._pos,
        }
        np.savez(
            path,
            meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
            states=self._states[: self.size],
            actions=self._actions[: self.size],
            rewards=self._rewards[: self.size],
            next_states=self._next_states[: self.size],
            end_kinds=self._end_kinds[: self.size],
        )

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta.get("format_version") != _SAVE_FORMAT_VERSION:
                raise ValueError(f"unsupported buffer file version: {meta.get('format_version')}")
            buf = cls(meta["capacity"])
            size = meta["size"]
            if size:
                buf._allocate(data["states"].shape[1], data["actions"].shape[1])
                buf._states[:size] = data["states"]
                buf._actions[:size] = data["actions"]
                buf._rewards[:size] = data["rewards"]
                buf._next_states[:size] = data["next_states"]
                buf._end_kinds[:size] = data["end_kinds"]
            buf.size = size
            buf._pos = meta["pos"]
        return buf
