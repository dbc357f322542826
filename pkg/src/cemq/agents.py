"""Training algorithms: twin-Q bootstrapped Q-learning driven by a CEM
behavior policy, policy distillation (CGP: L2 regression onto CEM actions;
QGP: gradient ascent on the critic), and TD3/DDPG baselines.

Modes
-----
cgp / qgp   CEM behavior + CEM bootstrap actions; policy net trained by
            regression (cgp) or critic ascent (qgp), used only at eval time.
td3         policy-net behavior and bootstrap (twin critics, smoothing,
            delayed updates).
ddpg        td3 machinery reduced: single critic, no target smoothing,
            target/policy updates every step.
cem         no policy net; CEM is also the evaluation policy.

Schedules: ``online`` trains the policy alongside the critic; ``offline``
skips in-loop policy updates and distills post hoc against the frozen final
critic and buffer.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .cem import CemConfig, cem_policy, cem_policy_batch
from .envs import EndKind
from .nets import AdamState, DenseNet, NumericalError, adam_step, polyak_update, save_dense_net
from .records import RunRecord
from .replay import Batch, ReplayBuffer, Transition

MODES = ("cgp", "qgp", "td3", "ddpg", "cem")
SCHEDULES = ("online", "offline")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class AgentConfig:
    """All training hyperparameters. Defaults are the benchmark values."""

    discount: float = 0.99
    tau: float = 0.005
    q_lr: float = 1e-3
    policy_lr: float = 1e-3
    batch_size: int = 128
    target_update_freq: int = 2
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    exploration_noise: float = 0.0
    initial_random_steps: int = 10_000
    total_steps: int = 1_000_000
    eval_every: int = 10_000
    eval_episodes: int = 5
    hidden_sizes: tuple = (256, 256)
    buffer_capacity: int = 1_000_000
    weight_decay: float = 0.0
    cem_iterations: int = 2
    cem_samples: int = 64
    cem_elites: int = 6
    cem_variance_floor: float = 1e-6
    smooth_target_actions: bool = True
    bootstrap_time_limit: bool = True
    episodic_training: bool = False
    offline_updates: int = 200_000
    offline_stop_window: int = 1_000
    offline_stop_delta: float = 1e-5

    def validate(self) -> None:
        def require(cond, name, rule):
            if not cond:
                raise ConfigError(f"{name} must be {rule}, got {getattr(self, name)!r}")

        require(0.0 < self.discount < 1.0, "discount", "in (0, 1)")
        require(0.0 < self.tau <= 1.0, "tau", "in (0, 1]")
        require(self.q_lr > 0.0, "q_lr", "positive")
        require(self.policy_lr > 0.0, "policy_lr", "positive")
        require(self.batch_size >= 1, "batch_size", ">= 1")
        require(self.target_update_freq >= 1, "target_update_freq", ">= 1")
        require(self.policy_noise >= 0.0, "policy_noise", ">= 0")
        require(self.noise_clip >= 0.0, "noise_clip", ">= 0")
        require(self.exploration_noise >= 0.0, "exploration_noise", ">= 0")
        require(self.initial_random_steps >= 0, "initial_random_steps", ">= 0")
        require(self.total_steps >= 1, "total_steps", ">= 1")
        require(self.eval_every >= 1, "eval_every", ">= 1")
        require(self.eval_episodes >= 1, "eval_episodes", ">= 1")
        require(
            len(self.hidden_sizes) >= 1 and all(int(h) > 0 for h in self.hidden_sizes),
            "hidden_sizes",
            "a non-empty tuple of positive ints",
        )
        require(self.buffer_capacity >= 1, "buffer_capacity", ">= 1")
        require(self.weight_decay >= 0.0, "weight_decay", ">= 0")
        require(self.cem_iterations >= 1, "cem_iterations", ">= 1")
        require(self.cem_samples >= 1, "cem_samples", ">= 1")
        require(
            1 <= self.cem_elites <= self.cem_samples,
            "cem_elites",
            "in [1, cem_samples]",
        )
        require(self.cem_variance_floor >= 0.0, "cem_variance_floor", ">= 0")
        require(self.offline_updates >= 1, "offline_updates", ">= 1")
        require(self.offline_stop_window >= 1, "offline_stop_window", ">= 1")
        require(self.offline_stop_delta >= 0.0, "offline_stop_delta", ">= 0")

    def cem_config(self, action_dim: int) -> CemConfig:
        return CemConfig(
            iterations=self.cem_iterations,
            samples=self.cem_samples,
            elites=self.cem_elites,
            action_dim=action_dim,
            variance_floor=self.cem_variance_floor,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AgentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(d)
        if "hidden_sizes" in kwargs:
            kwargs["hidden_sizes"] = tuple(int(h) for h in kwargs["hidden_sizes"])
        return cls(**kwargs)


def config_hash(config: AgentConfig, mode: str, schedule: str, env_name: str) -> str:
    """Stable hash of everything that defines a run cell except the seed."""
    blob = json.dumps(
        {"config": config.to_dict(), "mode": mode, "schedule": schedule, "env": env_name},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class TwinCritic:
    """Live and target Q-networks. ``twin`` off means q2 is absent (DDPG)."""

    q1: DenseNet
    q1_target: DenseNet
    q1_adam: AdamState
    q2: DenseNet | None = None
    q2_target: DenseNet | None = None
    q2_adam: AdamState | None = None

    @property
    def twin(self) -> bool:
        return self.q2 is not None

    @classmethod
    def build(cls, obs_dim, act_dim, hidden_sizes, lr, weight_decay, rng, twin=True):
        sizes = [obs_dim + act_dim, *hidden_sizes, 1]
        q1 = DenseNet.initialized(sizes, "identity", rng)
        critic = cls(q1=q1, q1_target=q1.clone(), q1_adam=AdamState.for_net(q1, lr, weight_decay=weight_decay))
        if twin:
            critic.q2 = DenseNet.initialized(sizes, "identity", rng)
            critic.q2_target = critic.q2.clone()
            critic.q2_adam = AdamState.for_net(critic.q2, lr, weight_decay=weight_decay)
        return critic


@dataclass
class PolicyHead:
    """Deterministic tanh policy network plus its (tracked) target copy."""

    pi: DenseNet
    pi_target: DenseNet
    adam: AdamState

    @classmethod
    def build(cls, obs_dim, act_dim, hidden_sizes, lr, weight_decay, rng):
        pi = DenseNet.initialized([obs_dim, *hidden_sizes, act_dim], "tanh", rng)
        return cls(pi=pi, pi_target=pi.clone(), adam=AdamState.for_net(pi, lr, weight_decay=weight_decay))


def _q_values(net: DenseNet, states, actions) -> np.ndarray:
    return net.forward(np.concatenate([states, actions], axis=1))[:, 0]


def bellman_target(batch: Batch, critic: TwinCritic, target_action_fn, config: AgentConfig, rng) -> np.ndarray:
    """Bootstrap targets q* = r + gamma * min_j Q'_j(s', a') with clipped
    Gaussian smoothing noise on a'.

    Terminal transitions take q* = r. Time-limit transitions bootstrap like
    not-done ones (the cutoff is not state information) unless
    ``bootstrap_time_limit`` is disabled for ablation.
    """
    next_actions = np.asarray(target_action_fn(batch.next_states))
    if config.smooth_target_actions and config.policy_noise > 0.0:
        noise = rng.normal(0.0, config.policy_noise, size=next_actions.shape)
        np.clip(noise, -config.noise_clip, config.noise_clip, out=noise)
        next_actions = np.clip(next_actions + noise, -1.0, 1.0)
    q_min = _q_values(critic.q1_target, batch.next_states, next_actions)
    if critic.twin:
        q_min = np.minimum(q_min, _q_values(critic.q2_target, batch.next_states, next_actions))
    if not np.isfinite(q_min).all():
        i = int(np.argwhere(~np.isfinite(q_min))[0])
        raise NumericalError(
            f"non-finite target Q value at batch row {i} "
            f"(next_state={batch.next_states[i]}, action={next_actions[i]})"
        )
    if config.bootstrap_time_limit:
        live = batch.end_kinds != EndKind.TERMINAL
    else:
        live = batch.end_kinds == EndKind.NOT_DONE
    return batch.rewards + config.discount * live * q_min


def critic_update(batch: Batch, critic: TwinCritic, target_action_fn, config: AgentConfig, rng):
    """One Adam step on each live critic toward the shared q* (treated as a
    constant). Returns (loss_q1, loss_q2); loss_q2 is None without a twin."""
    q_star = bellman_target(batch, critic, target_action_fn, config, rng)
    b = len(batch)
    losses = []
    pairs = [(critic.q1, critic.q1_adam)]
    if critic.twin:
        pairs.append((critic.q2, critic.q2_adam))
    x = np.concatenate([batch.states, batch.actions], axis=1)
    for net, adam in pairs:
        pred, cache = net.forward_with_cache(x)
        diff = pred[:, 0] - q_star
        grads, _ = net.backward(cache, (2.0 / b) * diff[:, None])
        adam_step(net, grads, adam)
        losses.append(float(np.mean(diff**2)))
    return losses[0], (losses[1] if critic.twin else None)


def cgp_policy_update(states: np.ndarray, policy: PolicyHead, cem_actions: np.ndarray) -> float:
    """L2-regress the policy onto CEM actions (constants): mean over the
    batch of the squared distance."""
    b = states.shape[0]
    pred, cache = policy.pi.forward_with_cache(states)
    diff = pred - cem_actions
    grads, _ = policy.pi.backward(cache, (2.0 / b) * diff)
    adam_step(policy.pi, grads, policy.adam)
    return float(np.mean(np.sum(diff**2, axis=1)))


def qgp_policy_update(states: np.ndarray, policy: PolicyHead, critic: TwinCritic) -> float:
    """Ascend Q1(s, pi(s)) through the critic's action input. The critic is
    read-only here; only the policy receives an update."""
    b = states.shape[0]
    actions, pi_cache = policy.pi.forward_with_cache(states)
    x = np.concatenate([states, actions], axis=1)
    q, q_cache = critic.q1.forward_with_cache(x)
    upstream = np.full((b, 1), -1.0 / b)
    _, dx = critic.q1.backward(q_cache, upstream)
    d_actions = dx[:, states.shape[1] :]
    grads, _ = policy.pi.backward(pi_cache, d_actions)
    adam_step(policy.pi, grads, policy.adam)
    return float(-np.mean(q[:, 0]))


def evaluate(env, policy_fn, episodes: int, seed: int):
    """Deterministic evaluation rollouts (no exploration noise).

    Episode initial states are drawn from per-episode rng streams derived
    from ``seed``, so a (policy, seed) pair always sees the same starts.
    Returns (mean_return, per_episode_returns).
    """
    returns = []
    for child in np.random.SeedSequence(seed).spawn(episodes):
        rng = np.random.default_rng(child)
        obs = env.reset(rng)
        total = 0.0
        while True:
            result = env.step(policy_fn(obs))
            total += result.reward
            obs = result.next_observation
            if result.end_kind != EndKind.NOT_DONE:
                break
        returns.append(total)
    return float(np.mean(returns)), returns


def distill_offline(policy: PolicyHead, critic: TwinCritic, buffer: ReplayBuffer, mode: str,
                    config: AgentConfig, cem_cfg: CemConfig, rng) -> tuple[int, float]:
    """Post-hoc policy training against a frozen critic and buffer.

    Runs up to ``offline_updates`` minibatch updates, stopping early once
    the mean loss over a window stops improving by ``offline_stop_delta``.
    Returns (updates_done, last_loss).
    """
    q_fn = lambda s, a: _q_values(critic.q1, s, a)
    window, prev_mean = [], None
    updates = 0
    loss = float("nan")
    for updates in range(1, config.offline_updates + 1):
        batch = buffer.sample(config.batch_size, rng)
        if mode == "cgp":
            targets = cem_policy_batch(batch.states, q_fn, cem_cfg, rng)
            loss = cgp_policy_update(batch.states, policy, targets)
        else:
            loss = qgp_policy_update(batch.states, policy, critic)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite offline distillation loss at update {updates}")
        window.append(loss)
        if len(window) == config.offline_stop_window:
            mean = float(np.mean(window))
            if prev_mean is not None and prev_mean - mean < config.offline_stop_delta:
                break
            prev_mean = mean
            window = []
    return updates, loss


def train(env, mode: str, schedule: str, config: AgentConfig, seed: int, out_dir=None) -> RunRecord:
    """Full training loop; returns the RunRecord and, when ``out_dir`` is
    given, saves the networks and replay buffer there.

    Numerical blowups (non-finite losses, Q values, or gradients) abort the
    run and mark the record failed rather than raising.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if schedule not in SCHEDULES:
        raise ConfigError(f"schedule must be one of {SCHEDULES}, got {schedule!r}")
    if mode == "cem" and schedule == "offline":
        raise ConfigError("schedule 'offline' needs a policy network; mode 'cem' has none")
    config.validate()

    obs_dim = env.spec.observation_dim
    act_dim = env.spec.action_dim
    uses_cem = mode in ("cgp", "qgp", "cem")
    twin = mode != "ddpg"
    update_freq = 1 if mode == "ddpg" else config.target_update_freq
    chash = config_hash(config, mode, schedule, env.spec.name)
    if mode == "ddpg":
        config = AgentConfig.from_dict({**config.to_dict(), "smooth_target_actions": False})

    seq = np.random.SeedSequence(seed)
    init_ss, env_ss, act_ss, train_ss, eval_ss = seq.spawn(5)
    init_rng = np.random.default_rng(init_ss)
    env_rng = np.random.default_rng(env_ss)
    act_rng = np.random.default_rng(act_ss)
    train_rng = np.random.default_rng(train_ss)
    eval_seed, eval_cem_seed = (int(s) for s in eval_ss.generate_state(2))

    critic = TwinCritic.build(
        obs_dim, act_dim, config.hidden_sizes, config.q_lr, config.weight_decay, init_rng, twin=twin
    )
    policy = None
    if mode != "cem":
        policy = PolicyHead.build(
            obs_dim, act_dim, config.hidden_sizes, config.policy_lr, config.weight_decay, init_rng
        )
    cem_cfg = config.cem_config(act_dim)
    buffer = ReplayBuffer(config.buffer_capacity)
    eval_env = type(env)()

    q_live = lambda s, a: _q_values(critic.q1, s, a)
    q_target = lambda s, a: _q_values(critic.q1_target, s, a)

    if uses_cem:
        target_action_fn = lambda s: cem_policy_batch(s, q_target, cem_cfg, train_rng)
    else:
        target_action_fn = lambda s: policy.pi_target.forward(s)

    def behavior_action(obs):
        if uses_cem:
            action = cem_policy(obs, q_live, cem_cfg, act_rng)
        else:
            action = policy.pi.forward(obs[None])[0]
        if config.exploration_noise > 0.0:
            action = np.clip(action + act_rng.normal(0.0, config.exploration_noise, act_dim), -1.0, 1.0)
        return action

    record = RunRecord(
        config_hash=chash,
        mode=mode,
        schedule=schedule,
        seed=seed,
        env_name=env.spec.name,
    )
    eval_count = 0

    def run_eval(step):
        nonlocal eval_count
        if mode == "cem":
            cem_rng = np.random.default_rng([eval_cem_seed, eval_count])
            policy_fn = lambda obs: cem_policy(obs, q_live, cem_cfg, cem_rng)
        else:
            policy_fn = lambda obs: policy.pi.forward(obs[None])[0]
        mean, rets = evaluate(eval_env, policy_fn, config.eval_episodes, eval_seed)
        if not np.isfinite(mean):
            raise NumericalError(f"non-finite evaluation return at step {step}")
        record.steps.append(step)
        record.eval_means.append(mean)
        record.eval_returns.append(rets)
        eval_count += 1

    def learn_step():
        batch = buffer.sample(config.batch_size, train_rng)
        loss_q1, loss_q2 = critic_update(batch, critic, target_action_fn, config, train_rng)
        if not (np.isfinite(loss_q1) and (loss_q2 is None or np.isfinite(loss_q2))):
            raise NumericalError(f"non-finite critic loss ({loss_q1}, {loss_q2})")
        state["train_steps"] += 1
        if state["train_steps"] % update_freq == 0:
            if schedule == "online" and policy is not None:
                if mode == "cgp":
                    targets = cem_policy_batch(batch.states, q_live, cem_cfg, train_rng)
                    loss_pi = cgp_policy_update(batch.states, policy, targets)
                else:
                    loss_pi = qgp_policy_update(batch.states, policy, critic)
                if not np.isfinite(loss_pi):
                    raise NumericalError(f"non-finite policy loss {loss_pi}")
            polyak_update(critic.q1_target, critic.q1, config.tau)
            if critic.twin:
                polyak_update(critic.q2_target, critic.q2, config.tau)
            if policy is not None:
                polyak_update(policy.pi_target, policy.pi, config.tau)
            state["policy_updates"] += 1

    state = {"train_steps": 0, "policy_updates": 0}
    obs = env.reset(env_rng)
    pending = 0  # episodic_training: learn steps owed at episode end
    try:
        for step in range(1, config.total_steps + 1):
            if step <= config.initial_random_steps:
                action = act_rng.uniform(-1.0, 1.0, act_dim)
            else:
                action = behavior_action(obs)
            result = env.step(action)
            buffer.push(Transition(obs, action, result.reward, result.next_observation, int(result.end_kind)))
            episode_over = result.end_kind != EndKind.NOT_DONE
            obs = env.reset(env_rng) if episode_over else result.next_observation

            can_learn = step > config.initial_random_steps and buffer.size >= config.batch_size
            if can_learn:
                if config.episodic_training:
                    pending += 1
                    if episode_over:
                        for _ in range(pending):
                            learn_step()
                        pending = 0
                else:
                    learn_step()

            if step % config.eval_every == 0 and not (
                schedule == "offline" and step == config.total_steps
            ):
                run_eval(step)

        if schedule == "offline":
            distill_offline(policy, critic, buffer, mode, config, cem_cfg, train_rng)
            run_eval(config.total_steps)
    except NumericalError as err:
        record.status = "failed"
        record.failure = str(err)

    if record.status == "completed" and record.eval_means:
        record.final_reward = record.eval_means[-1]
    else:
        record.final_reward = float("-inf")

    if out_dir is not None:
        save_artifacts(Path(out_dir), critic, policy, buffer)
    return record


def save_artifacts(out_dir: Path, critic: TwinCritic, policy: PolicyHead | None, buffer: ReplayBuffer) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_dense_net(critic.q1, out_dir / "q1.npz")
    save_dense_net(critic.q1_target, out_dir / "q1_target.npz")
    if critic.twin:
        save_dense_net(critic.q2, out_dir / "q2.npz")
        save_dense_net(critic.q2_target, out_dir / "q2_target.npz")
    if policy is not None:
        save_dense_net(policy.pi, out_dir / "policy.npz")
        save_dense_net(policy.pi_target, out_dir / "policy_target.npz")
    if buffer.size:
        buffer.save(out_dir / "buffer.npz")
