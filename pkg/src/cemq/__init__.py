"""cemq: continuous-action Q-learning with cross-entropy-method policies,
distilled inference networks, and a seeded sweep/benchmark harness."""

__version__ = "0.1.0"

from .agents import (  # noqa: F401
    AgentConfig,
    ConfigError,
    MODES,
    SCHEDULES,
    PolicyHead,
    TwinCritic,
    bellman_target,
    cgp_policy_update,
    config_hash,
    critic_update,
    distill_offline,
    evaluate,
    qgp_policy_update,
    train,
)
from .cem import CemConfig, cem_argmax, cem_argmax_batch, cem_policy, cem_policy_batch  # noqa: F401
from .envs import EndKind, EnvSpec, StepResult, dump_trajectory, env_names, make_env  # noqa: F401
from .nets import (  # noqa: F401
    AdamState,
    DenseNet,
    Gradients,
    NumericalError,
    adam_step,
    load_dense_net,
    polyak_update,
    save_dense_net,
)
from .records import RunRecord, load_record, save_record  # noqa: F401
from .replay import Batch, ReplayBuffer, Transition  # noqa: F401
