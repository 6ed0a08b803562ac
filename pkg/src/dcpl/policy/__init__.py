from .interventions import interventions_backward, user_interventions
from .nets import MLP, PolicyNet, ValueNet, load_checkpoint, save_checkpoint, sgd_step
from .objective import (
    Setup,
    discounted_returns,
    fixed_advance,
    rollout,
    stage_return,
    total_objective,
)
from .reward import (
    StageContext,
    contribution,
    expected_next_state,
    expected_reward,
    reward,
    reward_summands,
    stage_context,
)

__all__ = [
    "MLP",
    "PolicyNet",
    "Setup",
    "StageContext",
    "ValueNet",
    "contribution",
    "discounted_returns",
    "expected_next_state",
    "expected_reward",
    "fixed_advance",
    "interventions_backward",
    "load_checkpoint",
    "reward",
    "reward_summands",
    "rollout",
    "save_checkpoint",
    "sgd_step",
    "stage_context",
    "stage_return",
    "total_objective",
    "user_interventions",
]
