"""Shortcut-robust classification with a mixture-of-softmax head.

Train a mixture of softmax experts with a router-diversity penalty, then
aggregate expert predictions pessimistically at inference (uniform or
maximin weighting) to stay robust when the shortcut features that were
predictive in training stop being so. The per-batch diversity penalty also
serves as a label-free distribution-shift statistic.
"""

__version__ = "0.1.0"

from .control import RULES, Decision, aggregate, minimax_oracle, worst_case_risk
from .evaluate import (
    PenaltyStats,
    ShiftVerdict,
    SplitReport,
    accuracy,
    detect_shift,
    expert_prediction_profile,
    mixture_profile,
    penalty_statistic,
    split_report,
)
from .model import (
    MixtureOutput,
    ModelParams,
    MosConfig,
    init_model,
    load_checkpoint,
    mixture_backward,
    mixture_forward,
    predict,
    save_checkpoint,
)
from .diversity import PenaltyComputation, penalty, penalty_gradient, set_ell, topl_dropout
from .synth import (
    Dataset,
    GeneratorConfig,
    ShortcutGenerator,
    SplitSpec,
    make_generator,
    sample_split,
)
from .train import SweepResult, TrainConfig, TrainHistory, eval_losses, fit, two_stage_search

__all__ = [
    "__version__",
    "RULES",
    "Decision",
    "aggregate",
    "minimax_oracle",
    "worst_case_risk",
    "PenaltyStats",
    "ShiftVerdict",
    "SplitReport",
    "accuracy",
    "detect_shift",
    "expert_prediction_profile",
    "mixture_profile",
    "penalty_statistic",
    "split_report",
    "MixtureOutput",
    "ModelParams",
    "MosConfig",
    "init_model",
    "load_checkpoint",
    "mixture_backward",
    "mixture_forward",
    "predict",
    "save_checkpoint",
    "PenaltyComputation",
    "penalty",
    "penalty_gradient",
    "set_ell",
    "topl_dropout",
    "Dataset",
    "GeneratorConfig",
    "ShortcutGenerator",
    "SplitSpec",
    "make_generator",
    "sample_split",
    "SweepResult",
    "TrainConfig",
    "TrainHistory",
    "eval_losses",
    "fit",
    "two_stage_search",
]
