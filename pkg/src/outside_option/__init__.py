"""Reward modelling with an outside option and threshold-guarded best-of-N sampling."""

__version__ = "0.1.0"

from .core import acceptability_probability, choice_probabilities, log_odds_reward  # noqa: E402
from .estimator import FitResult, RewardModelParams, TrainingConfig, fit_mle  # noqa: E402
from .inference import Mode, best_of_mini_n, best_of_n  # noqa: E402
from .world import WorldConfig, build_choice_dataset  # noqa: E402

__all__ = [
    "__version__",
    "acceptability_probability",
    "best_of_mini_n",
    "best_of_n",
    "build_choice_dataset",
    "choice_probabilities",
    "fit_mle",
    "FitResult",
    "log_odds_reward",
    "Mode",
    "RewardModelParams",
    "TrainingConfig",
    "WorldConfig",
]
