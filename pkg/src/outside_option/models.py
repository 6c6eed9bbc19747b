"""Reward scorers used at inference time.

A scorer maps a prompt and a :class:`~outside_option.world.ResponseBatch` to
an array of estimated normalized rewards.
"""

import numpy as np

from .estimator import RewardModelParams


class LinearRewardModel:
    def __init__(self, params: RewardModelParams):
        self.params = params

    def score(self, prompt, batch) -> np.ndarray:
        return batch.features @ self.params.weights + self.params.bias


class OracleRewardModel:
    """Scores every response with its true normalized reward."""

    def score(self, prompt, batch) -> np.ndarray:
        return np.array(batch.true_normalized_reward, dtype=float)


class NoisyOracleRewardModel:
    """True normalized reward plus Gaussian estimation noise of a chosen size.

    Noise is drawn from the scorer's own generator so the policy's random
    stream is left untouched.
    """

    def __init__(self, noise_sd: float, rng: np.random.Generator):
        if noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        self.noise_sd = float(noise_sd)
        self.rng = rng

    def score(self, prompt, batch) -> np.ndarray:
        r = np.asarray(batch.true_normalized_reward, dtype=float)
        return r + self.noise_sd * self.rng.standard_normal(r.shape)
