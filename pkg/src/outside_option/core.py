"""Multinomial logit with an explicit outside option.

Candidate rewards are *normalized*: each is the candidate's utility minus the
utility of rejecting everything, so the outside option always sits at 0 and is
never stored. Index 0 of every probability vector is the outside option.
"""

import math

import numpy as np


def _as_rewards(rewards):
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("rewards must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    return r


def choice_probabilities(rewards) -> np.ndarray:
    """Probabilities of choosing the outside option and each candidate.

    Parameters
    ----------
    rewards : sequence of float
        Normalized rewards of the J candidates.

    Returns
    -------
    numpy.ndarray
        Length J + 1; entry 0 is the outside option.

    Examples
    --------
    >>> choice_probabilities([0.0]).tolist()
    [0.5, 0.5]
    """
    r = _as_rewards(rewards)
    # the outside option contributes exp(0); shifting by max(0, max r) keeps
    # every exponent <= 0 without changing the ratio
    shift = max(0.0, float(r.max()))
    expo = np.exp(r - shift)
    outside = math.exp(-shift)
    total = math.fsum([outside, *expo.tolist()])
    probs = np.empty(r.size + 1)
    probs[0] = outside / total
    probs[1:] = expo / total
    return probs


def log_odds_reward(p_i: float, p_0: float) -> float:
    """Recover a normalized reward from its choice probability and the outside option's."""
    for name, p in (("p_i", p_i), ("p_0", p_0)):
        if not (0.0 < p < 1.0):
            raise ValueError(f"{name} must lie strictly inside (0, 1), got {p!r}")
    return math.log(p_i) - math.log(p_0)


def acceptability_probability(r: float) -> float:
    """Logistic probability that a response with normalized reward ``r`` is acceptable."""
    r = float(r)
    if not math.isfinite(r):
        raise ValueError("reward must be finite")
    if r >= 0:
        return 1.0 / (1.0 + math.exp(-r))
    e = math.exp(r)
    return e / (1.0 + e)
