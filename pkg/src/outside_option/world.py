"""Synthetic prompts, responses and a Gumbel-max labeller.

The world stands in for a real generator policy and a human labeller. Each
prompt carries a ground-truth rejection threshold ``C(x)``; each response
carries a ground-truth utility, and its normalized reward is the utility minus
the prompt's threshold.

Response features are joint prompt/response features. The first ``d_y - 1``
are bounded quality scores ``tanh(latent)``, where the latent mean moves with
the prompt's features and drops with its difficulty. The last feature is the
prompt's threshold itself, which is what lets a reward model that only sees
response features learn a prompt-dependent acceptability cut. The true utility
is linear in all features plus bounded uniform noise that no model can see.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

#: Dimensionality of the context block appended to every response's features.
CONTEXT_FEATURES = 1


@dataclass(frozen=True)
class WorldConfig:
    """Ground truth and generator settings for a synthetic world.

    ``difficulty`` is the negative logit of the per-response acceptance rate,
    so a prompt of difficulty ``d`` is calibrated to ``p_g = 1 / (1 + e^d)``.
    """

    d_x: int = 4
    d_y: int = 4
    true_weights: tuple[float, ...] = (0.5, 0.3, 0.2, 0.0)
    difficulty_range: tuple[float, float] = (-3.0, 6.0)
    candidates_per_prompt: int = 2
    rng_seed: int = 0
    quality_spread: float = 1.0
    difficulty_shift: float = 0.3
    prompt_loading: float = 0.3
    utility_noise: float = 0.1
    calibration_samples: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "true_weights", tuple(float(w) for w in self.true_weights))
        object.__setattr__(self, "difficulty_range", tuple(float(v) for v in self.difficulty_range))
        if self.d_x < 1:
            raise ValueError("d_x must be >= 1")
        if self.d_y < 1 + CONTEXT_FEATURES:
            raise ValueError("d_y must leave room for at least one quality feature")
        if len(self.true_weights) != self.d_y:
            raise ValueError(f"true_weights has length {len(self.true_weights)}, expected d_y={self.d_y}")
        if not np.all(np.isfinite(self.true_weights)):
            raise ValueError("true_weights must be finite")
        if self.true_weights[-1] == 1.0:
            # the threshold would cancel out of the normalized reward
            raise ValueError("weight on the threshold feature must differ from 1")
        lo, hi = self.difficulty_range
        if len(self.difficulty_range) != 2 or lo > hi:
            raise ValueError("difficulty_range must be an ordered pair")
        if self.candidates_per_prompt < 1:
            raise ValueError("candidates_per_prompt must be >= 1")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")
        if self.quality_spread <= 0 or self.utility_noise < 0:
            raise ValueError("quality_spread must be > 0 and utility_noise >= 0")
        if self.calibration_samples < 1:
            raise ValueError("calibration_samples must be >= 1")

    @property
    def quality_dims(self) -> int:
        return self.d_y - CONTEXT_FEATURES

    def to_dict(self) -> dict:
        d = asdict(self)
        d["true_weights"] = list(self.true_weights)
        d["difficulty_range"] = list(self.difficulty_range)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> WorldConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown world config fields: {sorted(unknown)}")
        return cls(**data)


def target_acceptance_rate(difficulty: float) -> float:
    """Per-response acceptance probability a prompt of this difficulty is calibrated to."""
    d = float(difficulty)
    if d >= 0:
        e = np.exp(-d)
        return float(e / (1.0 + e))
    return float(1.0 / (1.0 + np.exp(d)))


@dataclass(eq=False)
class SyntheticPrompt:
    id: int
    features: np.ndarray
    rejection_threshold: float
    difficulty: float

    @property
    def acceptance_rate(self) -> float:
        return target_acceptance_rate(self.difficulty)


@dataclass(eq=False)
class SyntheticResponse:
    features: np.ndarray
    true_utility: float
    true_normalized_reward: float


@dataclass(eq=False)
class ResponseBatch:
    """Column-wise storage for many responses to one prompt."""

    features: np.ndarray
    true_utility: np.ndarray
    true_normalized_reward: np.ndarray

    def __len__(self):
        return len(self.true_utility)

    def __getitem__(self, key):
        if isinstance(key, slice):
            return ResponseBatch(self.features[key], self.true_utility[key], self.true_normalized_reward[key])
        return SyntheticResponse(
            self.features[key].copy(), float(self.true_utility[key]), float(self.true_normalized_reward[key])
        )

    def to_list(self) -> list[SyntheticResponse]:
        return [self[i] for i in range(len(self))]

    @classmethod
    def from_responses(cls, responses) -> ResponseBatch:
        responses = list(responses)
        return cls(
            np.array([r.features for r in responses], dtype=float),
            np.array([r.true_utility for r in responses], dtype=float),
            np.array([r.true_normalized_reward for r in responses], dtype=float),
        )


@dataclass(eq=False)
class ChoiceObservation:
    """One labelled choice set; ``chosen == 0`` is the outside option."""

    prompt: SyntheticPrompt
    candidates: list[SyntheticResponse]
    chosen: int

    def __post_init__(self):
        if len(self.candidates) < 1:
            raise ValueError("a choice set needs at least one candidate")
        if not 0 <= self.chosen <= len(self.candidates):
            raise ValueError(f"chosen={self.chosen} outside 0..{len(self.candidates)}")


# ---------------------------------------------------------------------------
# Gumbel noise and the simulated labeller


def gumbel_from_uniform(u):
    """Inverse CDF of the standard Gumbel distribution."""
    return -np.log(-np.log(u))


def _open_uniform(rng, size):
    u = rng.random(size)
    if size is None:
        while u == 0.0:
            u = rng.random()
        return u
    zero = u == 0.0
    while zero.any():
        u[zero] = rng.random(int(zero.sum()))
        zero = u == 0.0
    return u


def sample_gumbel(rng: np.random.Generator, size=None):
    """Draw Gumbel(0, 1) variates as ``-ln(-ln U)`` with ``U`` on the open unit interval."""
    u = _open_uniform(rng, size)
    g = gumbel_from_uniform(u)
    return float(g) if size is None else g


def simulate_labeller_choice(true_normalized_rewards, rng: np.random.Generator, size=None):
    """Pick the option with the highest noisy utility.

    The outside option has reward 0. Ties (a probability-zero event) go to the
    lowest index. With ``size`` set, returns an array of independent choices.
    """
    r = np.asarray(true_normalized_rewards, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("need at least one candidate reward")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    base = np.concatenate(([0.0], r))
    if size is None:
        return int(np.argmax(base + sample_gumbel(rng, base.size)))
    noise = sample_gumbel(rng, (int(size), base.size))
    return np.argmax(base + noise, axis=1)


# ---------------------------------------------------------------------------
# Prompts and responses


def _latent_means(config: WorldConfig, prompt_features: np.ndarray, difficulty: float) -> np.ndarray:
    idx = np.arange(config.quality_dims) % config.d_x
    return config.prompt_loading * prompt_features[idx] - config.difficulty_shift * difficulty


def _draw_quality(config, prompt_features, difficulty, count, rng):
    """Quality features and the threshold-free part of the utility."""
    means = _latent_means(config, prompt_features, difficulty)
    latent = means + config.quality_spread * rng.standard_normal((count, config.quality_dims))
    quality = np.tanh(latent)
    noise = rng.uniform(-config.utility_noise, config.utility_noise, count)
    w = np.asarray(config.true_weights)
    return quality, quality @ w[: config.quality_dims] + noise


def generate_prompt(config: WorldConfig, difficulty: float, rng: np.random.Generator, prompt_id: int = 0) -> SyntheticPrompt:
    """Draw a prompt and calibrate its rejection threshold by Monte Carlo.

    The threshold is placed at the empirical ``1 - p_g`` quantile of the
    threshold-free utility over ``config.calibration_samples`` responses, so the
    prompt's acceptance rate matches ``target_acceptance_rate(difficulty)``.
    """
    lo, hi = config.difficulty_range
    if not lo <= difficulty <= hi:
        raise ValueError(f"difficulty {difficulty} outside configured range {config.difficulty_range}")
    features = rng.standard_normal(config.d_x)
    _, partial = _draw_quality(config, features, difficulty, config.calibration_samples, rng)
    p_g = target_acceptance_rate(difficulty)
    # normalized = partial + (w_c - 1) * C, so P(normalized > 0) = p_g at this C
    threshold = float(np.quantile(partial, 1.0 - p_g)) / (1.0 - config.true_weights[-1])
    return SyntheticPrompt(int(prompt_id), features, threshold, float(difficulty))


class SyntheticPolicy:
    """Generator policy of a synthetic world."""

    def __init__(self, config: WorldConfig):
        self.config = config

    def sample(self, prompt: SyntheticPrompt, count: int, rng: np.random.Generator) -> ResponseBatch:
        if count < 1:
            raise ValueError("count must be >= 1")
        cfg = self.config
        quality, partial = _draw_quality(cfg, prompt.features, prompt.difficulty, count, rng)
        c = prompt.rejection_threshold
        features = np.hstack([quality, np.full((count, CONTEXT_FEATURES), c)])
        utility = partial + cfg.true_weights[-1] * c
        return ResponseBatch(features, utility, utility - c)

    def acceptance_rate(self, prompt: SyntheticPrompt) -> float:
        return prompt.acceptance_rate


def generate_responses(prompt: SyntheticPrompt, count: int, config: WorldConfig, rng: np.random.Generator) -> list[SyntheticResponse]:
    return SyntheticPolicy(config).sample(prompt, count, rng).to_list()


def sample_prompts(config: WorldConfig, num_prompts: int, rng: np.random.Generator, first_id: int = 0) -> list[SyntheticPrompt]:
    """Prompts with difficulties uniform over the configured range, one child stream each."""
    prompts = []
    for i, child in enumerate(rng.spawn(num_prompts)):
        difficulty = child.uniform(*config.difficulty_range)
        prompts.append(generate_prompt(config, difficulty, child, prompt_id=first_id + i))
    return prompts


def build_choice_dataset(config: WorldConfig, num_prompts: int, rng: np.random.Generator) -> list[ChoiceObservation]:
    """Simulate one labelled choice set of ``candidates_per_prompt`` responses per prompt."""
    if num_prompts < 1:
        raise ValueError("num_prompts must be >= 1")
    policy = SyntheticPolicy(config)
    dataset = []
    for i, child in enumerate(rng.spawn(num_prompts)):
        difficulty = child.uniform(*config.difficulty_range)
        prompt = generate_prompt(config, difficulty, child, prompt_id=i)
        batch = policy.sample(prompt, config.candidates_per_prompt, child)
        chosen = simulate_labeller_choice(batch.true_normalized_reward, child)
        dataset.append(ChoiceObservation(prompt, batch.to_list(), chosen))
    return dataset


class CategoricalPolicy:
    """A toy policy over a handful of fixed response types.

    Type ``t`` is emitted with probability ``probabilities[t]`` and has
    one-hot features, so a linear reward model with weights equal to the
    per-type estimates reproduces any assignment of estimated rewards.
    """

    def __init__(self, probabilities, true_rewards):
        p = np.asarray(probabilities, dtype=float)
        r = np.asarray(true_rewards, dtype=float)
        if p.shape != r.shape or p.ndim != 1:
            raise ValueError("probabilities and true_rewards must be equal-length vectors")
        if np.any(p < 0) or not np.isclose(p.sum(), 1.0):
            raise ValueError("probabilities must be a distribution")
        self.probabilities = p
        self.true_rewards = r

    def sample(self, prompt, count, rng):
        types = rng.choice(len(self.probabilities), size=count, p=self.probabilities)
        features = np.eye(len(self.probabilities))[types]
        utility = self.true_rewards[types]
        return ResponseBatch(features, utility.copy(), utility.copy())

    def acceptance_rate(self, prompt=None) -> float:
        return float(self.probabilities[self.true_rewards > 0].sum())


# ---------------------------------------------------------------------------
# Persistence


class DatasetFormatError(ValueError):
    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


def observation_to_record(obs: ChoiceObservation) -> dict:
    p = obs.prompt
    return {
        "prompt_id": p.id,
        "prompt_features": np.asarray(p.features, dtype=float).tolist(),
        "rejection_threshold": float(p.rejection_threshold),
        "difficulty": float(p.difficulty),
        "candidates": [
            {"features": np.asarray(c.features, dtype=float).tolist(), "true_utility": float(c.true_utility)}
            for c in obs.candidates
        ],
        "chosen": int(obs.chosen),
    }


def observation_from_record(rec: dict) -> ChoiceObservation:
    threshold = float(rec["rejection_threshold"])
    prompt = SyntheticPrompt(
        int(rec["prompt_id"]),
        np.asarray(rec["prompt_features"], dtype=float),
        threshold,
        float(rec.get("difficulty", float("nan"))),
    )
    candidates = [
        SyntheticResponse(
            np.asarray(c["features"], dtype=float),
            float(c["true_utility"]),
            float(c["true_utility"]) - threshold,
        )
        for c in rec["candidates"]
    ]
    chosen = rec["chosen"]
    if isinstance(chosen, bool) or not isinstance(chosen, int):
        raise ValueError("chosen must be an integer")
    return ChoiceObservation(prompt, candidates, chosen)


def write_dataset(path, dataset) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for obs in dataset:
            fh.write(json.dumps(observation_to_record(obs)))
            fh.write("\n")


def read_dataset(path) -> list[ChoiceObservation]:
    """Load a line-delimited JSON dataset; errors name the offending line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(observation_from_record(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetFormatError(path, lineno, str(exc) or type(exc).__name__) from exc
    return out


def write_world_config(path, config: WorldConfig) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")


def read_world_config(path) -> WorldConfig:
    return WorldConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
