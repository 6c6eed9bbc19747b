"""Maximum-likelihood fitting of a linear reward model on outside-option choices."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .world import ChoiceObservation


class EstimationError(RuntimeError):
    """The likelihood became non-finite during fitting."""


@dataclass
class RewardModelParams:
    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = float(self.bias)
        if self.weights.ndim != 1:
            raise ValueError("weights must be a vector")
        if not (np.all(np.isfinite(self.weights)) and math.isfinite(self.bias)):
            raise ValueError("parameters must be finite")

    @classmethod
    def zeros(cls, dim: int) -> RewardModelParams:
        return cls(np.zeros(dim), 0.0)

    def as_vector(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    @classmethod
    def from_vector(cls, theta) -> RewardModelParams:
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:-1].copy(), float(theta[-1]))

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias}

    @classmethod
    def from_dict(cls, d) -> RewardModelParams:
        return cls(d["weights"], d["bias"])


@dataclass(frozen=True)
class TrainingConfig:
    """Full-batch gradient ascent settings.

    ``step_size`` multiplies the per-observation mean gradient and
    ``gradient_tolerance`` bounds the norm of that mean gradient, so both are
    independent of dataset size.
    """

    step_size: float = 4.0
    max_iterations: int = 20_000
    gradient_tolerance: float = 1e-6
    l2_penalty: float = 0.0
    backtracking: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be > 0")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> TrainingConfig:
        return cls(**d)


@dataclass
class FitResult:
    params: RewardModelParams
    final_log_likelihood: float
    iterations_used: int
    converged: bool
    gradient_norm: float
    initial_log_likelihood: float = float("nan")
    history: list[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "final_log_likelihood": self.final_log_likelihood,
            "initial_log_likelihood": self.initial_log_likelihood,
            "iterations_used": self.iterations_used,
            "converged": self.converged,
            "gradient_norm": self.gradient_norm,
        }


# ---------------------------------------------------------------------------
# Packed representation


@dataclass(eq=False)
class PackedChoices:
    """Choice sets padded to a common width.

    ``features`` is (K, J_max, d); ``mask`` marks real candidates; ``chosen``
    uses the observation's own indexing (0 = outside option).
    """

    features: np.ndarray
    mask: np.ndarray
    chosen: np.ndarray

    def __len__(self):
        return len(self.chosen)

    @property
    def dim(self) -> int:
        return self.features.shape[2]


def pack_observations(dataset) -> PackedChoices:
    if isinstance(dataset, PackedChoices):
        return dataset
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    j_max = max(len(o.candidates) for o in dataset)
    dim = len(dataset[0].candidates[0].features)
    feats = np.zeros((len(dataset), j_max, dim))
    mask = np.zeros((len(dataset), j_max), dtype=bool)
    chosen = np.empty(len(dataset), dtype=np.int64)
    for k, obs in enumerate(dataset):
        for j, cand in enumerate(obs.candidates):
            f = np.asarray(cand.features, dtype=float)
            if f.shape != (dim,):
                raise ValueError(f"observation {k}: candidate {j} has {f.size} features, expected {dim}")
            if not np.all(np.isfinite(f)):
                raise ValueError(f"observation {k}: candidate {j} has non-finite features")
            feats[k, j] = f
        mask[k, : len(obs.candidates)] = True
        chosen[k] = obs.chosen
    return PackedChoices(feats, mask, chosen)


def _check_dim(params: RewardModelParams, dim: int):
    if params.weights.shape != (dim,):
        raise ValueError(f"params have {params.weights.size} weights but features have dimension {dim}")


def _candidate_rewards(params, packed):
    r = packed.features @ params.weights + params.bias
    return np.where(packed.mask, r, -np.inf)


def _per_observation(params, packed):
    """Log-probabilities of the observed choices and the candidate choice probabilities."""
    r = _candidate_rewards(params, packed)
    shift = np.maximum(r.max(axis=1), 0.0)
    e = np.exp(r - shift[:, None])
    denom = np.exp(-shift) + e.sum(axis=1)
    log_denom = shift + np.log(denom)
    k = np.arange(len(packed))
    picked = packed.chosen > 0
    chosen_r = np.zeros(len(packed))
    chosen_r[picked] = r[k[picked], packed.chosen[picked] - 1]
    return chosen_r - log_denom, e / denom[:, None]


def predict_reward(params: RewardModelParams, prompt, response) -> float:
    f = np.asarray(response.features, dtype=float)
    _check_dim(params, f.size)
    return float(f @ params.weights + params.bias)


def observation_log_prob(params: RewardModelParams, obs: ChoiceObservation) -> float:
    packed = pack_observations([obs])
    _check_dim(params, packed.dim)
    return float(_per_observation(params, packed)[0][0])


def total_log_likelihood(params: RewardModelParams, dataset, l2_penalty: float = 0.0) -> float:
    """Sum of observed-choice log-probabilities, minus ``l2_penalty * |weights|^2``."""
    packed = pack_observations(dataset)
    _check_dim(params, packed.dim)
    logp, _ = _per_observation(params, packed)
    total = math.fsum(logp.tolist())
    if l2_penalty:
        total -= l2_penalty * math.fsum((params.weights**2).tolist())
    return total


def log_likelihood_gradient(params: RewardModelParams, dataset, l2_penalty: float = 0.0) -> np.ndarray:
    """Gradient of :func:`total_log_likelihood` with respect to ``(weights, bias)``.

    Per observation: the chosen candidate's augmented features (zero for the
    outside option) minus the probability-weighted mean of candidate features.
    """
    packed = pack_observations(dataset)
    _check_dim(params, packed.dim)
    _, probs = _per_observation(params, packed)
    aug = np.concatenate([packed.features, packed.mask[..., None].astype(float)], axis=2)
    expected = np.einsum("kj,kjd->kd", probs, aug)
    observed = np.zeros_like(expected)
    picked = packed.chosen > 0
    k = np.arange(len(packed))[picked]
    observed[picked] = aug[k, packed.chosen[picked] - 1]
    contrib = observed - expected
    grad = np.array([math.fsum(col) for col in contrib.T.tolist()])
    if l2_penalty:
        grad[:-1] -= 2.0 * l2_penalty * params.weights
    return grad


def fit_mle(dataset, config: TrainingConfig = TrainingConfig()) -> FitResult:
    """Maximize the choice log-likelihood by gradient ascent from zero.

    With backtracking on, a step that lowers the likelihood is halved until it
    does not, which keeps the trace non-decreasing.
    """
    packed = pack_observations(dataset)
    n_obs = len(packed)
    penalty = config.l2_penalty
    params = RewardModelParams.zeros(packed.dim)
    ll = total_log_likelihood(params, packed, penalty)
    initial = ll
    history = [ll]
    grad = log_likelihood_gradient(params, packed, penalty)
    gnorm = float(np.linalg.norm(grad)) / n_obs
    converged = gnorm <= config.gradient_tolerance
    iterations = 0
    while not converged and iterations < config.max_iterations:
        theta = params.as_vector()
        step = config.step_size
        for _ in range(60):
            candidate = theta + step * grad / n_obs
            if not np.all(np.isfinite(candidate)):
                raise EstimationError(f"parameters diverged at iteration {iterations}")
            cand_params = RewardModelParams.from_vector(candidate)
            cand_ll = total_log_likelihood(cand_params, packed, penalty)
            if not math.isfinite(cand_ll):
                if not config.backtracking:
                    raise EstimationError(f"log-likelihood became non-finite at iteration {iterations}")
            elif not config.backtracking or cand_ll >= ll:
                break
            step /= 2.0
        else:
            # no ascent direction at floating-point resolution
            break
        iterations += 1
        params, ll = cand_params, cand_ll
        history.append(ll)
        grad = log_likelihood_gradient(params, packed, penalty)
        gnorm = float(np.linalg.norm(grad)) / n_obs
        converged = gnorm <= config.gradient_tolerance
    if not math.isfinite(ll):
        raise EstimationError("log-likelihood is not finite")
    return FitResult(params, ll, iterations, converged, gnorm, initial, history)


def write_fit(path, result: FitResult, config: TrainingConfig, seed: int, extra: dict | None = None) -> None:
    doc = {"seed": int(seed), "training": config.to_dict(), **result.to_dict()}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_fit(path) -> tuple[RewardModelParams, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return RewardModelParams.from_dict(doc["params"]), doc
