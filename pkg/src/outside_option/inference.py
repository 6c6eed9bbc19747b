"""Best-of-N, best of mini-N in-loop, and false-acceptance Monte Carlo."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .calibration import ThresholdSchedule


class Mode(str, Enum):
    GUARDRAIL = "guardrail"
    ACCELERATOR = "accelerator"
    STANDARD_BON = "standard_bon"


@dataclass
class InferenceOutcome:
    """Result of one inference call.

    ``winner`` is ``None`` when the call abstained; ``estimated_reward`` and
    ``true_reward`` always describe the best response found, returned or not.
    """

    mode: Mode
    winner: object
    winner_index: int
    estimated_reward: float
    true_reward: float
    generations_consumed: int
    loops_used: int
    found_acceptable: bool
    abstained: bool = False
    running_max: list[float] = field(default_factory=list, repr=False)
    thresholds: list[float] = field(default_factory=list, repr=False)

    @property
    def predicted_acceptable(self) -> bool:
        if self.mode is Mode.STANDARD_BON:
            return self.estimated_reward > 0
        return self.found_acceptable

    @property
    def truly_acceptable(self) -> bool:
        return self.true_reward > 0

    @property
    def false_acceptance(self) -> bool:
        return self.predicted_acceptable and self.true_reward < 0


class ReplayPolicy:
    """Serves a pre-drawn batch in order, ignoring the generator passed in.

    Running several strategies against one replayed batch gives them common
    random numbers: a loop method that stops early sees a prefix of exactly
    the responses best-of-N saw.
    """

    def __init__(self, batch):
        self.batch = batch
        self.position = 0

    def sample(self, prompt, count, rng=None):
        end = self.position + count
        if end > len(self.batch):
            raise ValueError("replay batch exhausted")
        out = self.batch[self.position:end]
        self.position = end
        return out


def best_of_n(prompt, N: int, policy, reward_model, rng) -> InferenceOutcome:
    if N < 1:
        raise ValueError("N must be >= 1")
    batch = policy.sample(prompt, N, rng)
    scores = np.asarray(reward_model.score(prompt, batch), dtype=float)
    i = int(np.argmax(scores))
    return InferenceOutcome(
        Mode.STANDARD_BON, batch[i], i, float(scores[i]), float(batch.true_normalized_reward[i]),
        generations_consumed=N, loops_used=1, found_acceptable=bool(scores[i] > 0),
        running_max=[float(scores[i])],
    )


def _loop_thresholds(mode, schedule, n, L):
    if mode is Mode.GUARDRAIL:
        if schedule is None:
            raise ValueError("guardrail mode needs a threshold schedule")
        if schedule.L != L or len(schedule.taus) != L:
            raise ValueError(f"schedule has {len(schedule.taus)} thresholds for L={L} loops")
        if schedule.n != n:
            raise ValueError(f"schedule was built for mini-batches of {schedule.n}, not {n}")
        return list(schedule.taus)
    if schedule is not None:
        if len(schedule.taus) != L:
            raise ValueError(f"schedule has {len(schedule.taus)} thresholds for L={L} loops")
        if any(t != 0 for t in schedule.taus):
            raise ValueError("accelerator mode uses a constant zero threshold")
    return [0.0] * L


def best_of_mini_n(prompt, n: int, L: int, mode, schedule: ThresholdSchedule | None, policy, reward_model, rng, abstain: bool | None = None) -> InferenceOutcome:
    """Sample in ``L`` loops of ``n`` and stop once the running best clears the loop's threshold.

    Guardrail mode uses the calibrated ``schedule``; accelerator mode uses a
    threshold of zero throughout. When no loop clears its threshold the call
    abstains or returns the best response, per ``abstain`` (default: abstain
    for guardrail, return best for accelerator).
    """
    mode = Mode(mode)
    if mode is Mode.STANDARD_BON:
        raise ValueError("use best_of_n for standard best-of-N")
    if n < 1 or L < 1:
        raise ValueError("n and L must be >= 1")
    taus = _loop_thresholds(mode, schedule, n, L)
    if abstain is None:
        abstain = mode is Mode.GUARDRAIL

    best_score = -math.inf
    best = None
    best_index = -1
    seen = 0
    running = []
    found = False
    loops = 0
    for l in range(L):
        batch = policy.sample(prompt, n, rng)
        scores = np.asarray(reward_model.score(prompt, batch), dtype=float)
        i = int(np.argmax(scores))
        # strict: earlier responses keep ties
        if scores[i] > best_score:
            best_score = float(scores[i])
            best = batch[i]
            best_index = seen + i
        seen += n
        loops = l + 1
        running.append(best_score)
        if best_score > taus[l]:
            found = True
            break

    withheld = not found and abstain
    return InferenceOutcome(
        mode, None if withheld else best, best_index, best_score, float(best.true_normalized_reward),
        generations_consumed=n * loops, loops_used=loops, found_acceptable=found, abstained=withheld,
        running_max=running, thresholds=taus[:loops],
    )


# ---------------------------------------------------------------------------
# Monte Carlo analysis of false acceptance


def _bon_trials(prompt, N, trials, policy, reward_model, rng, chunk_responses=200_000):
    """Winner estimated/true rewards and good-candidate counts for repeated best-of-N."""
    est = np.empty(trials)
    true = np.empty(trials)
    good = np.empty(trials, dtype=np.int64)
    per_chunk = max(1, chunk_responses // N)
    start = 0
    while start < trials:
        t = min(per_chunk, trials - start)
        batch = policy.sample(prompt, t * N, rng)
        scores = np.asarray(reward_model.score(prompt, batch), dtype=float).reshape(t, N)
        truth = np.asarray(batch.true_normalized_reward, dtype=float).reshape(t, N)
        idx = np.argmax(scores, axis=1)
        rows = np.arange(t)
        est[start:start + t] = scores[rows, idx]
        true[start:start + t] = truth[rows, idx]
        good[start:start + t] = np.sum(truth > 0, axis=1)
        start += t
    return est, true, good


def _half_width(p, trials):
    return 1.96 * math.sqrt(p * (1.0 - p) / trials)


@dataclass
class FalseAcceptanceEstimate:
    probability: float
    half_width: float
    trials: int
    count: int


def estimate_false_acceptance(prompt, N: int, trials: int, policy, reward_model, rng) -> FalseAcceptanceEstimate:
    """Fraction of best-of-N runs whose winner scores above zero but is truly unacceptable."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    est, true, _ = _bon_trials(prompt, N, trials, policy, reward_model, rng)
    count = int(np.sum((est > 0) & (true < 0)))
    p = count / trials
    return FalseAcceptanceEstimate(p, _half_width(p, trials), trials, count)


def binomial_pmf(N: int, p: float) -> np.ndarray:
    k = np.arange(N + 1)
    return np.array([math.comb(N, int(j)) for j in k], dtype=float) * p**k * (1.0 - p) ** (N - k)


@dataclass
class FalseAcceptanceDecomposition:
    """Monte Carlo false acceptance split by the number of good candidates ``K``.

    ``conditional[k]`` is ``None`` for strata that never occurred; strata with
    fewer than ``min_stratum`` runs are listed in ``thin_strata``.
    """

    N: int
    trials: int
    acceptance_rate: float
    counts: np.ndarray
    false_acceptances: np.ndarray
    stratum_share: np.ndarray
    binomial: np.ndarray
    conditional: list
    probability: float
    thin_strata: list[int]

    @property
    def recombined(self) -> float:
        return math.fsum(a * q for a, q in zip(self.conditional, self.stratum_share) if a is not None)

    @property
    def tv_distance(self) -> float:
        return 0.5 * float(np.abs(self.stratum_share - self.binomial).sum())

    def conditional_se(self, k: int) -> float:
        a, c = self.conditional[k], self.counts[k]
        if a is None or c == 0:
            return math.inf
        return math.sqrt(a * (1.0 - a) / c)


def false_acceptance_decomposition(prompt, N: int, trials: int, policy, reward_model, rng, min_stratum: int = 30) -> FalseAcceptanceDecomposition:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    est, true, good = _bon_trials(prompt, N, trials, policy, reward_model, rng)
    fa = (est > 0) & (true < 0)
    counts = np.bincount(good, minlength=N + 1)
    fa_counts = np.bincount(good, weights=fa.astype(float), minlength=N + 1).astype(np.int64)
    share = counts / trials
    conditional = [fa_counts[k] / counts[k] if counts[k] else None for k in range(N + 1)]
    p_g = policy.acceptance_rate(prompt)
    return FalseAcceptanceDecomposition(
        N=N,
        trials=trials,
        acceptance_rate=p_g,
        counts=counts,
        false_acceptances=fa_counts,
        stratum_share=share,
        binomial=binomial_pmf(N, p_g),
        conditional=conditional,
        probability=int(fa.sum()) / trials,
        thin_strata=[k for k in range(N + 1) if 0 < counts[k] < min_stratum],
    )


@dataclass
class FalseAcceptanceCurve:
    n_values: list[int]
    pfa_estimates: list[float]
    fp_counts: list[int]
    trials: int
    half_widths: list[float]
    mean_true_rewards: list[float]
    mean_true_reward_se: list[float]

    def rows(self):
        for i, N in enumerate(self.n_values):
            yield {
                "N": N,
                "trials": self.trials,
                "fp_count": self.fp_counts[i],
                "pfa": self.pfa_estimates[i],
                "half_width": self.half_widths[i],
                "mean_true_reward": self.mean_true_rewards[i],
                "mean_true_reward_se": self.mean_true_reward_se[i],
            }


def false_acceptance_curve(prompts, n_values, trials: int, policy, reward_model, rng) -> FalseAcceptanceCurve:
    """Best-of-N false positives and winner quality over a prompt set.

    ``trials`` runs are made per prompt at each ``N``; counts are totals over
    the prompt set, so each point aggregates ``trials * len(prompts)`` runs.
    """
    prompts = list(prompts)
    n_values = [int(v) for v in n_values]
    if not n_values:
        raise ValueError("n_values must be non-empty")
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ValueError("n_values must be strictly ascending")
    if trials < 1 or not prompts:
        raise ValueError("need at least one prompt and one trial")
    streams = rng.spawn(len(n_values))
    runs = trials * len(prompts)
    fps, pfas, hws, means, ses = [], [], [], [], []
    for N, stream in zip(n_values, streams):
        fp = 0
        winners = []
        for prompt, child in zip(prompts, stream.spawn(len(prompts))):
            est, true, _ = _bon_trials(prompt, N, trials, policy, reward_model, child)
            fp += int(np.sum((est > 0) & (true < 0)))
            winners.append(true)
        w = np.concatenate(winners)
        p = fp / runs
        fps.append(fp)
        pfas.append(p)
        hws.append(_half_width(p, runs))
        means.append(float(w.mean()))
        ses.append(float(w.std(ddof=1) / math.sqrt(w.size)) if w.size > 1 else math.nan)
    return FalseAcceptanceCurve(n_values, pfas, fps, runs, hws, means, ses)
