"""Hard-prompt detection and guardrail thresholds from an empirical reward CDF."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def binomial_p_value(B: int, p_min: float, T: int) -> float:
    """``P(Bin(B, p_min) <= T)`` by exact summation of log-pmf terms.

    This is the lower-tail test for ``p_g`` against ``p_min``; evaluated at the
    boundary ``p_g = p_min`` it is the least favourable point of the
    composite null ``p_g >= p_min``.
    """
    if isinstance(B, bool) or isinstance(T, bool) or int(B) != B or int(T) != T:
        raise ValueError("B and T must be integers")
    B, T = int(B), int(T)
    if B < 0 or not 0 <= T <= B:
        raise ValueError(f"need 0 <= T <= B, got T={T}, B={B}")
    if not 0.0 < p_min < 1.0:
        raise ValueError("p_min must lie in (0, 1)")
    if T == B:
        return 1.0
    log_p, log_q = math.log(p_min), math.log1p(-p_min)
    log_b = math.lgamma(B + 1)
    terms = [log_b - math.lgamma(k + 1) - math.lgamma(B - k + 1) + k * log_p + (B - k) * log_q for k in range(T + 1)]
    top = max(terms)
    total = top + math.log(math.fsum(math.exp(t - top) for t in terms))
    return min(1.0, math.exp(total))


@dataclass
class HardPromptReport:
    prompt_id: int
    success_count: int
    trials: int
    p_value: float
    is_hard: bool
    scores: np.ndarray | None = field(default=None, repr=False)

    def as_row(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "success_count": self.success_count,
            "trials": self.trials,
            "p_value": self.p_value,
            "is_hard": int(self.is_hard),
        }


def binomial_test_prompt(prompt, policy, reward_model, B: int, p_min: float, alpha: float, rng) -> HardPromptReport:
    batch = policy.sample(prompt, B, rng)
    scores = np.asarray(reward_model.score(prompt, batch), dtype=float)
    t = int(np.sum(scores > 0))
    p = binomial_p_value(B, p_min, t)
    return HardPromptReport(int(prompt.id), t, B, p, p < alpha, scores)



def identify_hard_prompts(prompt_pool, policy, reward_model, B: int, p_min: float, alpha: float, rng: np.random.Generator, map_fn=map) -> list[HardPromptReport]:
    """Binomial-test every prompt in the pool and keep the scores of hard ones.

    Each prompt draws ``B`` responses from its own child stream of ``rng``.
    ``map_fn`` may be an order-preserving parallel map.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    prompts = list(prompt_pool)
    children = rng.spawn(len(prompts))
    reports = list(map_fn(lambda pc: binomial_test_prompt(pc[0], policy, reward_model, B, p_min, alpha, pc[1]), zip(prompts, children)))
    for r in reports:
        if not r.is_hard:
            r.scores = None
    return reports


def pooled_hard_scores(reports) -> np.ndarray:
    parts = [r.scores for r in reports if r.is_hard and r.scores is not None]
    return np.concatenate(parts) if parts else np.empty(0)


@dataclass(eq=False)
class EmpiricalCdf:
    """Right-continuous step CDF of a reward sample."""

    sorted_samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sorted_samples, dtype=float)
        if s.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if s.size > 1 and np.any(np.diff(s) < 0):
            raise ValueError("samples must be sorted")
        self.sorted_samples = s

    def __len__(self):
        return self.sorted_samples.size

    def __call__(self, r):
        """Fraction of samples ``<= r``."""
        n = self.sorted_samples.size
        if n == 0:
            raise ValueError("empty CDF")
        counts = np.searchsorted(self.sorted_samples, r, side="right")
        return counts / n if np.ndim(r) else float(counts) / n


def build_empirical_cdf(scores) -> EmpiricalCdf:
    s = np.asarray(scores, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("cannot build a CDF from no scores")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return EmpiricalCdf(np.sort(s))


def quantile(cdf: EmpiricalCdf, q: float) -> float:
    """Smallest sample ``s`` with ``F(s) >= q``; ``q = 0`` gives the minimum."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    s = cdf.sorted_samples
    n = s.size
    if n == 0:
        raise ValueError("empty CDF")
    if q == 0.0:
        return float(s[0])
    k = math.ceil(q * n)
    # guard against q*n landing just above an integer through rounding
    if k > 1 and (k - 1) / n >= q:
        k -= 1
    k = min(max(k, 1), n)
    return float(s[k - 1])


def threshold_for_n(cdf: EmpiricalCdf, N: int) -> float:
    """Guardrail threshold at total sample size ``N``.

    Chosen so the best of ``N`` hard-prompt draws clears it no more often than
    a single draw clears zero; never negative.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    f0 = cdf(0.0)
    return max(quantile(cdf, f0 ** (1.0 / N)), 0.0)


@dataclass
class ThresholdSchedule:
    n: int
    L: int
    taus: list[float]
    f0: float | None = None
    degenerate: bool = False

    def __post_init__(self):
        self.taus = [float(t) for t in self.taus]
        if self.n < 1 or self.L < 1:
            raise ValueError("n and L must be >= 1")
        if len(self.taus) != self.L:
            raise ValueError(f"schedule has {len(self.taus)} thresholds for L={self.L} loops")
        if any(t < 0 for t in self.taus):
            raise ValueError("thresholds must be non-negative")
        if any(b < a for a, b in zip(self.taus, self.taus[1:])):
            raise ValueError("thresholds must be non-decreasing")

    @classmethod
    def constant(cls, n: int, L: int, value: float = 0.0) -> ThresholdSchedule:
        return cls(n, L, [value] * L)

    def to_dict(self) -> dict:
        d = {"n": self.n, "L": self.L, "taus": list(self.taus)}
        if self.f0 is not None:
            d["f0"] = self.f0
        d["degenerate"] = self.degenerate
        return d

    @classmethod
    def from_dict(cls, d) -> ThresholdSchedule:
        return cls(int(d["n"]), int(d["L"]), list(d["taus"]), d.get("f0"), bool(d.get("degenerate", False)))


def build_schedule(cdf: EmpiricalCdf, n: int, L: int) -> ThresholdSchedule:
    if n < 1 or L < 1:
        raise ValueError("n and L must be >= 1")
    f0 = cdf(0.0)
    taus = [threshold_for_n(cdf, n * l) for l in range(1, L + 1)]
    # with nothing acceptable in the sample the thresholds collapse to max(sample, 0)
    return ThresholdSchedule(n, L, taus, f0=f0, degenerate=f0 == 1.0)


def write_schedule(path, schedule: ThresholdSchedule, extra: dict | None = None) -> None:
    doc = schedule.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_schedule(path) -> ThresholdSchedule:
    return ThresholdSchedule.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
