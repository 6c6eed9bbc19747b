"""Acceptability as binary classification, choice shares, and resampling bias."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimator import RewardModelParams, TrainingConfig, fit_mle, pack_observations

#: Marker written to reports in place of a ratio whose denominator is zero.
UNDEFINED = "undefined"


@dataclass(eq=False)
class BinaryInstance:
    prompt: object
    response: object
    label: int
    model_score: float
    oracle_label: int | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


@dataclass(frozen=True)
class ConfusionMetrics:
    """Counts and ratios; a ratio is ``None`` when its denominator is zero."""

    tp: int
    fp: int
    tn: int
    fn: int

    @staticmethod
    def _ratio(num, den):
        return num / den if den > 0 else None

    @property
    def precision(self):
        return self._ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self):
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def fpr(self):
        return self._ratio(self.fp, self.fp + self.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, predicted, actual) -> ConfusionMetrics:
        predicted = np.asarray(predicted, dtype=bool)
        actual = np.asarray(actual, dtype=bool)
        return cls(
            tp=int(np.sum(predicted & actual)),
            fp=int(np.sum(predicted & ~actual)),
            tn=int(np.sum(~predicted & ~actual)),
            fn=int(np.sum(~predicted & actual)),
        )

    def as_row(self) -> dict:
        def fmt(v):
            return UNDEFINED if v is None else v

        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "precision": fmt(self.precision),
            "recall": fmt(self.recall),
            "fpr": fmt(self.fpr),
        }


def binarize(dataset, score=None) -> list[BinaryInstance]:
    """Turn choice observations into labelled acceptability instances.

    A chosen candidate becomes one positive instance; choosing the outside
    option makes every candidate a negative instance. ``score`` is an optional
    ``(prompt, response) -> float`` used to fill ``model_score``. The oracle
    label (sign of the true normalized reward) rides along for reporting.
    """
    out = []
    for obs in dataset:
        if obs.chosen > 0:
            picks = [(obs.candidates[obs.chosen - 1], 1)]
        else:
            picks = [(c, 0) for c in obs.candidates]
        for resp, label in picks:
            s = float("nan") if score is None else float(score(obs.prompt, resp))
            out.append(BinaryInstance(obs.prompt, resp, label, s, int(resp.true_normalized_reward > 0)))
    return out


def confusion_metrics(instances, threshold: float = 0.0, oracle: bool = False) -> ConfusionMetrics:
    """Classify ``model_score > threshold`` as acceptable and tally against the labels.

    ``oracle=True`` scores against the true reward sign instead of the
    labeller's choice.
    """
    instances = list(instances)
    if not instances:
        raise ValueError("no instances to evaluate")
    scores = np.array([i.model_score for i in instances], dtype=float)
    if np.isnan(scores).any():
        raise ValueError("instances carry no model scores")
    if oracle:
        if any(i.oracle_label is None for i in instances):
            raise ValueError("oracle labels are not available")
        labels = np.array([i.oracle_label for i in instances], dtype=bool)
    else:
        labels = np.array([i.label for i in instances], dtype=bool)
    return ConfusionMetrics.from_predictions(scores > threshold, labels)


def choice_proportions(dataset) -> np.ndarray:
    """Observed share of each choice index, outside option first."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    sizes = {len(o.candidates) for o in dataset}
    if len(sizes) != 1:
        raise ValueError(f"choice sets have mixed sizes {sorted(sizes)}; use choice_proportions_by_size")
    (j,) = sizes
    counts = np.bincount([o.chosen for o in dataset], minlength=j + 1).astype(float)
    q = counts / len(dataset)
    return q


def choice_proportions_by_size(dataset) -> dict[int, np.ndarray]:
    groups: dict[int, list] = {}
    for obs in dataset:
        groups.setdefault(len(obs.candidates), []).append(obs)
    return {j: choice_proportions(g) for j, g in sorted(groups.items())}


def manski_bias(h, q, i: int) -> float:
    """Reward shift for alternative ``i`` when fitting on shares ``h`` instead of ``q``."""
    h = np.asarray(h, dtype=float)
    q = np.asarray(q, dtype=float)
    for idx in (0, i):
        if h[idx] <= 0 or q[idx] <= 0:
            raise ValueError(f"proportions at index {idx} must be strictly positive")
    # written as A - B so swapping h and q negates the result exactly
    return (math.log(h[i]) + math.log(q[0])) - (math.log(q[i]) + math.log(h[0]))


@dataclass
class ResamplingBiasReport:
    observed: np.ndarray
    target: np.ndarray
    achieved: np.ndarray
    kept_per_class: list[int]
    predicted_bias: list[float]
    measured_shift: float
    shift_by_position: list[float]
    shift_spread: float
    unbiased_params: RewardModelParams
    biased_params: RewardModelParams


def resample_by_choice(dataset, target_h, rng: np.random.Generator):
    """Down-sample each choice class so the shares approach ``target_h``.

    A class is kept in proportion to ``H(i) / Q(i)``, with the largest ratio
    kept whole, so a target equal to the observed shares returns the dataset
    unchanged.
    """
    dataset = list(dataset)
    q = choice_proportions(dataset)
    h = np.asarray(target_h, dtype=float)
    if h.shape != q.shape:
        raise ValueError(f"target has {h.size} shares, dataset has {q.size} classes")
    if np.any(h < 0) or not math.isclose(h.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("target shares must be a distribution")
    active = q > 0
    ratio = np.zeros_like(q)
    ratio[active] = h[active] / q[active]
    ratio /= ratio.max()
    by_class: dict[int, list[int]] = {}
    for idx, obs in enumerate(dataset):
        by_class.setdefault(obs.chosen, []).append(idx)
    keep: list[int] = []
    kept = []
    for c in range(q.size):
        members = by_class.get(c, [])
        n_keep = int(math.floor(ratio[c] * len(members) + 1e-9))
        if h[c] > 0 and n_keep == 0:
            raise ValueError(f"resampled class {c} is empty")
        kept.append(n_keep)
        if n_keep == len(members):
            keep.extend(members)
        else:
            keep.extend(sorted(rng.choice(members, size=n_keep, replace=False).tolist()))
    keep.sort()
    return [dataset[i] for i in keep], kept


def resampling_bias_experiment(dataset, target_h, config: TrainingConfig, rng: np.random.Generator, heldout=None, base: RewardModelParams | None = None) -> ResamplingBiasReport:
    """Refit on a choice-resampled dataset and measure the reward shift.

    The shift is averaged over candidate responses in ``heldout`` (the input
    dataset itself when omitted) and compared with :func:`manski_bias`.
    ``base`` may carry parameters already fitted on ``dataset`` with ``config``.
    """
    dataset = list(dataset)
    q = choice_proportions(dataset)
    resampled, kept = resample_by_choice(dataset, target_h, rng)
    achieved = choice_proportions(resampled)
    if base is None:
        base = fit_mle(dataset, config).params
    biased = fit_mle(resampled, config).params

    packed = pack_observations(heldout if heldout is not None else dataset)
    delta = packed.features @ (biased.weights - base.weights) + (biased.bias - base.bias)
    cells = delta[packed.mask]
    by_pos = [float(delta[:, j][packed.mask[:, j]].mean()) for j in range(packed.mask.shape[1])]
    predicted = [manski_bias(achieved, q, i) if achieved[i] > 0 and q[i] > 0 else float("nan") for i in range(1, q.size)]
    return ResamplingBiasReport(
        observed=q,
        target=np.asarray(target_h, dtype=float),
        achieved=achieved,
        kept_per_class=kept,
        predicted_bias=predicted,
        measured_shift=float(cells.mean()),
        shift_by_position=by_pos,
        shift_spread=float(cells.std()),
        unbiased_params=base,
        biased_params=biased,
    )
