"""End-to-end experiment stages: generate data, fit, calibrate, run.

Every stochastic stage draws from its own stream of the master seed, so a
stage's outputs depend only on the config, the seed and the inputs it reads.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import (
    ThresholdSchedule,
    build_empirical_cdf,
    build_schedule,
    identify_hard_prompts,
    pooled_hard_scores,
    read_schedule,
    write_schedule,
)
from .estimator import TrainingConfig, fit_mle, predict_reward, read_fit, total_log_likelihood, write_fit
from .evaluation import ConfusionMetrics, binarize, choice_proportions, confusion_metrics
from .inference import Mode, ReplayPolicy, best_of_mini_n, best_of_n, false_acceptance_curve
from .models import LinearRewardModel
from .world import (
    SyntheticPolicy,
    WorldConfig,
    build_choice_dataset,
    read_dataset,
    sample_prompts,
    write_dataset,
    write_world_config,
)

log = logging.getLogger(__name__)

SCHEMA = "outside-option-experiment/1"

# stream keys under the master seed
STREAM_DATA, STREAM_POOL, STREAM_CALIBRATE, STREAM_EVAL_PROMPTS, STREAM_EVAL_TRIALS, STREAM_CURVE = range(1, 7)


class UsageError(ValueError):
    pass


class DataError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    pass


def stream(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class DataSettings:
    num_prompts: int = 12_000
    train_size: int = 10_000


@dataclass
class CalibrationSettings:
    B: int = 150
    p_min: float = 0.05
    alpha: float = 0.01
    pool_size: int = 500


@dataclass
class InferenceSettings:
    n: int = 16
    L: int = 2
    n_values: list[int] = field(default_factory=lambda: [1, 2, 4, 8, 16, 32])
    eval_prompts: int = 1_000
    trials_per_prompt: int = 2
    curve_trials_per_prompt: int = 2
    modes: list[str] = field(default_factory=lambda: ["guardrail", "accelerator"])
    abstain: bool | None = None
    hard_acceptance_rate: float = 0.05


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    world: WorldConfig = field(default_factory=WorldConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data: DataSettings = field(default_factory=DataSettings)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    inference: InferenceSettings = field(default_factory=InferenceSettings)
    schema: str = SCHEMA

    def __post_init__(self):
        if self.schema != SCHEMA:
            raise UsageError(f"unsupported config schema {self.schema!r}; expected {SCHEMA!r}")
        if not 0 <= self.seed < 2**64:
            raise UsageError("seed must be an unsigned 64-bit integer")
        if self.world.rng_seed != self.seed:
            self.world = WorldConfig.from_dict({**self.world.to_dict(), "rng_seed": self.seed})
        d, c, inf = self.data, self.calibration, self.inference
        if d.num_prompts < 1:
            raise UsageError("data.num_prompts must be >= 1")
        if not 1 <= d.train_size <= d.num_prompts:
            raise UsageError("data.train_size must lie in 1..num_prompts")
        if c.B < 1 or c.pool_size < 1 or not 0 < c.p_min < 1 or not 0 < c.alpha < 1:
            raise UsageError("invalid calibration settings")
        if inf.n < 1 or inf.L < 1 or inf.eval_prompts < 1 or inf.trials_per_prompt < 1 or inf.curve_trials_per_prompt < 1:
            raise UsageError("invalid inference settings")
        if not inf.n_values or sorted(set(inf.n_values)) != list(inf.n_values):
            raise UsageError("inference.n_values must be strictly ascending")
        if inf.n * inf.L != max(inf.n_values):
            raise UsageError(f"n*L = {inf.n * inf.L} must equal the largest N ({max(inf.n_values)})")
        for m in inf.modes:
            if m not in (Mode.GUARDRAIL.value, Mode.ACCELERATOR.value):
                raise UsageError(f"unknown mode {m!r}")

    @property
    def budget(self) -> int:
        return self.inference.n * self.inference.L

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "world": self.world.to_dict(),
            "training": self.training.to_dict(),
            "data": asdict(self.data),
            "calibration": asdict(self.calibration),
            "inference": asdict(self.inference),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        doc = dict(doc)
        try:
            sections = {
                "world": WorldConfig.from_dict(doc.pop("world", {})),
                "training": TrainingConfig.from_dict(doc.pop("training", {})),
                "data": DataSettings(**doc.pop("data", {})),
                "calibration": CalibrationSettings(**doc.pop("calibration", {})),
                "inference": InferenceSettings(**doc.pop("inference", {})),
            }
            return cls(**doc, **sections)
        except TypeError as exc:
            raise UsageError(f"bad config: {exc}") from exc
        except UsageError:
            raise
        except ValueError as exc:
            raise UsageError(f"bad config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(doc)


# ---------------------------------------------------------------------------
# Output bookkeeping


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Tracks the files and stage timings of one CLI invocation."""

    def __init__(self, config: ExperimentConfig, out: Path, command: str, threads: int = 1):
        self.config = config
        self.out = Path(out)
        self.command = command
        self.threads = max(1, int(threads))
        self.files: list[Path] = []
        self.durations: dict[str, float] = {}
        self.warnings: list[str] = []

    def prepare(self):
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataError(f"cannot create output directory {self.out}: {exc}") from exc

    def path(self, name: str) -> Path:
        return self.out / name

    def record(self, path: Path):
        self.files.append(Path(path))

    def map(self, fn, items):
        if self.threads == 1:
            return map(fn, items)
        pool = ThreadPoolExecutor(max_workers=self.threads)
        try:
            return list(pool.map(fn, items))
        finally:
            pool.shutdown()

    def warn(self, message: str):
        log.warning(message)
        self.warnings.append(message)

    def write_manifest(self, status: str = "ok", error: str | None = None) -> Path:
        doc = {
            "tool": "outside-option",
            "version": __version__,
            "command": self.command,
            "seed": self.config.seed,
            "status": status,
            "config": self.config.to_dict(),
            "files": [
                {"path": p.relative_to(self.out).as_posix() if p.is_relative_to(self.out) else str(p), "sha256": _sha256(p)}
                for p in self.files
                if p.exists()
            ],
            "stage_durations_s": {k: round(v, 3) for k, v in self.durations.items()},
            "warnings": self.warnings,
        }
        if error:
            doc["error"] = error
        path = self.path("manifest.json")
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        return path


def _write_csv(path: Path, rows, columns):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in columns})


def _fmt(v):
    if isinstance(v, float):
        return "undefined" if math.isnan(v) else repr(v)
    return "undefined" if v is None else v


def _json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Stages


def gen_data(run: Run) -> None:
    cfg = run.config
    t0 = time.perf_counter()
    dataset = build_choice_dataset(cfg.world, cfg.data.num_prompts, stream(cfg.seed, STREAM_DATA))
    train, heldout = dataset[: cfg.data.train_size], dataset[cfg.data.train_size:]
    for name, part in (("train.jsonl", train), ("heldout.jsonl", heldout)):
        p = run.path(name)
        write_dataset(p, part)
        run.record(p)
    p = run.path("world.json")
    write_world_config(p, cfg.world)
    run.record(p)
    run.durations["gen-data"] = time.perf_counter() - t0
    log.info("wrote %d training and %d held-out observations", len(train), len(heldout))


def _load_dataset(path: Path):
    if not path.exists():
        raise DataError(f"dataset {path} does not exist")
    try:
        return read_dataset(path)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def fit(run: Run, dataset_path: Path | None = None) -> None:
    cfg = run.config
    t0 = time.perf_counter()
    train_path = Path(dataset_path) if dataset_path else run.path("train.jsonl")
    train = _load_dataset(train_path)
    if not train:
        raise DataError(f"dataset {train_path} is empty")
    heldout_path = train_path.with_name("heldout.jsonl")
    heldout = _load_dataset(heldout_path) if heldout_path.exists() and heldout_path != train_path else []

    result = fit_mle(train, cfg.training)
    extra = {"train_observations": len(train), "train_log_likelihood": result.final_log_likelihood}
    try:
        extra["train_choice_proportions"] = choice_proportions(train).tolist()
    except ValueError:
        pass
    if heldout:
        extra["heldout_observations"] = len(heldout)
        extra["heldout_log_likelihood"] = total_log_likelihood(result.params, heldout)
    fit_path = run.path("fit.json")
    write_fit(fit_path, result, cfg.training, cfg.seed, extra)
    run.record(fit_path)

    if heldout:
        instances = binarize(heldout, lambda prompt, resp: predict_reward(result.params, prompt, resp))
        rows = []
        for label_source, oracle in (("observed_choice", False), ("oracle_sign", True)):
            m = confusion_metrics(instances, 0.0, oracle=oracle)
            rows.append({"method": "reward_model", "labels": label_source, "N": 1, "threshold": 0.0, **m.as_row()})
        p = run.path("heldout_metrics.csv")
        _write_csv(p, rows, ["method", "labels", "N", "threshold", "tp", "fp", "tn", "fn", "precision", "recall", "fpr"])
        run.record(p)
    run.durations["fit"] = time.perf_counter() - t0
    log.info("fit: converged=%s after %d iterations, |grad|=%.3g", result.converged, result.iterations_used, result.gradient_norm)
    if not result.converged:
        raise ConvergenceError(f"fit did not converge in {cfg.training.max_iterations} iterations (|grad|={result.gradient_norm:.3g})")


def _load_params(path: Path):
    if not path.exists():
        raise DataError(f"parameter file {path} does not exist")
    try:
        return read_fit(path)[0]
    except (ValueError, KeyError) as exc:
        raise DataError(f"cannot read parameters from {path}: {exc}") from exc


def calibrate(run: Run, params_path: Path | None = None) -> None:
    cfg = run.config
    t0 = time.perf_counter()
    params = _load_params(Path(params_path) if params_path else run.path("fit.json"))
    model = LinearRewardModel(params)
    policy = SyntheticPolicy(cfg.world)
    c = cfg.calibration
    pool = sample_prompts(cfg.world, c.pool_size, stream(cfg.seed, STREAM_POOL))
    reports = identify_hard_prompts(pool, policy, model, c.B, c.p_min, c.alpha, stream(cfg.seed, STREAM_CALIBRATE), map_fn=run.map)
    scores = pooled_hard_scores(reports)
    n, L = cfg.inference.n, cfg.inference.L
    hard = sum(r.is_hard for r in reports)
    if scores.size == 0:
        run.warn("no hard prompts found in the calibration pool; falling back to an all-zero schedule")
        schedule = ThresholdSchedule.constant(n, L)
        fallback = True
    else:
        schedule = build_schedule(build_empirical_cdf(scores), n, L)
        fallback = False
        if schedule.degenerate:
            run.warn("no hard-prompt score exceeds zero; thresholds collapse to max(sample, 0)")
    p = run.path("schedule.json")
    write_schedule(p, schedule, {"seed": cfg.seed, "hard_prompts": hard, "pool_size": len(pool), "fallback": fallback})
    run.record(p)
    p = run.path("hard_prompts.csv")
    _write_csv(p, [r.as_row() for r in reports], ["prompt_id", "success_count", "trials", "p_value", "is_hard"])
    run.record(p)
    run.durations["calibrate"] = time.perf_counter() - t0
    log.info("calibrate: %d/%d hard prompts, taus=%s", hard, len(pool), schedule.taus)


def _load_schedule(path: Path) -> ThresholdSchedule:
    if not path.exists():
        raise DataError(f"schedule file {path} does not exist")
    try:
        return read_schedule(path)
    except (ValueError, KeyError) as exc:
        raise DataError(f"cannot read schedule from {path}: {exc}") from exc


RESULT_COLUMNS = [
    "mode", "N", "n", "L", "tp", "fp", "tn", "fn", "precision", "recall", "fpr",
    "mean_true_reward", "mean_generations", "abstain_count",
]
CURVE_COLUMNS = ["prompt_set", "N", "trials", "fp_count", "pfa", "half_width", "mean_true_reward", "mean_true_reward_se"]


def evaluate_modes(prompts, policy, model, schedule, n, L, trials, modes, rng, abstain=None, map_fn=map):
    """Run best-of-N and each loop mode on common responses.

    For every prompt and trial, ``n * L`` responses are drawn once and replayed
    to each method. Returns ``{mode: [InferenceOutcome, ...]}``.
    """
    budget = n * L
    children = rng.spawn(len(prompts))

    def one_prompt(args):
        prompt, child = args
        out = {m: [] for m in [Mode.STANDARD_BON, *modes]}
        for trial_rng in child.spawn(trials):
            batch = policy.sample(prompt, budget, trial_rng)
            out[Mode.STANDARD_BON].append(best_of_n(prompt, budget, ReplayPolicy(batch), model, None))
            for m in modes:
                sched = schedule if m is Mode.GUARDRAIL else None
                out[m].append(best_of_mini_n(prompt, n, L, m, sched, ReplayPolicy(batch), model, None, abstain=abstain))
        return out

    merged = {m: [] for m in [Mode.STANDARD_BON, *modes]}
    for part in map_fn(one_prompt, list(zip(prompts, children))):
        for m, outs in part.items():
            merged[m].extend(outs)
    return merged


def summarize_outcomes(mode: Mode, outcomes, n: int, L: int) -> dict:
    metrics = ConfusionMetrics.from_predictions(
        [o.predicted_acceptable for o in outcomes], [o.truly_acceptable for o in outcomes]
    )
    is_bon = mode is Mode.STANDARD_BON
    return {
        "mode": mode.value,
        "N": n * L,
        "n": n * L if is_bon else n,
        "L": 1 if is_bon else L,
        **metrics.as_row(),
        "mean_true_reward": math.fsum(o.true_reward for o in outcomes) / len(outcomes),
        "mean_generations": math.fsum(o.generations_consumed for o in outcomes) / len(outcomes),
        "abstain_count": sum(o.abstained for o in outcomes),
    }


def run_inference(run: Run, params_path: Path | None = None, schedule_path: Path | None = None, figures: bool = True, traces: bool = False) -> None:
    cfg = run.config
    t0 = time.perf_counter()
    params = _load_params(Path(params_path) if params_path else run.path("fit.json"))
    inf = cfg.inference
    modes = [Mode(m) for m in inf.modes]
    schedule = None
    if Mode.GUARDRAIL in modes:
        schedule = _load_schedule(Path(schedule_path) if schedule_path else run.path("schedule.json"))
        if schedule.n != inf.n or schedule.L != inf.L:
            raise DataError(f"schedule is for n={schedule.n}, L={schedule.L}; config wants n={inf.n}, L={inf.L}")
    model = LinearRewardModel(params)
    policy = SyntheticPolicy(cfg.world)
    prompts = sample_prompts(cfg.world, inf.eval_prompts, stream(cfg.seed, STREAM_EVAL_PROMPTS))

    outcomes = evaluate_modes(
        prompts, policy, model, schedule, inf.n, inf.L, inf.trials_per_prompt, modes,
        stream(cfg.seed, STREAM_EVAL_TRIALS), abstain=inf.abstain, map_fn=run.map,
    )
    rows = [summarize_outcomes(m, outs, inf.n, inf.L) for m, outs in outcomes.items()]
    p = run.path("results.csv")
    _write_csv(p, rows, RESULT_COLUMNS)
    run.record(p)

    if traces:
        p = run.path("traces.jsonl")
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            for m, outs in outcomes.items():
                for i, o in enumerate(outs):
                    fh.write(json.dumps({
                        "mode": m.value, "prompt_id": prompts[i // inf.trials_per_prompt].id,
                        "trial": i % inf.trials_per_prompt, "loops_used": o.loops_used,
                        "generations": o.generations_consumed, "found_acceptable": o.found_acceptable,
                        "abstained": o.abstained, "estimated_reward": o.estimated_reward,
                        "true_reward": o.true_reward, "running_max": o.running_max, "thresholds": o.thresholds,
                    }) + "\n")
        run.record(p)

    curve_rng = stream(cfg.seed, STREAM_CURVE)
    all_rng, hard_rng = curve_rng.spawn(2)
    hard = [pr for pr in prompts if pr.acceptance_rate <= inf.hard_acceptance_rate]
    curve_rows = []
    curves = {}
    for name, subset, rng in (("all", prompts, all_rng), ("hard", hard, hard_rng)):
        if not subset:
            run.warn(f"prompt set {name!r} is empty; no curve emitted")
            continue
        curve = false_acceptance_curve(subset, inf.n_values, inf.curve_trials_per_prompt, policy, model, rng)
        curves[name] = [dict(r, prompt_set=name) for r in curve.rows()]
        curve_rows.extend(curves[name])
    p = run.path("bon_curve.csv")
    _write_csv(p, curve_rows, CURVE_COLUMNS)
    run.record(p)

    if figures:
        from .figures import plot_bon_failure, plot_mode_comparison

        if "all" in curves:
            p = run.path("fig_bon_failure.png")
            plot_bon_failure(curves["all"], p)
            run.record(p)
        if "hard" in curves:
            p = run.path("fig_bon_failure_hard.png")
            plot_bon_failure(curves["hard"], p, title="Best-of-N on hard prompts")
            run.record(p)
        by_mode = {r["mode"]: r for r in rows}
        bon = by_mode[Mode.STANDARD_BON.value]
        if Mode.GUARDRAIL.value in by_mode:
            p = run.path("fig_guardrail.png")
            plot_mode_comparison(
                [bon, by_mode[Mode.GUARDRAIL.value]], p,
                [("fp", "false positive count"), ("mean_true_reward", "mean true reward")],
                "Alignment guardrail vs best-of-N",
            )
            run.record(p)
        if Mode.ACCELERATOR.value in by_mode:
            p = run.path("fig_accelerator.png")
            plot_mode_comparison(
                [bon, by_mode[Mode.ACCELERATOR.value]], p,
                [("mean_generations", "mean generations"), ("recall", "recall")],
                "Inference accelerator vs best-of-N",
            )
            run.record(p)
    run.durations["run"] = time.perf_counter() - t0
    for r in rows:
        log.info("%s: fp=%s recall=%s mean_reward=%.4f generations=%.2f", r["mode"], r["fp"], r["recall"], r["mean_true_reward"], r["mean_generations"])
