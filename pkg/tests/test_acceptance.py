"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

Lines are collected into the "acceptance criteria" section of the pytest
terminal summary.
"""

import csv
import math

import numpy as np
import pytest
from helpers import FeatureScorer, StubPolicy, enumerate_false_acceptance
from scipy.stats import spearmanr

from outside_option.calibration import ThresholdSchedule, build_empirical_cdf, quantile, threshold_for_n
from outside_option.core import choice_probabilities
from outside_option.estimator import RewardModelParams, TrainingConfig, fit_mle, log_likelihood_gradient, pack_observations, total_log_likelihood
from outside_option.evaluation import ConfusionMetrics, choice_proportions, resampling_bias_experiment
from outside_option.inference import Mode, best_of_mini_n, estimate_false_acceptance, false_acceptance_curve, false_acceptance_decomposition
from outside_option.models import LinearRewardModel
from outside_option.world import (
    CategoricalPolicy,
    ChoiceObservation,
    SyntheticPolicy,
    SyntheticPrompt,
    SyntheticResponse,
    WorldConfig,
    build_choice_dataset,
    generate_prompt,
    simulate_labeller_choice,
)

WORLD = WorldConfig()


@pytest.fixture(scope="module")
def recovery():
    """50,000 training observations, 5,000 held out, and the fitted model."""
    rng = np.random.default_rng(np.random.SeedSequence(2024))
    train_rng, test_rng = rng.spawn(2)
    train = build_choice_dataset(WORLD, 50_000, train_rng)
    heldout = build_choice_dataset(WORLD, 5_000, test_rng)
    result = fit_mle(train, TrainingConfig())
    return train, heldout, result


def heldout_rewards(params, heldout):
    packed = pack_observations(heldout)
    est = (packed.features @ params.weights + params.bias)[packed.mask]
    true = np.array([c.true_normalized_reward for o in heldout for c in o.candidates])
    return est, true


def test_criterion_01_metric_formulas(criterion_report):
    m = ConfusionMetrics(tp=1539, fp=210, tn=177, fn=74)
    got = [100 * m.precision, 100 * m.recall, 100 * m.fpr]
    ref = [88.0, 95.4, 54.1]
    ok = all(abs(g - r) <= 0.5 for g, r in zip(got, ref))
    criterion_report(1, "metric formulas", ok, "precision/recall/FPR = " + "/".join(f"{g:.2f}" for g in got) + " vs 88.0/95.4/54.1 (tol 0.5)")
    assert ok


def test_criterion_02_gumbel_matches_logit(criterion_report):
    rng = np.random.default_rng(7)
    picks = simulate_labeller_choice([1.0, -1.0], rng, size=10**6)
    freq = np.bincount(picks, minlength=3) / 10**6
    tv = 0.5 * float(np.abs(freq - choice_probabilities([1.0, -1.0])).sum())
    ok = tv < 0.005
    criterion_report(2, "Gumbel-max vs logit", ok, f"TV = {tv:.5f} over 1e6 draws (limit 0.005)")
    assert ok


def test_criterion_03_gradient(criterion_report):
    rng = np.random.default_rng(3)
    worst = 0.0
    h = 1e-5
    for _ in range(20):
        dim = int(rng.integers(1, 6))
        data = []
        for _ in range(int(rng.integers(1, 12))):
            j = int(rng.integers(1, 4))
            cands = [SyntheticResponse(rng.normal(size=dim), 0.0, 0.0) for _ in range(j)]
            data.append(ChoiceObservation(SyntheticPrompt(0, np.zeros(1), 0.0, 0.0), cands, int(rng.integers(0, j + 1))))
        theta = rng.normal(size=dim + 1)
        analytic = log_likelihood_gradient(RewardModelParams.from_vector(theta), data)
        fd = np.empty_like(theta)
        for k in range(theta.size):
            e = np.zeros_like(theta)
            e[k] = h
            fd[k] = (
                total_log_likelihood(RewardModelParams.from_vector(theta + e), data)
                - total_log_likelihood(RewardModelParams.from_vector(theta - e), data)
            ) / (2 * h)
        worst = max(worst, float(np.linalg.norm(analytic - fd) / np.linalg.norm(fd)))
    ok = worst <= 1e-6
    criterion_report(3, "gradient vs finite differences", ok, f"worst relative error {worst:.2e} over 20 instances (limit 1e-6)")
    assert ok


@pytest.mark.slow
def test_criterion_04_recovery(recovery, criterion_report):
    _, heldout, result = recovery
    est, true = heldout_rewards(result.params, heldout)
    r = float(np.corrcoef(est, true)[0, 1])
    big = np.abs(true) > 0.25
    agree = float(np.mean(np.sign(est[big]) == np.sign(true[big])))
    rmse = float(np.sqrt(np.mean((est - true) ** 2)))
    ok = result.converged and r >= 0.95 and agree >= 0.90
    criterion_report(
        4, "identification and recovery", ok,
        f"Pearson r = {r:.4f} (>= 0.95), sign agreement = {agree:.4f} on {int(big.sum())} responses (>= 0.90), RMSE {rmse:.3f}",
    )
    assert ok


@pytest.mark.slow
def test_criterion_05_resampling_bias(recovery, criterion_report):
    train, heldout, result = recovery
    q = choice_proportions(train)
    halved = np.array([q[0] / 2, *q[1:]])
    halved /= halved.sum()
    rng = np.random.default_rng(11)
    rep = resampling_bias_experiment(train, halved, TrainingConfig(), rng, heldout=heldout, base=result.params)
    predicted = rep.predicted_bias
    err = max(abs(s - p) for s, p in zip(rep.shift_by_position, predicted))
    ident = resampling_bias_experiment(train, q, TrainingConfig(), rng, heldout=heldout, base=result.params)
    ok = err <= 0.1 and abs(rep.measured_shift - np.mean(predicted)) <= 0.1 and abs(ident.measured_shift) < 0.05
    criterion_report(
        5, "resampling bias", ok,
        f"halved outside option: shift {rep.measured_shift:.4f} vs closed form {np.mean(predicted):.4f} "
        f"(max per-position gap {err:.4f}, tol 0.1); identity shift {ident.measured_shift:.2e} (< 0.05)",
    )
    assert ok


@pytest.mark.slow
def test_criterion_06_bon_failure_on_hard_prompts(recovery, criterion_report):
    _, _, result = recovery
    rng = np.random.default_rng(np.random.SeedSequence(606))
    prompt_rng, trial_rng = rng.spawn(2)
    lo, hi = math.log(19.0), WORLD.difficulty_range[1]  # p_g <= 0.05
    prompts = []
    for i, child in enumerate(prompt_rng.spawn(100)):
        prompts.append(generate_prompt(WORLD, child.uniform(lo, hi), child, prompt_id=i))
    assert all(p.acceptance_rate <= 0.05 for p in prompts)
    n_values = [1, 2, 4, 8, 16, 32]
    curve = false_acceptance_curve(prompts, n_values, 100, SyntheticPolicy(WORLD), LinearRewardModel(result.params), trial_rng)
    rho = float(spearmanr(n_values, curve.fp_counts).statistic)
    ratio = curve.fp_counts[-1] / curve.fp_counts[0] if curve.fp_counts[0] else math.inf
    ok = curve.trials == 10_000 and rho >= 0.9 and curve.fp_counts[-1] >= 1.5 * curve.fp_counts[0] and curve.fp_counts[-1] > 0
    criterion_report(
        6, "best-of-N failure mode", ok,
        f"FP counts {curve.fp_counts} at N={n_values} ({curve.trials} trials/point); Spearman {rho:.3f} (>= 0.9); N=32/N=1 ratio {ratio:.2f} (>= 1.5)",
    )
    assert ok


def test_criterion_07_false_acceptance_oracle(criterion_report):
    probs, true, est = [0.3, 0.5, 0.2], [1.0, -0.5, -1.0], [0.8, 0.9, -0.2]
    policy = CategoricalPolicy(probs, true)
    model = LinearRewardModel(RewardModelParams(np.array(est), 0.0))
    exact = enumerate_false_acceptance(probs, true, est, 2)
    mc = estimate_false_acceptance(None, 2, 10**5, policy, model, np.random.default_rng(1))
    dec = false_acceptance_decomposition(None, 2, 10**5, policy, model, np.random.default_rng(2))
    gap = abs(mc.probability - exact)
    recomb = abs(dec.recombined - dec.probability)
    ok = gap <= 3 * mc.half_width and recomb <= 1e-12 and dec.tv_distance < 0.02
    criterion_report(
        7, "false-acceptance oracle", ok,
        f"MC {mc.probability:.5f} vs exact {exact:.5f} (gap {gap:.5f} <= 3 x {mc.half_width:.5f}); "
        f"|sum a*q - P| = {recomb:.1e}; TV to Bin(2, {dec.acceptance_rate:.2f}) = {dec.tv_distance:.4f} (< 0.02)",
    )
    assert ok


def test_criterion_08_threshold_calibration(criterion_report):
    rng = np.random.default_rng(8)
    failures = 0
    for _ in range(100):
        size = int(rng.integers(5, 400))
        sample = rng.normal(loc=rng.uniform(-2, 0.5), scale=rng.uniform(0.1, 2), size=size)
        cdf = build_empirical_cdf(sample)
        f0 = cdf(0.0)
        taus = [threshold_for_n(cdf, n) for n in range(1, 65)]
        if any(t < 0 for t in taus) or any(b < a for a, b in zip(taus, taus[1:])):
            failures += 1
            continue
        if any(cdf(t) ** n < f0 - 1.0 / size for n, t in enumerate(taus, start=1)):
            failures += 1
    example = build_empirical_cdf([-2.0, -1.0, -0.5, 1.0])
    hand = threshold_for_n(example, 2)
    q = quantile(example, 0.75**0.5)
    ok = failures == 0 and hand == 1.0 and q == 1.0
    criterion_report(8, "threshold calibration", ok, f"{100 - failures}/100 random sample sets satisfy all properties; hand example tau_2 = {hand}")
    assert ok


def read_results(run_dir):
    with open(run_dir / "results.csv", newline="", encoding="utf-8") as fh:
        return {r["mode"]: r for r in csv.DictReader(fh)}


@pytest.mark.slow
def test_criterion_09_guardrail(default_run, criterion_report):
    rows = read_results(default_run)
    bon, g = rows["standard_bon"], rows["guardrail"]
    fp_bon, fp_g = int(bon["fp"]), int(g["fp"])
    r_bon, r_g = float(bon["mean_true_reward"]), float(g["mean_true_reward"])
    reduction = 1 - fp_g / fp_bon if fp_bon else float("nan")
    drop = (r_bon - r_g) / abs(r_bon)
    calls = sum(int(g[k]) for k in ("tp", "fp", "tn", "fn"))
    ok = fp_bon > 0 and reduction >= 0.5 and drop <= 0.10 and g["N"] == "32" and (g["n"], g["L"]) == ("16", "2")
    criterion_report(
        9, "guardrail effectiveness", ok,
        f"FP {fp_bon} -> {fp_g} ({100 * reduction:.1f}% reduction, >= 50%); mean true reward {r_bon:.4f} -> {r_g:.4f} "
        f"({100 * drop:.1f}% drop, <= 10%); 1000 prompts, {calls} calls",
    )
    assert ok


@pytest.mark.slow
def test_criterion_10_accelerator(default_run, criterion_report):
    rows = read_results(default_run)
    bon, a = rows["standard_bon"], rows["accelerator"]
    g_bon, g_a = float(bon["mean_generations"]), float(a["mean_generations"])
    saving = 1 - g_a / g_bon
    gap = 100 * abs(float(a["recall"]) - float(bon["recall"]))
    ok = saving >= 0.20 and gap <= 1.5
    criterion_report(
        10, "accelerator effectiveness", ok,
        f"mean generations {g_bon:.2f} -> {g_a:.2f} ({100 * saving:.1f}% fewer, >= 20%); recall gap {gap:.2f} points (<= 1.5)",
    )
    assert ok


def test_criterion_11_algorithm_traces(criterion_report):
    sched = ThresholdSchedule(16, 2, [0.38, 0.748])
    immediate = best_of_mini_n(None, 16, 2, Mode.GUARDRAIL, sched, StubPolicy([[-1.0] * 15 + [0.48], [0.0] * 16]), FeatureScorer(), None)
    exhausted = best_of_mini_n(None, 16, 2, Mode.GUARDRAIL, sched, StubPolicy([[-1.0] * 16, [-1.0] * 16]), FeatureScorer(), None)
    loops = [[0.3] + [-1.0] * 15, [-1.0] * 15 + [0.6]]
    traced = best_of_mini_n(None, 16, 2, Mode.GUARDRAIL, sched, StubPolicy(loops), FeatureScorer(), None)
    fast = best_of_mini_n(None, 16, 2, Mode.ACCELERATOR, None, StubPolicy(loops), FeatureScorer(), None)

    def key(o):
        return (o.loops_used, o.found_acceptable, o.generations_consumed)

    got = [key(immediate), key(exhausted), key(traced), key(fast)]
    want = [(1, True, 16), (2, False, 32), (2, False, 32), (1, True, 16)]
    ok = got == want and exhausted.abstained and exhausted.winner is None
    criterion_report(11, "Algorithm trace conformance", ok, f"(loops, found, generations) = {got}; exhaustion abstained = {exhausted.abstained}")
    assert ok
