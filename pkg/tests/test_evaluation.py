import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from outside_option.estimator import TrainingConfig
from outside_option.evaluation import (
    UNDEFINED,
    BinaryInstance,
    ConfusionMetrics,
    binarize,
    choice_proportions,
    choice_proportions_by_size,
    confusion_metrics,
    manski_bias,
    resample_by_choice,
    resampling_bias_experiment,
)
from outside_option.world import ChoiceObservation, SyntheticPrompt, SyntheticResponse, WorldConfig, build_choice_dataset

PROMPT = SyntheticPrompt(0, np.zeros(1), 0.0, 0.0)


def resp(r):
    return SyntheticResponse(np.array([r]), r, r)


def obs(chosen, j=2):
    return ChoiceObservation(PROMPT, [resp(0.1 * (k + 1)) for k in range(j)], chosen)


def test_binarize_examples():
    o = obs(1)
    inst = binarize([o])
    assert [(i.response, i.label) for i in inst] == [(o.candidates[0], 1)]
    o = obs(0)
    assert [(i.response, i.label) for i in binarize([o])] == [(o.candidates[0], 0), (o.candidates[1], 0)]
    o = obs(0, j=1)
    assert [(i.response, i.label) for i in binarize([o])] == [(o.candidates[0], 0)]


def test_binarize_scores_and_oracle():
    o = ChoiceObservation(PROMPT, [resp(-0.5), resp(0.7)], 2)
    (inst,) = binarize([o], lambda p, r: 2 * r.true_normalized_reward)
    assert inst.model_score == pytest.approx(1.4)
    assert inst.oracle_label == 1


def test_table_counts():
    m = ConfusionMetrics(tp=1539, fp=210, tn=177, fn=74)
    assert 100 * m.precision == pytest.approx(88.0, abs=0.5)
    assert 100 * m.recall == pytest.approx(95.4, abs=0.5)
    assert 100 * m.fpr == pytest.approx(54.3, abs=0.5)
    assert m.total == 2000


def inst(score, label):
    return BinaryInstance(PROMPT, None, label, score, label)


def test_all_positive_leaves_fpr_undefined():
    m = confusion_metrics([inst(1.0, 1), inst(2.0, 1)])
    assert m.precision == 1.0 and m.recall == 1.0 and m.fpr is None
    assert m.as_row()["fpr"] == UNDEFINED


def test_threshold_is_strict():
    m = confusion_metrics([inst(0.5, 1), inst(0.5, 0)], threshold=0.5)
    assert (m.tp, m.fp, m.tn, m.fn) == (0, 0, 1, 1)
    assert m.precision is None


@given(st.lists(st.tuples(st.floats(-5, 5), st.integers(0, 1)), min_size=1, max_size=50), st.floats(-5, 5))
def test_confusion_counts_partition(pairs, tau):
    m = confusion_metrics([inst(s, l) for s, l in pairs], tau)
    assert m.total == len(pairs)
    assert m.tp + m.fn == sum(l for _, l in pairs)
    assert m.tp + m.fp == sum(s > tau for s, _ in pairs)


def test_confusion_requires_scores():
    with pytest.raises(ValueError):
        confusion_metrics(binarize([obs(1)]))
    with pytest.raises(ValueError):
        confusion_metrics([])


def test_oracle_labels_used_on_request():
    i = BinaryInstance(PROMPT, None, 0, 1.0, 1)
    assert confusion_metrics([i]).fp == 1
    assert confusion_metrics([i], oracle=True).tp == 1


def test_choice_proportions_counting():
    np.testing.assert_allclose(choice_proportions([obs(c) for c in (0, 1, 2, 0)]), [0.5, 0.25, 0.25])


def test_choice_proportions_mixed_sizes():
    ds = [obs(0), obs(1, j=1), obs(2), obs(1, j=1)]
    with pytest.raises(ValueError):
        choice_proportions(ds)
    by = choice_proportions_by_size(ds)
    np.testing.assert_allclose(by[1], [0.0, 1.0])
    np.testing.assert_allclose(by[2], [0.5, 0.0, 0.5])


def test_manski_examples():
    q = np.array([0.4, 0.3, 0.3])
    assert all(manski_bias(q, q, i) == 0.0 for i in (1, 2))
    h = np.array([0.2, 0.45, 0.35])  # H(1)/Q(1) = 1.5, H(0)/Q(0) = 0.5
    assert manski_bias(h, q, 1) == pytest.approx(math.log(3.0), abs=1e-6)
    assert manski_bias(q, h, 1) == -manski_bias(h, q, 1)
    with pytest.raises(ValueError):
        manski_bias([0.0, 1.0], [0.5, 0.5], 1)


@pytest.fixture(scope="module")
def small_world_data():
    return build_choice_dataset(WorldConfig(calibration_samples=1000), 6000, np.random.default_rng(8))


def test_identity_resampling_keeps_everything(small_world_data, rng):
    q = choice_proportions(small_world_data)
    kept, counts = resample_by_choice(small_world_data, q, rng)
    assert kept == small_world_data
    assert sum(counts) == len(small_world_data)


def test_resampling_hits_target(small_world_data, rng):
    q = choice_proportions(small_world_data)
    h = np.array([q[0] / 2, q[1], q[2]])
    h /= h.sum()
    kept, _ = resample_by_choice(small_world_data, h, rng)
    np.testing.assert_allclose(choice_proportions(kept), h, atol=2e-3)


def test_resampling_rejects_bad_target(small_world_data, rng):
    with pytest.raises(ValueError):
        resample_by_choice(small_world_data, [0.5, 0.5], rng)
    with pytest.raises(ValueError):
        resample_by_choice(small_world_data, [0.5, 0.4, 0.4], rng)


def test_resampling_bias_small_scale(small_world_data, rng):
    q = choice_proportions(small_world_data)
    h = np.array([q[0] / 2, q[1], q[2]])
    h /= h.sum()
    rep = resampling_bias_experiment(small_world_data, h, TrainingConfig(), rng)
    assert rep.predicted_bias[0] == pytest.approx(math.log(2), abs=0.01)
    assert rep.measured_shift == pytest.approx(rep.predicted_bias[0], abs=0.15)
    assert abs(rep.shift_by_position[0] - rep.shift_by_position[1]) < 0.05
