"""Stubs and exact oracles shared by the test modules."""

import itertools

import numpy as np

from outside_option.world import ResponseBatch


class StubPolicy:
    """Emits pre-set estimated rewards, one list per ``sample`` call.

    The estimate is stored as the single feature; true rewards default to the
    same values.
    """

    def __init__(self, score_batches, true_batches=None):
        self.score_batches = [np.asarray(b, dtype=float) for b in score_batches]
        self.true_batches = [np.asarray(b, dtype=float) for b in (true_batches or score_batches)]
        self.calls = 0

    def sample(self, prompt, count, rng):
        s = self.score_batches[self.calls]
        t = self.true_batches[self.calls]
        self.calls += 1
        assert s.size == count
        return ResponseBatch(s[:, None].copy(), t.copy(), t.copy())


class FeatureScorer:
    def score(self, prompt, batch):
        return batch.features[:, 0]


def enumerate_false_acceptance(probabilities, true_rewards, estimates, N):
    """Exact best-of-N false-acceptance probability over all type sequences.

    The winner is the first index attaining the maximum estimate.
    """
    total = 0.0
    for seq in itertools.product(range(len(probabilities)), repeat=N):
        est = [estimates[t] for t in seq]
        w = seq[int(np.argmax(est))]
        if estimates[w] > 0 and true_rewards[w] < 0:
            total += float(np.prod([probabilities[t] for t in seq]))
    return total
