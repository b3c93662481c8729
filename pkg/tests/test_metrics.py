from collections import Counter

import numpy as np
import pytest

from classy_ensemble.metrics import classwise_scores, majority_vote, weighted_argmax


def tally_oracle(y_true, y_pred, n_classes):
    """Independent per-class recall tally, plain Python."""
    per_class = []
    present = []
    for c in range(n_classes):
        idx = [i for i, t in enumerate(y_true) if t == c]
        present.append(bool(idx))
        if idx:
            per_class.append(sum(1 for i in idx if y_pred[i] == c) / len(idx))
        else:
            per_class.append(0.0)
    overall = np.mean([v for v, p in zip(per_class, present) if p])
    return per_class, overall, present


class TestClasswiseScores:
    def test_worked_example(self):
        scores = classwise_scores([0, 0, 1, 1], [0, 1, 1, 1], 2)
        exp_pc, exp_overall, _ = tally_oracle([0, 0, 1, 1], [0, 1, 1, 1], 2)
        assert exp_pc == [0.5, 1.0] and exp_overall == 0.75
        np.testing.assert_allclose(scores.per_class, [0.5, 1.0])
        assert scores.overall == pytest.approx(0.75)

    def test_perfect_prediction(self):
        y = [0, 1, 2, 1, 0]
        scores = classwise_scores(y, y, 3)
        np.testing.assert_allclose(scores.per_class, 1.0)
        assert scores.overall == 1.0

    def test_absent_class_convention(self):
        scores = classwise_scores([0, 0, 0], [0, 1, 0], 2)
        assert scores.present_mask.tolist() == [True, False]
        assert scores.per_class[1] == 0.0
        assert scores.overall == scores.per_class[0]

    def test_empty_vectors_error(self):
        with pytest.raises(ValueError):
            classwise_scores([], [], 2)

    def test_label_out_of_range_error(self):
        with pytest.raises(ValueError):
            classwise_scores([0, 3], [0, 0], 2)

    def test_random_against_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            C = int(rng.integers(2, 6))
            n = int(rng.integers(1, 30))
            yt = rng.integers(0, C, size=n)
            yp = rng.integers(0, C, size=n)
            got = classwise_scores(yt, yp, C)
            exp_pc, exp_overall, exp_present = tally_oracle(yt.tolist(), yp.tolist(), C)
            np.testing.assert_allclose(got.per_class, exp_pc)
            assert got.overall == pytest.approx(exp_overall)
            assert got.present_mask.tolist() == exp_present

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        yt = rng.integers(0, 4, size=40)
        yp = rng.integers(0, 4, size=40)
        base = classwise_scores(yt, yp, 4)
        perm = rng.permutation(40)
        permuted = classwise_scores(yt[perm], yp[perm], 4)
        np.testing.assert_allclose(base.per_class, permuted.per_class)
        assert base.overall == permuted.overall

    def test_overall_bounded_by_present_extremes(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            yt = rng.integers(0, 3, size=25)
            yp = rng.integers(0, 3, size=25)
            s = classwise_scores(yt, yp, 3)
            present = s.per_class[s.present_mask]
            assert present.min() - 1e-12 <= s.overall <= present.max() + 1e-12

    def test_overall_equals_mean_of_present(self):
        rng = np.random.default_rng(3)
        yt = rng.integers(0, 5, size=60)
        yp = rng.integers(0, 5, size=60)
        s = classwise_scores(yt, yp, 5)
        assert abs(s.overall - s.per_class[s.present_mask].mean()) < 1e-12


def vote_oracle(column):
    """Independent frequency count with lowest-label tie break."""
    counts = Counter(column)
    best = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))
    return best[0]


class TestMajorityVote:
    def test_strict_majority(self):
        assert majority_vote(np.array([[0], [1], [1]])).tolist() == [1]

    def test_tie_goes_to_lowest_index(self):
        assert majority_vote(np.array([[0], [1]])).tolist() == [0]

    def test_duplicates_count_multiply(self):
        votes = np.array([[1], [1], [0], [2]])
        assert majority_vote(votes).tolist() == [1]

    def test_single_member_identity(self):
        row = np.array([[2, 0, 1, 1, 3]])
        assert majority_vote(row).tolist() == row[0].tolist()

    def test_empty_member_set_error(self):
        with pytest.raises(ValueError):
            majority_vote(np.empty((0, 4), dtype=int))

    def test_random_against_counting_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            m = int(rng.integers(1, 8))
            n = int(rng.integers(1, 25))
            votes = rng.integers(0, 5, size=(m, n))
            got = majority_vote(votes)
            exp = [vote_oracle(votes[:, j].tolist()) for j in range(n)]
            assert got.tolist() == exp


class TestWeightedArgmax:
    def test_worked_row(self):
        assert weighted_argmax(np.array([[0.48, 0.42]])).tolist() == [0]

    def test_all_zero_row(self):
        assert weighted_argmax(np.zeros((1, 3))).tolist() == [0]

    def test_unique_max(self):
        rng = np.random.default_rng(5)
        scores = rng.random((40, 4))
        got = weighted_argmax(scores)
        exp = [int(max(range(4), key=lambda c: scores[i, c])) for i in range(40)]
        assert got.tolist() == exp

    def test_tie_to_lowest(self):
        assert weighted_argmax(np.array([[0.5, 0.5]])).tolist() == [0]
        assert weighted_argmax(np.array([[0.1, 0.7, 0.7]])).tolist() == [1]
