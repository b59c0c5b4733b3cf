import numpy as np
import pytest

from eegcnn.evaluation import (ConfusionMatrix, FoldResult, SplitError, accuracy, kfold_split, loso_split, mcc,
                               mean)

from oracles import accuracy_direct, mcc_direct


def random_cms(n, seed=0):
    rng = np.random.default_rng(seed)
    # half with small counts so empty marginals occur
    return [ConfusionMatrix(*map(int, rng.integers(0, 500 if i % 2 else 3, size=4))) for i in range(n)]


class TestMetrics:
    def test_against_oracles(self):
        for cm in random_cms(1000):
            if cm.total == 0:
                continue
            assert abs(accuracy(cm) - accuracy_direct(cm.tp, cm.tn, cm.fp, cm.fn)) <= 1e-12
            assert abs(mcc(cm) - mcc_direct(cm.tp, cm.tn, cm.fp, cm.fn)) <= 1e-12

    @pytest.mark.parametrize("cm", [ConfusionMatrix(10, 0, 5, 0), ConfusionMatrix(0, 7, 0, 3),
                                    ConfusionMatrix(4, 0, 0, 0), ConfusionMatrix(0, 0, 0, 5)])
    def test_degenerate_mcc_is_zero(self, cm):
        assert mcc(cm) == 0.0

    def test_worked_examples(self):
        assert accuracy(ConfusionMatrix(3, 2, 1, 4)) == 50.0
        assert mcc(ConfusionMatrix(1, 1, 1, 1)) == 0.0
        assert accuracy(ConfusionMatrix(0, 0, 4, 6)) == 0.0

    def test_perfect_and_inverted(self):
        assert mcc(ConfusionMatrix(5, 5, 0, 0)) == 1.0
        assert mcc(ConfusionMatrix(0, 0, 5, 5)) == -1.0
        assert accuracy(ConfusionMatrix(3, 1, 0, 0)) == 100.0

    def test_from_labels(self):
        cm = ConfusionMatrix.from_labels([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
        assert (cm.tp, cm.tn, cm.fp, cm.fn) == (2, 1, 1, 1)

    def test_empty(self):
        with pytest.raises(ValueError):
            accuracy(ConfusionMatrix(0, 0, 0, 0))

    def test_negative_counts(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(-1, 0, 0, 0)

    def test_fold_result_dict(self):
        d = FoldResult(3, ConfusionMatrix(2, 2, 1, 0), n_train=9).to_dict()
        assert d["accuracy"] == 80.0 and d["n_test"] == 5 and "repeat" not in d

    def test_mean_is_arithmetic(self):
        vals = [0.1] * 10
        assert mean(vals) == 0.1


class TestKFold:
    @pytest.mark.parametrize("n", [10, 100, 101, 137])
    @pytest.mark.parametrize("stratify", [False, True])
    def test_partition(self, n, stratify):
        labels = np.arange(n) % 3 == 0 if stratify else None
        folds = kfold_split(n, 10, seed=1, labels=labels)
        assert len(folds) == 10
        tests = [t for _, t in folds]
        assert np.array_equal(np.sort(np.concatenate(tests)), np.arange(n))
        sizes = [len(t) for t in tests]
        assert max(sizes) - min(sizes) <= 1
        for tr, te in folds:
            assert np.intersect1d(tr, te).size == 0
            assert len(tr) + len(te) == n

    def test_sizes_101(self):
        assert sorted(len(t) for _, t in kfold_split(101, 10)) == [10] * 9 + [11]

    def test_seeded(self):
        a = kfold_split(50, 10, seed=4)
        b = kfold_split(50, 10, seed=4)
        c = kfold_split(50, 10, seed=5)
        assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))
        assert not all(np.array_equal(x[1], y[1]) for x, y in zip(a, c))

    def test_stratified_balance(self):
        labels = np.array([0] * 50 + [1] * 50)
        for _, te in kfold_split(100, 10, seed=0, labels=labels):
            assert labels[te].sum() == 5

    def test_too_few(self):
        with pytest.raises(SplitError):
            kfold_split(5, 10)


class TestLoso:
    def test_twelve_subjects(self):
        subjects = np.repeat([f"S{i:02d}" for i in range(1, 13)], 7)
        folds = loso_split(subjects)
        assert [s for s, _, _ in folds] == [f"S{i:02d}" for i in range(1, 13)]
        for s, tr, te in folds:
            assert set(subjects[te]) == {s}
            assert s not in set(subjects[tr])
            assert len(tr) + len(te) == len(subjects)

    def test_single_subject(self):
        with pytest.raises(SplitError):
            loso_split(["A", "A"])
