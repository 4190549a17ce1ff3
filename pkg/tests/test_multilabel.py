from collections import Counter

import numpy as np
import pytest

from sl1max.core import Dataset, SparseVector
from sl1max.multilabel import WeightingMode, binary_targets, class_priors_multilabel, expand


def ml_dataset(rng, m, n=6, l=4, max_labels=3, with_empty=True):
    X = np.zeros((m, n))
    X[np.arange(m), np.arange(m) % n] = 1.0
    X += (rng.random((m, n)) < 0.3)
    X = np.minimum(X, 1.0)
    sets = []
    for _ in range(m):
        k = int(rng.integers(0 if with_empty else 1, max_labels + 1))
        sets.append(set(rng.choice(l, size=k, replace=False).tolist()))
    return Dataset.from_arrays(X, sets, l)


class TestExpand:
    def test_inverse_k(self):
        data = Dataset.from_arrays(np.ones((1, 2)), [{1, 3}], 4)
        out, rep = expand(data, "inversek")
        assert [(sorted(ex.labels), ex.weight) for ex in out.examples] == [([1], 0.5), ([3], 0.5)]
        assert rep.expanded_count == 2 and rep.weighting_mode is WeightingMode.INVERSE_K

    @pytest.mark.parametrize("mode", ["duplicate", "inversek"])
    def test_single_label(self, mode):
        out, _ = expand(Dataset.from_arrays(np.ones((1, 1)), [{2}], 3), mode)
        assert [(sorted(ex.labels), ex.weight) for ex in out.examples] == [([2], 1.0)]

    def test_drops_empty(self):
        out, rep = expand(Dataset.from_arrays(np.ones((2, 1)), [set(), {0}], 1))
        assert out.m == 1
        assert (rep.original_count, rep.dropped_zero_label) == (2, 1)

    def test_total_weight(self, rng):
        data = ml_dataset(rng, 20)
        out, rep = expand(data, "inversek")
        kept = sum(1 for s in data.label_sets if s)
        assert out.weights.sum() == pytest.approx(kept)
        assert rep.expanded_count == sum(len(s) for s in data.label_sets)

    def test_duplicate_input_marginal(self, rng):
        m = 12
        X = np.eye(m)
        sets = [set(rng.choice(5, size=int(rng.integers(1, 4)), replace=False).tolist()) for _ in range(m)]
        out, _ = expand(Dataset.from_arrays(X, sets, 5), "duplicate")
        K = np.array([len(s) for s in sets], dtype=float)
        mass = Counter()
        for ex in out.examples:
            mass[int(ex.x.indices[0])] += ex.weight
        total = sum(mass.values())
        for i in range(m):
            assert mass[i] / total == pytest.approx(K[i] / K.sum())


class TestBinaryTargets:
    def test_labels(self):
        out = binary_targets(Dataset.from_arrays(np.ones((2, 1)), [{0, 1}, {2}], 3), 1)
        assert out.y.tolist() == [1, 0]
        assert out.num_classes == 2

    def test_absent_class(self):
        data = Dataset.from_arrays(np.ones((3, 1)), [{0}, {1}, set()], 3)
        assert binary_targets(data, 2).y.tolist() == [0, 0, 0]

    def test_weights_and_rows_kept(self, rng):
        data = ml_dataset(rng, 15)
        data = Dataset(data.examples, data.num_classes, data.num_features)
        out = binary_targets(data, 0)
        assert out.m == data.m
        np.testing.assert_array_equal(out.weights, data.weights)

    def test_positive_count_identity(self, rng):
        data = ml_dataset(rng, 20)
        total = sum(int(binary_targets(data, c).y.sum()) for c in range(data.num_classes))
        assert total == sum(len(s) for s in data.label_sets)


@pytest.mark.parametrize("seed", range(10))
def test_expand_commutes_with_binary_targets_on_support(seed):
    # positive inputs per class and the kept inputs agree whichever order the
    # two projections run in; only multiplicities (weights) differ
    rng = np.random.default_rng(seed)
    data = ml_dataset(rng, int(rng.integers(1, 21)), with_empty=False)
    expanded, _ = expand(data, "duplicate")
    K = [len(s) for s in data.label_sets]
    for c in range(data.num_classes):
        a = binary_targets(expanded, c)
        b = binary_targets(data, c)
        dup = [ex for ex, k in zip(b.examples, K) for _ in range(k)]
        assert a.m == len(dup)
        pos_a = {ex.x for ex in a.examples if 1 in ex.labels}
        pos_b = {ex.x for ex in dup if 1 in ex.labels}
        assert pos_a == pos_b
        assert {ex.x for ex in a.examples} == {ex.x for ex in dup}


class TestPriors:
    def test_multilabel(self):
        p = class_priors_multilabel(Dataset.from_arrays(np.ones((2, 1)), [{0, 1}, {0}], 2))
        np.testing.assert_allclose(p, [1.0, 0.5])

    def test_single_label_sums_to_one(self, rng):
        y = rng.integers(0, 3, size=25)
        p = class_priors_multilabel(Dataset.from_arrays(np.ones((25, 1)), y, 3))
        assert p.sum() == pytest.approx(1.0)

    def test_empty_sets(self):
        p = class_priors_multilabel(Dataset.from_arrays(np.ones((2, 1)), [set(), {1}], 2))
        np.testing.assert_allclose(p, [0.0, 0.5])
