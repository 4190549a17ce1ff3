import math

import numpy as np
import pytest

from sl1max.core import Dataset, DistributionKind, SparseVector, WeightMatrix
from sl1max.errors import EmptyClass, StaleProposal, Unsupported
from sl1max.trainers import (TrainConfig, TrainedModel, TrainState, apply_update, build_problem, expected_feature,
                             fit_problem, loss, predict, predict_proba, state_from_weights, train)
from sl1max.update import UpdateProposal

from conftest import bf_expectation, golden_min, oracle_loss, random_dataset

CFG = TrainConfig()


def toy(m, l, X=None):
    X = np.ones((m, 1)) if X is None else X
    return Dataset.from_arrays(X, [i % l for i in range(m)], l)


class TestLoss:
    def test_uniform_joint(self):
        data = toy(3, 2)
        model = TrainedModel(WeightMatrix([{}, {}], "joint", 1), DistributionKind.JOINT)
        assert loss(model, data) == pytest.approx(math.log(6), abs=1e-12)

    def test_uniform_conditional(self):
        data = toy(3, 2)
        model = TrainedModel(WeightMatrix([{}, {}], "cond", 1), DistributionKind.CONDITIONAL)
        assert loss(model, data) == pytest.approx(math.log(2), abs=1e-12)

    def test_uniform_class_conditional(self):
        data = toy(3, 2)
        model = TrainedModel(WeightMatrix([{}, {}], "classcond", 1), DistributionKind.CLASS_CONDITIONAL,
                             np.log([2 / 3, 1 / 3]), np.log([3.0, 3.0]))
        np.testing.assert_allclose(loss(model, data), [math.log(3)] * 2, atol=1e-12)

    @pytest.mark.parametrize("kind", ["joint", "cond"])
    def test_matches_oracle(self, kind, rng):
        data = random_dataset(rng, 25, 6, 3, weights=True)
        lam = rng.normal(size=(3, 6))
        model = TrainedModel(WeightMatrix.from_dense(lam, kind), DistributionKind(kind))
        beta = build_problem(data, kind, CFG).beta
        expect = oracle_loss(data.X.toarray(), data.y, data.weights, lam, beta, kind)
        assert loss(model, data) == pytest.approx(expect, abs=1e-12)


class TestExpectedFeature:
    def setup_method(self):
        X = np.array([[1.0, 1.0], [0.0, 1.0]])
        self.data = Dataset.from_arrays(X, [0, 1], 2)

    def test_uniform_joint(self):
        state = TrainState(build_problem(self.data, "joint", CFG))
        assert expected_feature(state, 0, 0) == pytest.approx(0.25)
        assert expected_feature(state, 1, 0) == pytest.approx(0.25)

    def test_uniform_conditional(self):
        state = TrainState(build_problem(self.data, "cond", CFG))
        assert expected_feature(state, 0, 0) == pytest.approx(0.25)

    @pytest.mark.parametrize("kind", ["joint", "cond"])
    @pytest.mark.parametrize("seed", range(4))
    def test_brute_force(self, kind, seed):
        rng = np.random.default_rng(seed)
        m, n, l = int(rng.integers(3, 21)), 5, int(rng.integers(2, 5))
        data = random_dataset(rng, m, n, l, binary=bool(seed % 2), weights=True)
        lam = rng.normal(size=(l, n)) * (rng.random((l, n)) < 0.6)
        state = state_from_weights(build_problem(data, kind, CFG), lam)
        X = data.X.toarray()
        for d in range(l):
            for j in range(n):
                expect = bf_expectation(X, data.weights, lam, kind, d, j)
                assert expected_feature(state, d, j) == pytest.approx(expect, rel=1e-12, abs=1e-15)

    def test_class_conditional(self, rng):
        data = random_dataset(rng, 15, 4, 2, ensure_all_classes=True)
        lam = rng.normal(size=(1, 4))
        state = state_from_weights(build_problem(data, "classcond", CFG, 1), lam)
        X = data.X.toarray()
        s = X @ lam[0]
        q = np.exp(s) / np.exp(s).sum()
        for j in range(4):
            assert expected_feature(state, 0, j) == pytest.approx(float(q @ X[:, j]), rel=1e-12)


class TestApplyUpdate:
    @pytest.fixture(params=["joint", "cond", "classcond"])
    def state(self, request, rng):
        data = random_dataset(rng, 30, 8, 3, ensure_all_classes=True)
        return TrainState(build_problem(data, request.param, CFG, cls=1), recompute_every=10**9)

    def test_zero_step(self, state):
        before = state.scores.copy(), np.copy(state.log_z), state.loss
        apply_update(state, UpdateProposal(0, 2, 0.0, 0.0))
        np.testing.assert_array_equal(state.scores, before[0])
        np.testing.assert_array_equal(state.log_z, before[1])
        assert state.rounds_done == 0

    def test_normalizers_match_recompute(self, state, rng):
        for _ in range(40):
            d = int(rng.integers(0, state.problem.l))
            apply_update(state, UpdateProposal(d, int(rng.integers(0, 8)), float(rng.normal()), 0.0))
        incremental = np.copy(state.log_z), state.loss
        state.recompute()
        np.testing.assert_allclose(np.exp(incremental[0]), np.exp(state.log_z), rtol=1e-9)
        assert incremental[1] == pytest.approx(state.loss, rel=1e-9)

    def test_locality(self, state):
        pb = state.problem
        j = 4
        touched = set(pb.indices[pb.indptr[j]:pb.indptr[j + 1]].tolist())
        before = state.scores.copy()
        apply_update(state, UpdateProposal(0, j, 0.7, 0.0))
        for i in range(pb.m):
            if i not in touched:
                assert state.scores[i].tobytes() == before[i].tobytes()

    def test_stale(self, state):
        prop = UpdateProposal(0, 1, 0.3, -0.1, version=state.version)
        apply_update(state, prop)
        with pytest.raises(StaleProposal):
            apply_update(state, prop)


class TestTrain:
    def test_single_class_conditional(self, rng):
        X = (rng.random((20, 5)) < 0.4).astype(float)
        data = Dataset.from_arrays(X, [0] * 20, 3)
        model = train(data, "cond")
        for _ in range(20):
            x = SparseVector.from_pairs((j, 1.0) for j in np.flatnonzero(rng.random(5) < 0.5))
            assert predict(model, x)[0] == 0

    @pytest.mark.parametrize("kind", ["joint", "classcond", "cond"])
    def test_separable(self, kind, rng):
        m, l = 120, 4
        y = np.arange(m) % l
        X = (rng.random((m, 10)) < 0.1).astype(float)
        X[:, :l] = 0.0
        X[np.arange(m), y] = 1.0
        data = Dataset.from_arrays(X, y, l)
        model = train(data, kind)
        pred = np.argmax(model.decision_scores(data.X), axis=1)
        assert np.mean(pred != y) == 0.0

    def test_first_round_is_best_single_update(self):
        X = np.array([[1.0, 0.0], [1.0, 1.0]])
        y = np.array([0, 1])
        data = Dataset.from_arrays(X, y, 2)
        cfg = TrainConfig(max_rounds=1)
        model = train(data, "joint", cfg)
        beta = build_problem(data, "joint", cfg).beta
        w = np.ones(2)
        base = oracle_loss(X, y, w, np.zeros((2, 2)), beta, "joint")
        best = None
        for d in range(2):
            for j in range(2):
                def f(t, d=d, j=j):
                    lam = np.zeros((2, 2))
                    lam[d, j] = t
                    return oracle_loss(X, y, w, lam, beta, "joint")
                t, ft = golden_min(f, -10, 10)
                if best is None or ft < best[0] - 1e-12:
                    best = (ft, d, j, t)
        got = model.weights.dense
        expect = np.zeros((2, 2))
        expect[best[1], best[2]] = best[3]
        np.testing.assert_allclose(got, expect, atol=1e-6)
        assert best[0] < base

    def test_empty_class(self, rng):
        data = Dataset.from_arrays(np.ones((4, 2)), [0, 0, 2, 2], 3)
        with pytest.raises(EmptyClass):
            train(data, "classcond")

    def test_class_conditional_problems_are_independent(self, rng):
        data = random_dataset(rng, 60, 12, 4, ensure_all_classes=True)
        a = train(data, "classcond")
        b = train(data, "classcond", TrainConfig(parallel_classes=3))
        assert a.weights == b.weights
        np.testing.assert_array_equal(a.log_norm_per_class, b.log_norm_per_class)
        # a class trained alone gives the same row
        st, _ = fit_problem(build_problem(data, "classcond", CFG, 2), CFG)
        assert dict(WeightMatrix.from_dense(st.lam, "classcond").rows[0]) == a.weights.rows[2]

    def test_validation_early_stop(self):
        from sl1max.evaluation import synth_generate

        tr = synth_generate(300, 60, 3, 0.3, seed=1)
        va = synth_generate(200, 60, 3, 0.3, seed=2)
        cfg = TrainConfig(eval_every=5, patience=2, eps=0.0, max_evaluations=10**9, max_rounds=5000)
        seen = []

        def track(state, prop, before):
            if state.rounds_done % 5 == 0:
                pred = np.argmax(va.X @ state.lam.T, axis=1)
                seen.append(np.mean(pred != va.y))

        st, info = fit_problem(build_problem(tr, "cond", cfg), cfg, validation=(va.X, va.label_sets),
                               on_update=track)
        assert info["stopped_early"]
        assert st.rounds_done < 5000
        final = np.mean(np.argmax(va.X @ st.lam.T, axis=1) != va.y)
        assert final <= min(seen) + 1e-12

    def test_classcond_decision_rule(self):
        model = TrainedModel(WeightMatrix([{}, {}], "classcond", 1), DistributionKind.CLASS_CONDITIONAL,
                             np.log([0.5, 0.5]), np.log([4.0, 2.0]))
        c, s = predict(model, SparseVector.from_pairs([(0, 1.0)]))
        assert c == 1
        np.testing.assert_allclose(s, [math.log(0.5) - math.log(4), math.log(0.5) - math.log(2)])


class TestPredict:
    def test_tie_break(self):
        model = TrainedModel(WeightMatrix([{}, {}], "cond", 2), DistributionKind.CONDITIONAL)
        assert predict(model, SparseVector.from_pairs([(0, 1.0)]))[0] == 0

    def test_argmax(self):
        model = TrainedModel(WeightMatrix([{0: 1.2}, {0: 0.7}], "joint", 1), DistributionKind.JOINT)
        c, s = predict(model, SparseVector.from_pairs([(0, 1.0)]))
        assert c == 0
        np.testing.assert_allclose(s, [1.2, 0.7])

    def test_proba_uniform(self):
        model = TrainedModel(WeightMatrix([{}] * 4, "cond", 2), DistributionKind.CONDITIONAL)
        np.testing.assert_allclose(predict_proba(model, SparseVector.from_pairs([(1, 1.0)])), [0.25] * 4)

    def test_proba_softmax(self):
        model = TrainedModel(WeightMatrix([{0: math.log(3)}, {}], "cond", 1), DistributionKind.CONDITIONAL)
        p = predict_proba(model, SparseVector.from_pairs([(0, 1.0)]))
        np.testing.assert_allclose(p, [0.75, 0.25], atol=1e-15)

    def test_proba_shift_invariant(self, rng):
        lam = rng.normal(size=(3, 4))
        x = SparseVector.from_pairs([(0, 1.0), (2, 0.5), (3, 1.0)])
        base = TrainedModel(WeightMatrix.from_dense(lam, "cond"), DistributionKind.CONDITIONAL)
        # adding c to the weight on an active binary feature adds c to every class score
        lam2 = lam.copy()
        lam2[:, 0] += 2.5
        shifted = TrainedModel(WeightMatrix.from_dense(lam2, "cond"), DistributionKind.CONDITIONAL)
        np.testing.assert_allclose(predict_proba(base, x), predict_proba(shifted, x), atol=1e-12)
        assert predict_proba(base, x).sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("kind", ["joint", "classcond"])
    def test_proba_unsupported(self, kind):
        model = TrainedModel(WeightMatrix([{}, {}], kind, 1), DistributionKind(kind), np.zeros(2), np.zeros(2))
        with pytest.raises(Unsupported):
            predict_proba(model, SparseVector.from_pairs([(0, 1.0)]))


@pytest.mark.parametrize("kind", ["joint", "cond", "classcond"])
def test_loss_trace_non_increasing(kind, rng):
    data = random_dataset(rng, 40, 10, 3, ensure_all_classes=True)
    st, info = fit_problem(build_problem(data, kind, CFG, cls=0), TrainConfig(max_rounds=300))
    losses = [v for _, v in st.loss_trace]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
