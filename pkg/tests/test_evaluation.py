import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from encsteal.data import Dataset
from encsteal.evaluation import (
    EvalResult,
    LinearProbe,
    ProbeHyper,
    accuracy,
    agreement,
    evaluate,
    export_embeddings,
    train_probe,
)
from encsteal.exceptions import DataError, DimensionError
from encsteal.nn import ArchSpec, Head, init_model

TINY = ArchSpec(widths=(4,), embed_dim=4, with_projector=False)


class TestMetrics:
    def test_worked_example(self):
        assert agreement([0, 1, 2, 3], [0, 1, 0, 0]) == 0.5
        assert accuracy([0, 1, 2, 3], [0, 1, 2, 3]) == 1.0

    def test_symmetric(self, rng):
        a, b = rng.integers(0, 4, 50), rng.integers(0, 4, 50)
        assert agreement(a, b) == agreement(b, a)

    @pytest.mark.parametrize("a, b", [([0, 1], [0]), ([], []), ([[0]], [[0]])])
    def test_shape_errors(self, a, b):
        with pytest.raises(DimensionError):
            agreement(a, b)

    def test_evaluate_record(self):
        res = evaluate([0, 1, 1], [0, 1, 0], [0, 0, 1])
        assert res == EvalResult(2 / 3, 2 / 3, 3)
        assert res.gap == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), min_size=1, max_size=200))
def test_agreement_is_a_count_over_n(pairs):
    a, b = (np.array(x) for x in zip(*pairs))
    value = agreement(a, b)
    assert 0.0 <= value <= 1.0
    assert value * len(a) == pytest.approx(round(value * len(a)), abs=1e-9)
    assert round(value * len(a)) == sum(x == y for x, y in pairs)


class TestLinearProbe:
    def _margin_toy(self, rng, n=200):
        X = rng.normal(size=(n, 2))
        y = (X[:, 0] > 0).astype(int)
        X[:, 0] += np.where(y == 1, 1.0, -1.0)
        return X, y

    def test_separable_toy(self, rng):
        X, y = self._margin_toy(rng)
        probe = LinearProbe(epochs=100, lr=1e-2).fit(X, y)
        assert probe.score(X, y) > 0.95
        assert probe.loss_curve_[-1] < probe.loss_curve_[0]

    def test_zero_epochs_stays_at_init(self, rng):
        X, y = self._margin_toy(rng, 20)
        probe = LinearProbe(epochs=0, random_state=7).fit(X, y)
        init = Head.create((2, 2), np.random.default_rng(7), "probe")
        assert probe.head_.param_hash() == init.param_hash()

    def test_proba_rows_sum_to_one(self, rng):
        X, y = self._margin_toy(rng, 30)
        proba = LinearProbe(epochs=5).fit(X, y).predict_proba(X)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-6)

    def test_from_head(self, rng):
        head = Head.create((3, 4), rng, "classifier")
        probe = LinearProbe.from_head(head)
        X = rng.normal(size=(5, 3)).astype(np.float32)
        np.testing.assert_allclose(probe.decision_function(X), X @ probe.weight.T + probe.bias, rtol=1e-5, atol=1e-6)
        np.testing.assert_array_equal(probe.classes_, np.arange(4))

    def test_clone_and_params(self):
        probe = LinearProbe(n_classes=3, lr=0.1)
        assert clone(probe).get_params() == probe.get_params()

    def test_predict_before_fit(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            LinearProbe().predict(np.zeros((1, 2)))

    def test_label_out_of_range(self, rng):
        with pytest.raises(DataError):
            LinearProbe(n_classes=2).fit(rng.normal(size=(3, 2)), [0, 1, 2])

    def test_deterministic(self, rng):
        X, y = self._margin_toy(rng, 40)
        a, b = LinearProbe(epochs=3).fit(X, y), LinearProbe(epochs=3).fit(X, y)
        assert a.head_.param_hash() == b.head_.param_hash()


def test_probing_leaves_encoder_untouched(toy_split):
    enc = init_model(TINY, 0)
    before = enc.param_hash()
    train_probe(enc, toy_split[0], ProbeHyper(epochs=3))
    assert enc.param_hash() == before
    assert all(p.grad is None for p in enc.params.values())


def test_train_probe_needs_labels(toy_split):
    with pytest.raises(DataError):
        train_probe(init_model(TINY, 0), Dataset(toy_split[0].images))


class TestExport:
    @pytest.fixture
    def ds(self, rng):
        return Dataset(rng.uniform(size=(5, 3, 8, 8)).astype(np.float32), np.array([0, 1, 0, 1, 1]), classes=2, ids=np.arange(5) + 40)

    def test_layout_and_round_trip(self, ds, tmp_path):
        enc = init_model(TINY, 0)
        path = export_embeddings(enc, ds, str(tmp_path / "emb.csv"))
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["sample_id", "label", "e_1", "e_2", "e_3", "e_4"]
        assert len(rows) == 6 and all(len(r) == 6 for r in rows)
        body = np.array(rows[1:], dtype=np.float64)
        np.testing.assert_array_equal(body[:, 0], ds.ids)
        np.testing.assert_array_equal(body[:, 1], ds.labels)
        np.testing.assert_array_equal(body[:, 2:].astype(np.float32), enc.embed(ds.images))

    def test_byte_identical_re_export(self, ds, tmp_path):
        enc = init_model(TINY, 0)
        a = export_embeddings(enc, ds, str(tmp_path / "a.csv"))
        b = export_embeddings(enc, ds, str(tmp_path / "b.csv"))
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_unlabeled_rows(self, ds, tmp_path):
        path = export_embeddings(init_model(TINY, 0), Dataset(ds.images), str(tmp_path / "u.csv"))
        with open(path) as fh:
            assert all(r[1] == "" for r in list(csv.reader(fh))[1:])
