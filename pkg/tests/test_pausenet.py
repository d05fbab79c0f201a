import json

import numpy as np
import pytest

from aedtrace import pausenet as pn
from aedtrace.dsp import FeatureWindow


def _labels(n_moving, n_pausing):
    return ["moving"] * n_moving + ["pausing"] * n_pausing


def _blobs(n_moving, n_pausing, d=18, seed=0, shift=3.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_moving + n_pausing, d))
    X[n_moving:, :3] += shift
    return X, np.array(_labels(n_moving, n_pausing), dtype=object)


# -------------------------------------------------------------------- split


def test_split_counts_at_study_scale():
    labels = _labels(1125, 187)
    tr, ev = pn.split_indices(labels, 0.7, seed=1)
    lab = np.array(labels)
    assert (lab[tr] == "moving").sum() == 787
    assert (lab[tr] == "pausing").sum() == 131
    assert len(ev) == 1312 - 918
    assert set(tr).isdisjoint(ev) and len(set(tr) | set(ev)) == 1312


def test_split_balanced_ten_and_ten():
    tr, ev = pn.split_indices(_labels(10, 10), 0.7, seed=0)
    lab = np.array(_labels(10, 10))
    assert (lab[tr] == "moving").sum() == 7 and (lab[tr] == "pausing").sum() == 7
    assert (lab[ev] == "moving").sum() == 3 and (lab[ev] == "pausing").sum() == 3


def test_split_is_deterministic():
    labels = _labels(40, 9)
    a = pn.split_indices(labels, seed=4)
    b = pn.split_indices(labels, seed=4)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


@pytest.mark.parametrize("labels", [_labels(10, 0), _labels(10, 1)])
def test_split_rejects_degenerate_classes(labels):
    with pytest.raises(pn.TrainingError):
        pn.split_indices(labels)


def test_split_proportions_within_one():
    rng = np.random.default_rng(7)
    for _ in range(50):
        m, p = int(rng.integers(2, 300)), int(rng.integers(2, 60))
        tr, _ = pn.split_indices(_labels(m, p), 0.7, seed=int(rng.integers(1000)))
        n_tr_p = int((np.asarray(tr) >= m).sum())
        n = m + p
        # each class keeps its share of the training total
        assert abs(n_tr_p - len(tr) * p / n) < 1.0
        assert abs((len(tr) - n_tr_p) - len(tr) * m / n) < 1.0


# -------------------------------------------------------------------- SMOTE


def test_smote_balances_to_majority():
    X, y = _blobs(787, 131)
    Xa, ya = pn.smote(X, y, k=5, seed=0)
    assert (ya == "moving").sum() == 787 and (ya == "pausing").sum() == 787
    assert np.array_equal(Xa[: len(X)], X)
    assert list(ya[: len(y)]) == list(y)


def test_smote_balanced_input_unchanged():
    X, y = _blobs(10, 10)
    Xa, ya = pn.smote(X, y)
    assert np.array_equal(Xa, X) and list(ya) == list(y)


def test_smote_identical_minority_points():
    X = np.vstack([np.random.default_rng(0).normal(size=(20, 4)), np.tile([1.0, 2.0, 3.0, 4.0], (6, 1))])
    y = np.array(_labels(20, 6), dtype=object)
    Xa, _ = pn.smote(X, y)
    assert np.all(Xa[26:] == [1.0, 2.0, 3.0, 4.0])


def test_smote_synthetics_lie_between_neighbours():
    X, y = _blobs(60, 8, d=5, seed=3)
    Xa, ya = pn.smote(X, y, k=5, seed=2)
    M = X[y == "pausing"]
    for s in Xa[len(X):]:
        found = False
        for a in M:
            for b in M:
                ab = b - a
                if not ab.any():
                    continue
                u = float((s - a) @ ab / (ab @ ab))
                if -1e-9 <= u <= 1 + 1e-9 and np.allclose(a + u * ab, s, atol=1e-9):
                    found = True
                    break
            if found:
                break
        assert found


def test_smote_reduces_k_with_warning():
    X, y = _blobs(20, 3)
    with pytest.warns(UserWarning, match="reducing SMOTE k"):
        _, ya = pn.smote(X, y, k=5)
    assert (ya == "pausing").sum() == 20


def test_smote_needs_two_minority_members():
    X, y = _blobs(20, 1)
    with pytest.raises(pn.TrainingError):
        pn.smote(X, y)


# -------------------------------------------------------------------- train


def test_xor_is_learned():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array(["moving", "moving", "pausing", "pausing"], dtype=object)
    model = pn.train(X, y, C=100.0, gamma=2.0)
    assert list(pn.predict(model, X)) == list(y)


def test_separable_blobs():
    X, y = _blobs(100, 30, seed=1, shift=6.0)
    model = pn.train(X, y)
    assert list(pn.predict(model, X)) == list(y)


def test_duplication_invariance():
    X, y = _blobs(40, 15, d=3, seed=2, shift=1.5)
    m1 = pn.train(X, y, gamma=0.5, tol=1e-6)
    # each copy carries half the weight, so halving C gives the same dual optimum
    m2 = pn.train(np.vstack([X, X]), np.concatenate([y, y]), gamma=0.5, C=0.5, tol=1e-6)
    grid = np.random.default_rng(9).normal(size=(300, 3)) * 2
    grid[:, 0] += 0.75
    f1, f2 = pn.decision_function(m1, grid), pn.decision_function(m2, grid)
    assert np.allclose(f1, f2, atol=1e-3)
    clear = np.abs(f1) > 1e-2
    assert np.array_equal(np.sign(f1[clear]), np.sign(f2[clear]))


def test_scaling_invariance_when_scaler_refit():
    X, y = _blobs(60, 20, d=6, seed=5, shift=2.0)
    probe = np.random.default_rng(1).normal(size=(200, 6)) + 1.0
    scale = np.array([1e-3, 10.0, 5.0, 1.0, 250.0, 0.2])
    a = pn.predict(pn.train(X, y), probe)
    b = pn.predict(pn.train(X * scale, y), probe * scale)
    assert list(a) == list(b)


def test_zero_tie_predicts_moving():
    model = pn.PausingModel(np.zeros(2), np.ones(2), 1.0, 1.0, np.empty((0, 2)), np.empty(0), 0.0)
    assert list(pn.predict(model, np.zeros((3, 2)))) == ["moving"] * 3


def test_train_requires_both_classes():
    with pytest.raises(pn.TrainingError):
        pn.train(np.zeros((4, 2)), ["moving"] * 4)


def test_convergence_error():
    X, y = _blobs(50, 50, d=2, shift=0.2)
    with pytest.raises(pn.ConvergenceError):
        pn.train(X, y, C=100.0, max_iter=3)


def test_alphas_bounded_by_c():
    X, y = _blobs(80, 20, seed=4, shift=0.5)
    model = pn.train(X, y, C=0.7)
    assert np.all(np.abs(model.alphas) <= 0.7 + 1e-12)
    assert np.all(model.scaler_std > 0)


# ------------------------------------------------------------- persistence


def test_model_json_round_trip(tmp_path):
    X, y = _blobs(50, 12, seed=6, shift=1.0)
    X[:, 5] = 3.0  # constant column gets std 1
    model = pn.train(X, y, trained_at=123)
    path = tmp_path / "model.json"
    pn.save_model(model, path)
    back = pn.load_model(path)
    assert np.array_equal(back.scaler_mean, model.scaler_mean)
    assert np.array_equal(back.scaler_std, model.scaler_std)
    assert back.scaler_std[5] == 1.0
    assert np.array_equal(back.support_vectors, model.support_vectors)
    assert np.array_equal(pn.decision_function(back, X), pn.decision_function(model, X))
    assert back.metadata["trained_at"] == 123
    assert back.metadata["class_counts"] == {"moving": 50, "pausing": 12}


def test_model_rejects_wrong_format():
    with pytest.raises(pn.ModelError):
        pn.PausingModel.from_dict({"format": "other"})


def test_model_rejects_alpha_above_c(tmp_path):
    X, y = _blobs(20, 6, d=2)
    doc = pn.train(X, y).to_dict()
    doc["alphas"][0] = 10.0
    with pytest.raises(pn.ModelError, match="exceeds C"):
        pn.PausingModel.from_dict(json.loads(json.dumps(doc)))


def test_model_rejects_wrong_feature_count():
    X, y = _blobs(20, 6, d=3)
    with pytest.raises(pn.ModelError):
        pn.decision_function(pn.train(X, y), np.zeros((1, 4)))


# --------------------------------------------------------------- evaluation


def test_all_moving_predictions_on_75_25():
    m = pn.score(_labels(75, 25), ["moving"] * 100)
    assert m.per_class["moving"].recall == 1.0
    assert m.per_class["pausing"].recall == 0.0
    assert m.per_class["pausing"].f1 == 0.0
    expected = 0.75 * (2 * 0.75 / 1.75)
    assert m.weighted_f1 == pytest.approx(expected, abs=1e-12)
    assert round(m.weighted_f1, 3) == 0.643


def test_metrics_recomputed_from_confusion():
    rng = np.random.default_rng(0)
    y_true = rng.choice(list(pn.CLASSES), size=200, p=[0.8, 0.2]).tolist()
    y_pred = rng.choice(list(pn.CLASSES), size=200, p=[0.7, 0.3]).tolist()
    m = pn.score(y_true, y_pred)
    c = m.confusion
    for k in pn.CLASSES:
        o = [x for x in pn.CLASSES if x != k][0]
        p = c[k][k] / (c[k][k] + c[o][k])
        r = c[k][k] / (c[k][k] + c[k][o])
        assert m.per_class[k].precision == p
        assert m.per_class[k].recall == r
        assert m.per_class[k].f1 == 2 * p * r / (p + r)
    total = sum(v.support for v in m.per_class.values())
    assert m.weighted_f1 == sum(v.f1 * v.support for v in m.per_class.values()) / total


def test_sklearn_metrics_oracle():
    metrics = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(2)
    y_true = rng.choice(list(pn.CLASSES), size=300, p=[0.86, 0.14]).tolist()
    y_pred = rng.choice(list(pn.CLASSES), size=300, p=[0.8, 0.2]).tolist()
    m = pn.score(y_true, y_pred)
    assert m.weighted_f1 == pytest.approx(metrics.f1_score(y_true, y_pred, average="weighted"), abs=1e-12)


def test_evaluate_rejects_unlabelled():
    X, y = _blobs(20, 6, d=18)
    model = pn.train(X, y)
    with pytest.raises(ValueError):
        pn.evaluate(model, [FeatureWindow(0, X[0], None)])


def test_pipeline_is_deterministic(corpus):
    sub = corpus[:300]
    a = pn.fit_pipeline(sub, seed=3).model.to_dict()
    b = pn.fit_pipeline(sub, seed=3).model.to_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
