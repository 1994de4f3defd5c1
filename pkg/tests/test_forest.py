import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.tree import DecisionTreeRegressor

from augdf.errors import BadK, EmptyInput, WidthMismatch
from augdf.forest import (BAGGED, EXTRA, Forest, ForestParams, Tree, TreeParams, feature_importance, fit_forest,
                          fit_tree, forest_from_bytes, forest_to_bytes, forest_to_json, oof_predict,
                          predict_forest, predict_tree)

from oracles import best_split_decrease

TOY_X = np.array([[0.0], [1.0], [2.0], [3.0]])
TOY_Y = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
# subsample larger than any width -> every feature is a candidate
FULL = TreeParams(min_samples_leaf=1, feature_subsample=10**6)


def leaf(v, n=1):
    return {"value": list(v), "n_samples": n}


def test_toy_split():
    tree = fit_tree(TOY_X, TOY_Y, FULL, seed=0)
    assert tree.feature[0] == 0
    assert 1.0 < tree.threshold[0] < 2.0
    assert best_split_decrease(TOY_X, TOY_Y)[0] == pytest.approx(tree.impurity_decrease[0], abs=1e-12)
    vals = {tuple(v) for v in tree.value}
    assert vals == {(1.0, 0.0), (0.0, 1.0)}


def test_constant_targets_single_leaf():
    Y = np.tile([0.3, 0.7], (5, 1))
    tree = fit_tree(np.arange(10.0).reshape(5, 2), Y, FULL)
    assert tree.n_nodes == 1
    assert np.allclose(tree.value[0], [0.3, 0.7])


def test_single_row():
    tree = fit_tree([[1.0, 2.0]], [[0.2, 0.8]], FULL)
    assert tree.n_nodes == 1
    assert np.array_equal(tree.value[0], [0.2, 0.8])


def test_empty_input():
    with pytest.raises(EmptyInput):
        fit_tree(np.zeros((0, 2)), np.zeros((0, 2)))


def test_predict_tree_cases():
    stump = Tree.from_nested(leaf([0.25, 0.75]), 3)
    assert np.array_equal(predict_tree(stump, [9.0, -1.0, 0.0]), [0.25, 0.75])
    tree = fit_tree(TOY_X, TOY_Y, FULL)
    assert np.array_equal(predict_tree(tree, [0.5]), [1.0, 0.0])
    # tie routes left
    t = Tree.from_nested({"feature": 0, "threshold": 1.5, "left": leaf([1, 0]), "right": leaf([0, 1])}, 1)
    assert np.array_equal(predict_tree(t, [1.5]), [1.0, 0.0])
    with pytest.raises(WidthMismatch):
        predict_tree(tree, [0.5, 1.0])


def test_predict_tree_matches_sklearn():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 5))
    Y = np.eye(3)[rng.integers(0, 3, 200)]
    tree = fit_tree(X, Y, TreeParams(min_samples_leaf=2), seed=7)
    ref = DecisionTreeRegressor(min_samples_leaf=2, max_features=3, random_state=7).fit(X.astype(np.float32), Y)
    Xt = rng.normal(size=(100, 5))
    assert np.allclose(predict_tree(tree, Xt), ref.predict(Xt.astype(np.float32)), atol=0, rtol=0)


def test_forest_single_extra_tree_equals_tree():
    f = fit_forest(TOY_X, TOY_Y, ForestParams(1, EXTRA, min_samples_leaf=1), seed=3)
    probe = np.linspace(-1, 4, 11)[:, None]
    assert np.array_equal(predict_forest(f, probe), predict_tree(f.trees[0], probe))


def test_forest_averaging():
    f = Forest((Tree.from_nested(leaf([1, 0]), 2), Tree.from_nested(leaf([0, 1]), 2)), BAGGED, 2, 1, 0)
    assert np.array_equal(predict_forest(f, np.zeros((4, 2))), np.full((4, 2), 0.5))


def test_forest_determinism():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(80, 4))
    Y = np.eye(2)[(X[:, 0] > 0).astype(int)]
    a = fit_forest(X, Y, ForestParams(5, BAGGED), seed=11)
    b = fit_forest(X, Y, ForestParams(5, BAGGED), seed=11)
    assert forest_to_bytes(a) == forest_to_bytes(b)
    assert np.array_equal(predict_forest(a, X), predict_forest(b, X))


def test_separable_blobs_train_accuracy():
    rng = np.random.default_rng(5)
    X = np.vstack([rng.normal(-2, 0.5, size=(50, 2)), rng.normal(2, 0.5, size=(50, 2))])
    y = np.repeat([0, 1], 50)
    f = fit_forest(X, np.eye(2)[y], ForestParams(25, BAGGED), seed=0)
    assert np.mean(np.argmax(predict_forest(f, X), 1) == y) >= 0.95


@pytest.mark.parametrize("kind", [BAGGED, EXTRA])
def test_forest_rows_in_simplex(kind):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(100, 6))
    Y = rng.dirichlet(np.ones(4), size=100)
    f = fit_forest(X, Y, ForestParams(10, kind), seed=2)
    P = predict_forest(f, X)
    assert P.min() >= 0
    assert np.max(np.abs(P.sum(1) - 1)) <= 1e-9
    for t in f.trees:
        assert np.all(t.value >= 0)
        assert np.max(np.abs(t.value.sum(1) - 1)) <= 1e-9
        assert np.all(t.impurity_decrease >= 0)


def test_fi_lone_contributor():
    t = Tree.from_nested({"feature": 2, "threshold": 0.0, "impurity_decrease": 0.5, "n_samples": 10,
                          "left": leaf([1, 0]), "right": leaf([0, 1])}, 4)
    f = Forest((t,), BAGGED, 4, 2, 0)
    assert np.array_equal(feature_importance([f]), [0, 0, 1, 0])


def test_fi_uniform_fallback():
    f = Forest((Tree.from_nested(leaf([1, 0]), 5),), BAGGED, 5, 2, 0)
    assert np.array_equal(feature_importance([f, f]), np.full(5, 0.2))


def test_fi_weighted_sum():
    t = Tree.from_nested({
        "feature": 0, "threshold": 0.0, "impurity_decrease": 3.0, "n_samples": 8,
        "left": {"feature": 1, "threshold": 0.0, "impurity_decrease": 1.0, "n_samples": 4,
                 "left": leaf([1, 0], 2), "right": leaf([0, 1], 2)},
        "right": leaf([0, 1], 4)}, 2)
    f = Forest((t,), BAGGED, 2, 1, 0)
    assert np.allclose(feature_importance([f]), [24 / 28, 4 / 28], atol=1e-15)


def test_fi_width_mismatch():
    a = Forest((Tree.from_nested(leaf([1, 0]), 2),), BAGGED, 2, 1, 0)
    b = Forest((Tree.from_nested(leaf([1, 0]), 3),), BAGGED, 3, 1, 0)
    with pytest.raises(WidthMismatch):
        feature_importance([a, b])


def test_fi_normalized_on_trained_forest(small_ds):
    fi = feature_importance([fit_forest(small_ds.X, small_ds.Y, ForestParams(5, k), seed=1) for k in (BAGGED, EXTRA)])
    assert np.all(fi >= 0)
    assert abs(fi.sum() - 1) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 16), d=st.integers(1, 3), C=st.integers(2, 4), seed=st.integers(0, 2**31))
def test_split_matches_exhaustive(n, d, C, seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, size=(n, d)) / 4.0
    Y = np.eye(C)[rng.integers(0, C, n)]
    tree = fit_tree(X, Y, FULL, seed=seed)
    best = best_split_decrease(X, Y)[0]
    got = tree.impurity_decrease[0] if tree.n_nodes > 1 else 0.0
    assert abs(got - best) <= 1e-12


@pytest.mark.parametrize("kind", [BAGGED, EXTRA])
def test_permutation_reachable_leaves(kind):
    # depth-1 tree on distinct values: row order does not change the leaf set
    X = np.array([[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]])
    Y = np.eye(2)[[0, 0, 0, 1, 1, 1]]
    perm = np.random.default_rng(0).permutation(6)
    p = TreeParams(max_depth=1, min_samples_leaf=1, kind=kind)
    a = fit_tree(X, Y, p, seed=1)
    b = fit_tree(X[perm], Y[perm], p, seed=1)
    assert {tuple(v) for v in a.value} == {tuple(v) for v in b.value}


def test_serialization_roundtrip_and_json():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(60, 3))
    Y = np.eye(3)[rng.integers(0, 3, 60)]
    f = fit_forest(X, Y, ForestParams(3, EXTRA), seed=9)
    blob = forest_to_bytes(f)
    assert blob[:4] == b"AGFO"
    g = forest_from_bytes(blob)
    assert forest_to_bytes(g) == blob
    assert np.array_equal(predict_forest(g, X), predict_forest(f, X))
    js = forest_to_json(f)
    assert js["n_features"] == 3 and len(js["trees"]) == 3
    rebuilt = Tree.from_nested(js["trees"][0], 3)
    assert np.array_equal(predict_tree(rebuilt, X), predict_tree(f.trees[0], X))


def test_oof_leave_one_out():
    params = [ForestParams(3, EXTRA, min_samples_leaf=1)]
    res = oof_predict(TOY_X, TOY_Y, params, k=4, seed=0, keep_fold_forests=True)
    assert sorted(np.concatenate(res.folds).tolist()) == [0, 1, 2, 3]
    for held, group in zip(res.folds, res.fold_forests):
        assert held.size == 1
        assert np.array_equal(res.oof[0][held], predict_forest(group[0], TOY_X[held]))


def test_oof_rows_never_seen():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(30, 3))
    Y = np.eye(2)[rng.integers(0, 2, 30)]
    seen = []

    def spy(Xt, Yt, rows, tag):
        seen.append((tag, set(rows.tolist())))
        return Xt, Yt

    res = oof_predict(X, Y, [ForestParams(2, BAGGED)], k=3, seed=1, transform=spy)
    for (tag, rows), held in zip(seen[:3], res.folds):
        assert rows.isdisjoint(held.tolist())
    assert np.max(np.abs(res.oof[0].sum(1) - 1)) <= 1e-9


def test_oof_bad_k():
    with pytest.raises(BadK):
        oof_predict(TOY_X, TOY_Y, [ForestParams(1)], k=1)


def test_oof_tracks_held_out_better_than_training_fit():
    """Across noisy tasks, OOF accuracy correlates with held-out accuracy
    more strongly than training-fit accuracy does."""
    oof_acc, fit_acc, test_acc = [], [], []
    for seed in range(5):
        for noise in (0.3, 1.0, 2.0):
            rng = np.random.default_rng(100 * seed + int(noise * 10))
            X = rng.normal(size=(240, 5))
            y = ((X[:, 0] + X[:, 1] + noise * rng.normal(size=240)) > 0).astype(int)
            Y = np.eye(2)[y]
            tr, te = slice(0, 160), slice(160, None)
            res = oof_predict(X[tr], Y[tr], [ForestParams(10, BAGGED)], k=3, seed=seed)
            oof_acc.append(np.mean(res.oof[0].argmax(1) == y[tr]))
            fit_acc.append(np.mean(predict_forest(res.forests[0], X[tr]).argmax(1) == y[tr]))
            test_acc.append(np.mean(predict_forest(res.forests[0], X[te]).argmax(1) == y[te]))
    assert np.corrcoef(oof_acc, test_acc)[0, 1] > np.corrcoef(fit_acc, test_acc)[0, 1]
