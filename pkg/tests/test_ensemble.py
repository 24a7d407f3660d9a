"""Feature construction and boosted combination of edge predictors."""

import numpy as np
import pytest

from grangernet import ensemble
from grangernet.ensemble import (BoostModel, EnsembleError, build_features,
                                 constant_model, fit_boost, predict_score,
                                 tune_threshold)
from grangernet.network import sweep
from grangernet.synthetic import Coupling, planted_system
from conftest import default_params


def two_source_net(length=6000, seed=0):
    """Two planted sources feeding one target at lags 2 and 3."""
    variables = [(0, "x"), (1, "x"), (2, "x")]
    couplings = [Coupling((0, "x"), (2, "x"), 2, 0.15)]
    streams = planted_system(variables, length, couplings, seed=seed)
    # second, weaker influence: xor in source 1 at lag 3 occasionally
    r = np.random.default_rng(seed + 77)
    mask = (r.random(length - 3) < 0.25).astype(np.uint8)
    tgt = streams[(2, "x")].copy()
    tgt[3:] ^= streams[(1, "x")][:-3] & mask
    streams[(2, "x")] = tgt
    net = sweep(streams, dmax=4, params=default_params(), gamma_min=0.02)
    return net, streams


def test_build_features_columns_match_machine_eval():
    net, streams = two_source_net()
    fm = build_features(net, streams, (2, "x"), delta=2)
    assert fm.X.shape[0] == len(fm.t_index)
    assert np.all((fm.X >= 0) & (fm.X <= 1))
    assert set(fm.y.tolist()) <= {0, 1}
    # each cell is the edge machine evaluated at offset delay - delta
    by_key = {e.key: e for t in net.edges_by_target.values() for e in t}
    for j, key in enumerate(fm.columns):
        assert key.delay >= fm.delta
        machine = by_key[key].machine
        src = streams[key.src]
        offset = key.delay - fm.delta
        for i in (0, len(fm.t_index) // 2, len(fm.t_index) - 1):
            t = fm.t_index[i]
            expected = machine.evaluate(src[: t - offset + 1])
            assert fm.X[i, j] == expected


def test_build_features_rows_exclude_shallow_history():
    net, streams = two_source_net()
    fm = build_features(net, streams, (2, "x"), delta=2)
    depth = max(e.machine.max_depth
                for t in net.edges_by_target.values() for e in t)
    max_offset = max(k.delay - 2 for k in fm.columns)
    assert fm.t_index[0] == depth + max_offset


def test_build_features_labels_are_lead_delta():
    net, streams = two_source_net()
    fm = build_features(net, streams, (2, "x"), delta=2)
    tgt = streams[(2, "x")]
    np.testing.assert_array_equal(fm.y, tgt[fm.t_index + 2])


def test_build_features_no_usable_edges():
    net, streams = two_source_net()
    with pytest.raises(EnsembleError, match="no usable in-edges"):
        build_features(net, streams, (0, "x"), delta=2)


def test_fit_perfect_feature_auc_one():
    r = np.random.default_rng(0)
    y = (r.random(400) < 0.5).astype(np.uint8)
    X = y.reshape(-1, 1).astype(np.float64)
    fm = ensemble.FeatureMatrix(X=X, y=y, t_index=np.arange(400),
                                columns=["f"], delta=1)
    model = fit_boost(fm, rounds=20, subsample=1.0)
    scores = predict_score(model, X)
    assert (scores[y == 1].min() > scores[y == 0].max())


def test_fit_xor_representable_at_depth_two():
    r = np.random.default_rng(1)
    a = (r.random(800) < 0.5).astype(np.uint8)
    b = (r.random(800) < 0.5).astype(np.uint8)
    y = a ^ b
    X = np.column_stack([a, b]).astype(np.float64)
    fm = ensemble.FeatureMatrix(X=X, y=y, t_index=np.arange(800),
                                columns=["a", "b"], delta=1)
    model = fit_boost(fm, rounds=100, depth=2, subsample=1.0)
    scores = predict_score(model, X)
    # brute-force pairwise AUC
    pos, neg = scores[y == 1], scores[y == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    assert wins / (len(pos) * len(neg)) >= 0.99


def test_fit_identical_features_constant_scores():
    r = np.random.default_rng(2)
    y = (r.random(300) < 0.4).astype(np.uint8)
    X = np.full((300, 3), 0.7)
    fm = ensemble.FeatureMatrix(X=X, y=y, t_index=np.arange(300),
                                columns=list("abc"), delta=1)
    model = fit_boost(fm, rounds=50, subsample=1.0)
    scores = predict_score(model, X)
    assert np.allclose(scores, y.mean(), atol=1e-8)


def test_fit_single_class_constant_model():
    fm = ensemble.FeatureMatrix(X=np.ones((20, 1)),
                                y=np.ones(20, dtype=np.uint8),
                                t_index=np.arange(20), columns=["f"], delta=1)
    with pytest.warns(UserWarning, match="single-class"):
        model = fit_boost(fm)
    assert model.is_constant and model.base_score == 1.0


def test_stagewise_descent_at_full_subsample():
    net, streams = two_source_net()
    fm = build_features(net, streams, (2, "x"), delta=2)
    model = fit_boost(fm, rounds=60, subsample=1.0)
    losses = model.stage_train_losses
    assert len(losses) == 60
    assert np.all(np.diff(losses) <= 1e-12)


def test_seed_determinism():
    net, streams = two_source_net()
    fm = build_features(net, streams, (2, "x"), delta=2)
    m1 = fit_boost(fm, rounds=40, seed=11)
    m2 = fit_boost(fm, rounds=40, seed=11)
    np.testing.assert_array_equal(predict_score(m1, fm.X),
                                  predict_score(m2, fm.X))


def test_leakage_freedom():
    # mutating labels after the training range never changes the fit
    net, streams = two_source_net()
    fm = build_features(net, streams, (2, "x"), delta=2, t_end=4000)
    model_a = fit_boost(fm, rounds=30, seed=3)

    mutated = dict(streams)
    tgt = streams[(2, "x")].copy()
    tgt[4003:] ^= 1  # flip every label beyond the feature window
    mutated[(2, "x")] = tgt
    fm_b = build_features(net, mutated, (2, "x"), delta=2, t_end=4000)
    model_b = fit_boost(fm_b, rounds=30, seed=3)
    np.testing.assert_array_equal(fm.X, fm_b.X)
    np.testing.assert_array_equal(fm.y, fm_b.y)
    np.testing.assert_array_equal(predict_score(model_a, fm.X),
                                  predict_score(model_b, fm.X))


def test_predict_constant_model():
    model = constant_model(0.37, delta=2)
    np.testing.assert_allclose(predict_score(model, np.zeros((5, 9))), 0.37)


def test_predict_scores_clamped():
    net, streams = two_source_net()
    fm = build_features(net, streams, (2, "x"), delta=2)
    model = fit_boost(fm, rounds=40)
    scores = predict_score(model, fm.X)
    assert scores.min() >= 0.0 and scores.max() <= 1.0


def test_predict_catalog_mismatch():
    net, streams = two_source_net()
    fm = build_features(net, streams, (2, "x"), delta=2)
    model = fit_boost(fm, rounds=5)
    with pytest.raises(EnsembleError, match="columns"):
        predict_score(model, np.zeros((3, fm.X.shape[1] + 1)))


def test_threshold_separated_scores():
    r = np.random.default_rng(4)
    yy = (r.random(200) < 0.5).astype(np.uint8)
    fm = ensemble.FeatureMatrix(X=yy.reshape(-1, 1).astype(float), y=yy,
                                t_index=np.arange(200), columns=["f"], delta=1)
    m = fit_boost(fm, rounds=20, subsample=1.0)
    tau = tune_threshold(m, fm.X, yy)
    dec = predict_score(m, fm.X) >= tau
    assert (dec == yy.astype(bool)).all()  # recall 1, FPR 0


def test_threshold_brute_force_oracle():
    r = np.random.default_rng(5)
    y = (r.random(300) < 0.3).astype(np.uint8)
    raw = np.clip(0.3 * y + r.normal(0.3, 0.2, 300), 0, 1)
    fm = ensemble.FeatureMatrix(X=raw.reshape(-1, 1), y=y,
                                t_index=np.arange(300), columns=["f"], delta=1)
    model = fit_boost(fm, rounds=30, subsample=1.0)
    cap = 0.2
    tau = tune_threshold(model, fm.X, y, ("max_recall_fpr", cap))
    scores = predict_score(model, fm.X)

    def stats(t):
        dec = scores >= t
        pos = y == 1
        return ((dec & pos).sum() / pos.sum(),
                (dec & ~pos).sum() / (~pos).sum())

    recall, fpr = stats(tau)
    assert fpr <= cap
    # no candidate threshold with admissible FPR beats the chosen recall
    for t in np.unique(scores):
        rec_t, fpr_t = stats(t)
        if fpr_t <= cap:
            assert rec_t <= recall + 1e-12


def test_threshold_max_f1_objective():
    class _Identity:
        def predict(self, X):
            return X[:, 0]

    scores = np.array([0.9, 0.7, 0.6, 0.2])
    y = np.array([1, 0, 1, 0], dtype=np.uint8)
    model = BoostModel(base_score=0.5, columns=["f"], delta=1,
                       regressor=_Identity())
    tau = tune_threshold(model, scores.reshape(-1, 1), y, ("max_f1",))
    # brute force: tau=0.6 gives F1 = 2*2/(2*2+1+0) = 0.8, the best
    assert tau == pytest.approx(0.6)


def test_threshold_all_positive_warns():
    model = constant_model(0.4, delta=1)
    with pytest.warns(UserWarning, match="all-positive"):
        tau = tune_threshold(model, np.zeros((3, 1)),
                             np.ones(3, dtype=np.uint8))
    assert tau == 0.4


def test_threshold_empty_slice():
    model = constant_model(0.4, delta=1)
    with pytest.raises(EnsembleError, match="empty"):
        tune_threshold(model, np.zeros((0, 1)), np.zeros(0, dtype=np.uint8))


def test_model_save_load_roundtrip(tmp_path):
    net, streams = two_source_net()
    fm = build_features(net, streams, (2, "x"), delta=2)
    model = fit_boost(fm, rounds=25, seed=6)
    tune_threshold(model, fm.X[-100:], fm.y[-100:])
    path = tmp_path / "model.bin"
    model.save(path)
    loaded = ensemble.BoostModel.load(path)
    assert loaded.threshold == model.threshold
    assert loaded.columns == model.columns
    np.testing.assert_array_equal(predict_score(loaded, fm.X),
                                  predict_score(model, fm.X))
