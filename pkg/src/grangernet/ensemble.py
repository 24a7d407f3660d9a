"""Per-target boosted combination of retained edge transducers.

Each retained in-edge of a target contributes one feature column: the
edge machine's output evaluated on the source history at the offset
implied by the edge delay and the prediction horizon. A gradient-boosted
regression-tree model combines the columns into a raw risk score in
[0, 1]; a tuned threshold turns scores into decisions.
"""

from __future__ import annotations

import pickle
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.ensemble import GradientBoostingRegressor

DEFAULT_ROUNDS = 200
DEFAULT_TREE_DEPTH = 3
DEFAULT_LEARNING_RATE = 0.1
DEFAULT_SUBSAMPLE = 0.8
DEFAULT_MAX_COLUMNS = 500

_MODEL_VERSION = 1


class EnsembleError(Exception):
    pass


@dataclass
class FeatureMatrix:
    """Leakage-free design matrix for one target at one horizon.

    Row ``i`` is issued at time ``t_index[i]`` and predicts the target at
    ``t_index[i] + delta``; every cell uses source values at or before the
    issue time.
    """

    X: np.ndarray  # (n_rows, n_cols), values in [0, 1]
    y: np.ndarray  # (n_rows,) labels in {0, 1}; may be empty for scoring
    t_index: np.ndarray
    columns: list  # EdgeKey per column
    delta: int


def build_features(net, streams: dict, target, delta: int,
                   t_start: int | None = None, t_end: int | None = None,
                   max_columns: int = DEFAULT_MAX_COLUMNS,
                   with_labels: bool = True) -> FeatureMatrix:
    """Evaluate the target's usable in-edges over an issue-time range.

    Usable edges have delay >= delta (offset j = delay - delta reaches
    back j steps from the issue time). Rows start where every edge has a
    full-depth history available; with labels, rows end where the label
    exists.
    """
    target = tuple(target)
    edges = [e for e in net.edges_into(target) if e.key.delay >= delta]
    edges.sort(key=lambda e: (-e.gamma, e.key))
    edges = edges[:max_columns]
    if not edges:
        raise EnsembleError(
            f"target {target} has no usable in-edges at horizon {delta}; "
            "fall back to the marginal predictor")

    total_len = len(next(iter(streams.values())))
    depth = max(e.machine.max_depth for e in edges)
    max_offset = max(e.key.delay - delta for e in edges)
    lo = depth + max_offset if t_start is None else max(t_start, depth + max_offset)
    hi = total_len - delta if with_labels else total_len
    if t_end is not None:
        hi = min(hi, t_end)
    if hi <= lo:
        raise EnsembleError("no rows available for the requested range")
    t_index = np.arange(lo, hi)

    cols = []
    for e in edges:
        j = e.key.delay - delta
        scores = e.machine.evaluate_batch(streams[e.key.src])
        cols.append(scores[t_index - j])
    X = np.column_stack(cols)
    if with_labels:
        y = np.asarray(streams[target], dtype=np.uint8)[t_index + delta]
    else:
        y = np.empty(0, dtype=np.uint8)
    return FeatureMatrix(X=X, y=y, t_index=t_index,
                         columns=[e.key for e in edges], delta=delta)


@dataclass
class BoostModel:
    """Fitted combiner for one target: boosted trees or a constant."""

    base_score: float
    columns: list
    delta: int
    regressor: GradientBoostingRegressor | None = None
    threshold: float | None = None
    threshold_objective: tuple | None = None
    seed: int | None = None
    version: int = _MODEL_VERSION

    @property
    def is_constant(self) -> bool:
        return self.regressor is None

    @property
    def stage_train_losses(self) -> np.ndarray:
        if self.regressor is None:
            return np.empty(0)
        return np.asarray(self.regressor.train_score_)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            pickle.dump(self, fh)

    @classmethod
    def load(cls, path) -> "BoostModel":
        with open(path, "rb") as fh:
            model = pickle.load(fh)
        if not isinstance(model, cls) or model.version != _MODEL_VERSION:
            raise EnsembleError(f"unsupported model record in {path}")
        return model


def constant_model(rate: float, delta: int) -> BoostModel:
    return BoostModel(base_score=float(rate), columns=[], delta=delta)


def fit_boost(matrix: FeatureMatrix, rounds: int = DEFAULT_ROUNDS,
              depth: int = DEFAULT_TREE_DEPTH,
              learning_rate: float = DEFAULT_LEARNING_RATE,
              subsample: float = DEFAULT_SUBSAMPLE,
              seed: int = 0) -> BoostModel:
    """Stagewise least-squares boosting on the feature matrix."""
    if matrix.X.shape[0] == 0:
        raise EnsembleError("empty feature matrix")
    y = np.asarray(matrix.y, dtype=np.float64)
    if len(np.unique(y)) < 2:
        warnings.warn("single-class labels; fitting a constant model")
        return BoostModel(base_score=float(y.mean()) if len(y) else 0.0,
                          columns=list(matrix.columns), delta=matrix.delta,
                          seed=seed)
    reg = GradientBoostingRegressor(
        loss="squared_error", n_estimators=rounds, max_depth=depth,
        learning_rate=learning_rate, subsample=subsample, random_state=seed)
    reg.fit(matrix.X, y)
    return BoostModel(base_score=float(y.mean()), columns=list(matrix.columns),
                      delta=matrix.delta, regressor=reg, seed=seed)


def predict_score(model: BoostModel, X: np.ndarray) -> np.ndarray:
    """Raw risk scores for feature rows, clamped to [0, 1]."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if model.is_constant:
        return np.full(X.shape[0], model.base_score)
    if X.shape[1] != len(model.columns):
        raise EnsembleError(
            f"feature row has {X.shape[1]} columns, model expects "
            f"{len(model.columns)}")
    return np.clip(model.regressor.predict(X), 0.0, 1.0)


def tune_threshold(model: BoostModel, X_val: np.ndarray, y_val: np.ndarray,
                   objective=("max_recall_fpr", 0.2)) -> float:
    """Pick the decision threshold optimizing the objective on a slice.

    Objectives: ("max_recall_fpr", cap) maximizes recall subject to
    FPR <= cap; ("max_f1",) maximizes F1. Brute force over candidate
    thresholds. The chosen threshold is stored on the model and returned.
    """
    y_val = np.asarray(y_val, dtype=np.uint8)
    if len(y_val) == 0:
        raise EnsembleError("empty validation slice")
    scores = predict_score(model, X_val)
    pos = y_val == 1
    if pos.all():
        warnings.warn("validation slice is all-positive; threshold = min score")
        tau = float(scores.min())
        model.threshold, model.threshold_objective = tau, tuple(objective)
        return tau

    candidates = np.unique(scores)
    best_tau, best_val = float(candidates[-1]) + 1.0, -1.0
    for tau in candidates:
        dec = scores >= tau
        tp = int((dec & pos).sum())
        fp = int((dec & ~pos).sum())
        fn = int((~dec & pos).sum())
        recall = tp / max(pos.sum(), 1)
        fpr = fp / max((~pos).sum(), 1)
        if objective[0] == "max_recall_fpr":
            if fpr <= objective[1] and recall > best_val:
                best_val, best_tau = recall, float(tau)
        elif objective[0] == "max_f1":
            f1 = 2 * tp / max(2 * tp + fp + fn, 1)
            if f1 > best_val:
                best_val, best_tau = f1, float(tau)
        else:
            raise EnsembleError(f"unknown objective {objective!r}")
    model.threshold, model.threshold_objective = best_tau, tuple(objective)
    return best_tau
