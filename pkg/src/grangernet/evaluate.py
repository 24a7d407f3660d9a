"""Out-of-sample scoring, ROC/AUC with a +/-1-day hit window, risk maps."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from . import ensemble

DEFAULT_HORIZON = 7
DEFAULT_HIT_WINDOW = 1
DEFAULT_AREA_FRACTION = 0.1

PREDICTION_COLUMNS = ["issue_day", "pred_day", "tile", "class", "score",
                      "decision", "fallback"]


class EvaluateError(Exception):
    pass


def predict_holdout(models: dict, net, streamset, delta: int = DEFAULT_HORIZON,
                    max_columns: int = ensemble.DEFAULT_MAX_COLUMNS) -> pd.DataFrame:
    """Score every (tile, class, holdout day) strictly extrapolatively.

    Prediction day T is scored from features issued at T - delta; early
    holdout days legitimately use training-tail histories. Variables
    without a usable model fall back to the marginal training rate and are
    flagged.
    """
    m = streamset.train_days
    h = streamset.holdout_days
    if h <= 0:
        raise EvaluateError("no holdout window present")
    rows = []
    for var in streamset.variables:
        tile, cls = var
        train_rate = float(streamset.training(var).mean())
        model = models.get(var)
        fallback = False
        scores = None
        if model is not None and not model.is_constant:
            try:
                fm = ensemble.build_features(
                    net, streamset.streams, var, delta,
                    t_start=m - delta, t_end=m + h - delta,
                    max_columns=max_columns, with_labels=False)
                all_scores = ensemble.predict_score(model, fm.X)
                lookup = dict(zip(fm.t_index.tolist(), all_scores.tolist()))
                scores = [lookup.get(t) for t in range(m - delta, m + h - delta)]
            except ensemble.EnsembleError:
                scores = None
        if scores is None:
            fallback = True
            scores = [train_rate] * h
        tau = model.threshold if (model is not None and model.threshold is not None) else 0.5
        for i, score in enumerate(scores):
            if score is None:
                score = train_rate
            t = m - delta + i
            rows.append((t, t + delta, tile, cls, float(score),
                         bool(score >= tau), fallback))
    return pd.DataFrame(rows, columns=PREDICTION_COLUMNS)


def hit_match(records: pd.DataFrame, streamset, window: int = DEFAULT_HIT_WINDOW):
    """Label each prediction by truth within +/-window days of its date.

    Returns ``(labeled, dropped)``: records whose window extends past the
    end of the data are dropped and counted.
    """
    total = streamset.total_days
    keep = records["pred_day"] + window < total
    dropped = int((~keep).sum())
    out = records[keep].copy()
    labels = np.zeros(len(out), dtype=np.uint8)
    for i, (_, rec) in enumerate(out.iterrows()):
        truth = streamset.streams[(int(rec["tile"]), str(rec["class"]))]
        lo = max(int(rec["pred_day"]) - window, 0)
        hi = int(rec["pred_day"]) + window + 1
        labels[i] = 1 if truth[lo:hi].any() else 0
    out["label"] = labels
    return out, dropped


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def rank_auc(labels, scores) -> float:
    """AUC as the Mann-Whitney rank statistic; ties get half credit."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluateError("AUC undefined: both classes must be present")
    ranks = rankdata(scores)
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_auc(labels, scores) -> RocCurve:
    """ROC curve over all thresholds plus the rank-statistic AUC."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    auc = rank_auc(labels, scores)  # raises on single-class input
    order = np.argsort(-scores, kind="stable")
    labels = labels[order]
    scores = scores[order]
    # collapse tied scores into single thresholds
    distinct = np.r_[np.nonzero(np.diff(scores))[0], len(scores) - 1]
    tps = np.cumsum(labels == 1)[distinct]
    fps = np.cumsum(labels == 0)[distinct]
    n_pos, n_neg = tps[-1], fps[-1]
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, scores[distinct]]
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auc=auc)


def curve_auc(curve: RocCurve) -> float:
    """Trapezoidal integral of the ROC curve (equals the rank AUC)."""
    return float(np.trapezoid(curve.tpr, curve.fpr))


def auc_summary(labeled: pd.DataFrame, by=("tile", "class")) -> pd.DataFrame:
    """Per-group AUC table; single-class groups reported with NaN AUC.

    ``by`` may group per tile and class, per tile pooling classes
    (``("tile",)``), or pool everything (``()``).
    """
    by = list(by)
    rows = []
    groups = labeled.groupby(by) if by else [((), labeled)]
    for key, grp in groups:
        if not isinstance(key, tuple):
            key = (key,)
        try:
            auc = rank_auc(grp["label"].to_numpy(), grp["score"].to_numpy())
        except EvaluateError:
            auc = float("nan")
        rows.append(key + (len(grp), int(grp["label"].sum()), auc))
    return pd.DataFrame(rows, columns=by + ["n_records", "n_positive", "auc"])


@dataclass
class RiskMap:
    day: int
    intensity: np.ndarray  # (rows, cols), max-normalized per day
    sigma2_km2: float


def _tile_centers_km(grid):
    lat0 = grid.origin_lat + grid.rows * grid.cell_height / 2.0
    km_per_deg_lat = 110.574
    km_per_deg_lon = 111.320 * math.cos(math.radians(lat0))
    r = np.arange(grid.rows)
    c = np.arange(grid.cols)
    y = (r + 0.5) * grid.cell_height * km_per_deg_lat
    x = (c + 0.5) * grid.cell_width * km_per_deg_lon
    return np.meshgrid(x, y)  # (X, Y), each (rows, cols)


def risk_map(predicted_tiles, grid, sigma2_km2: float, day: int = 0) -> RiskMap:
    """Gaussian-sum intensity over the grid from predicted-event tiles.

    Intensity is the sum of exp(-d^2 / (2 sigma^2)) over predicted tile
    centers, normalized so the day's maximum is 1. No predictions yields
    an all-zero map (normalization skipped).
    """
    if sigma2_km2 <= 0:
        raise EvaluateError("sigma^2 must be positive")
    X, Y = _tile_centers_km(grid)
    intensity = np.zeros((grid.rows, grid.cols))
    for tile in predicted_tiles:
        r, c = divmod(int(tile), grid.cols)
        d2 = (X - X[r, c]) ** 2 + (Y - Y[r, c]) ** 2
        intensity += np.exp(-d2 / (2.0 * sigma2_km2))
    peak = intensity.max()
    if peak > 0:
        intensity = intensity / peak
    return RiskMap(day=day, intensity=intensity, sigma2_km2=sigma2_km2)


def sigma_grid_km2(grid, n: int = 9, lo_tiles: float = 0.5, hi_tiles: float = 8.0):
    """Log-spaced sigma^2 candidates spanning fractions of a tile width."""
    tile_km = grid.diagonal_km() / math.sqrt(2.0)
    sigmas = np.geomspace(lo_tiles * tile_km, hi_tiles * tile_km, n)
    return (sigmas ** 2).tolist()


def tune_sigma(daily_predictions: dict, daily_truth: dict, grid,
               candidates=None, area_fraction: float = DEFAULT_AREA_FRACTION) -> float:
    """Choose sigma^2 maximizing recall of true events by high-risk area.

    For each candidate, recall is the fraction of true-event tiles falling
    inside the top ``area_fraction`` of map cells, averaged over days.
    """
    if candidates is None:
        candidates = sigma_grid_km2(grid)
    n_top = max(int(area_fraction * grid.rows * grid.cols), 1)
    best_s2, best_recall = candidates[0], -1.0
    for s2 in candidates:
        hits = 0
        total = 0
        for day, pred_tiles in daily_predictions.items():
            truth_tiles = daily_truth.get(day, [])
            if not truth_tiles:
                continue
            rm = risk_map(pred_tiles, grid, s2, day)
            flat = rm.intensity.ravel()
            cutoff = np.partition(flat, len(flat) - n_top)[len(flat) - n_top]
            for tile in truth_tiles:
                total += 1
                if flat[int(tile)] >= cutoff and cutoff > 0:
                    hits += 1
        recall = hits / total if total else 0.0
        if recall > best_recall:
            best_recall, best_s2 = recall, float(s2)
    return best_s2


def risk_map_to_csv(rm: RiskMap) -> str:
    lines = ["row,col,intensity"]
    for r in range(rm.intensity.shape[0]):
        for c in range(rm.intensity.shape[1]):
            lines.append(f"{r},{c},{rm.intensity[r, c]:.10g}")
    return "\n".join(lines) + "\n"


def risk_map_to_geojson(rm: RiskMap, grid) -> str:
    """Tile polygons with intensity properties, for mapping tools."""
    features = []
    for r in range(grid.rows):
        for c in range(grid.cols):
            lat0 = grid.origin_lat + r * grid.cell_height
            lon0 = grid.origin_lon + c * grid.cell_width
            ring = [[lon0, lat0], [lon0 + grid.cell_width, lat0],
                    [lon0 + grid.cell_width, lat0 + grid.cell_height],
                    [lon0, lat0 + grid.cell_height], [lon0, lat0]]
            features.append({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {"row": r, "col": c, "day": rm.day,
                               "intensity": round(float(rm.intensity[r, c]), 10)},
            })
    return json.dumps({"type": "FeatureCollection", "features": features},
                      sort_keys=True)
