"""Rate perturbations, response surfaces, and SES regression of responses.

Positive perturbations replace 0s in a Boolean stream with Bernoulli
draws; negative ones thin the 1s. The injection parameter is chosen so
the expected relative rate change equals the requested delta. Responses
are measured as relative changes in model-predicted event rates one week
out, on a fixed (never refit) model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import statsmodels.api as sm

from . import evaluate

DEFAULT_REPLICATES = 20
DEFAULT_DELTA_LIMIT = 0.10

SES_COVARIATES = ["crowded_pct", "poverty_pct", "unemployed_pct", "income_pc",
                  "hardship"]


class PerturbError(Exception):
    pass


@dataclass(frozen=True)
class PerturbationSpec:
    """Signed relative rate changes per class, with replication settings."""

    deltas: dict  # class -> delta in [-0.10, +0.10]
    seed: int = 0
    replicates: int = DEFAULT_REPLICATES
    delta_limit: float = DEFAULT_DELTA_LIMIT

    def validate(self) -> None:
        for cls, d in self.deltas.items():
            if abs(d) > self.delta_limit + 1e-12:
                raise PerturbError(
                    f"|delta|={abs(d)} for class {cls!r} exceeds limit "
                    f"{self.delta_limit}")


def inject(stream: np.ndarray, delta: float, seed: int) -> np.ndarray:
    """Perturb a Boolean stream so its expected rate becomes p(1+delta).

    delta > 0: each 0 is independently replaced by Bernoulli(theta) with
    theta = delta*p/(1-p). delta < 0: each 1 is replaced by
    Bernoulli(1-theta') with theta' = -delta. delta = 0 returns the stream
    unchanged.
    """
    stream = np.asarray(stream, dtype=np.uint8)
    if delta == 0.0:
        return stream.copy()
    p = float(stream.mean())
    if not (0.0 < p < 1.0):
        raise PerturbError(f"stream rate {p} admits no nonzero perturbation")
    rng = np.random.default_rng(seed)
    out = stream.copy()
    if delta > 0:
        theta = delta * p / (1.0 - p)
        if theta > 1.0:
            raise PerturbError(
                f"delta={delta} infeasible at rate {p}; max delta is "
                f"{(1.0 - p) / p:.6g}")
        zeros = np.flatnonzero(stream == 0)
        out[zeros] = rng.random(len(zeros)) < theta
    else:
        theta = -delta
        if theta > 1.0:
            raise PerturbError(f"delta={delta} infeasible; max decrease is -1")
        ones = np.flatnonzero(stream == 1)
        out[ones] = rng.random(len(ones)) < (1.0 - theta)
    return out


@dataclass
class ResponseResult:
    """Relative predicted-rate changes per output class.

    ``by_class``: city-averaged mean response and replicate stderr.
    ``by_tile``: per-(tile, class) mean response. Tiles with zero baseline
    rate are excluded and counted.
    """

    by_class: dict  # class -> (mean, stderr)
    by_tile: dict  # (tile, class) -> mean response
    excluded_tiles: int
    replicates: int


def _mean_rates(models, net, streamset, delta_horizon, max_columns):
    preds = evaluate.predict_holdout(models, net, streamset, delta_horizon,
                                     max_columns)
    return preds.groupby(["tile", "class"])["score"].mean()


def response(models: dict, net, streamset, spec: PerturbationSpec,
             delta_horizon: int = 7,
             max_columns: int = 500) -> ResponseResult:
    """Measure predicted-rate response to perturbed input histories.

    Perturbations are applied to holdout-period inputs only; models are
    fixed. Zero deltas take the identical code path, so the null
    perturbation response is exactly zero.
    """
    spec.validate()
    baseline = _mean_rates(models, net, streamset, delta_horizon, max_columns)

    per_rep = []
    for rep in range(spec.replicates):
        perturbed = _perturbed_copy(streamset, spec, rep)
        rates = _mean_rates(models, net, perturbed, delta_horizon, max_columns)
        per_rep.append(rates)

    by_tile = {}
    excluded = 0
    per_rep_class = [dict() for _ in per_rep]
    for key in baseline.index:
        base = baseline[key]
        if base == 0.0:
            excluded += 1
            continue
        rel = [(r[key] - base) / base for r in per_rep]
        by_tile[(int(key[0]), str(key[1]))] = float(np.mean(rel))
        for i, v in enumerate(rel):
            per_rep_class[i].setdefault(str(key[1]), []).append(v)

    by_class = {}
    for cls in streamset.classes:
        rep_means = [float(np.mean(d[cls])) for d in per_rep_class if cls in d]
        if not rep_means:
            continue
        mean = float(np.mean(rep_means))
        stderr = (float(np.std(rep_means, ddof=1) / np.sqrt(len(rep_means)))
                  if len(rep_means) > 1 else 0.0)
        by_class[cls] = (mean, stderr)
    return ResponseResult(by_class=by_class, by_tile=by_tile,
                          excluded_tiles=excluded, replicates=spec.replicates)


def _perturbed_copy(streamset, spec: PerturbationSpec, replicate: int):
    """Copy of the stream set with holdout-period inputs perturbed."""
    import copy

    out = copy.copy(streamset)
    out.streams = dict(streamset.streams)
    m = streamset.train_days
    for idx, (tile, cls) in enumerate(sorted(streamset.streams)):
        d = spec.deltas.get(cls, 0.0)
        if d == 0.0:
            continue
        full = streamset.streams[(tile, cls)]
        tail = full[m:]
        if not (0.0 < tail.mean() < 1.0):
            continue  # nothing to perturb in this tile's holdout
        seed = (spec.seed * 1_000_003 + replicate * 9_973 + idx) & 0x7FFFFFFF
        new = full.copy()
        new[m:] = inject(tail, d, seed)
        out.streams[(tile, cls)] = new
    return out


@dataclass
class ResponseSurface:
    """Grid of responses over paired class perturbations."""

    delta_classes: tuple  # the two perturbed classes (x, y)
    cells: pd.DataFrame  # delta_v, delta_u, class, mean_response, stderr,
    #                      n_valid_tiles, valid


def sweep_surface(models: dict, net, streamset, delta_grid_v, delta_grid_u,
                  classes=("violent", "property"), seed: int = 0,
                  replicates: int = DEFAULT_REPLICATES, delta_horizon: int = 7,
                  max_columns: int = 500) -> ResponseSurface:
    """Full factorial perturbation sweep over (violent, property) deltas.

    Infeasible cells are marked invalid and skipped; the (0, 0) cell is
    exactly zero by construction.
    """
    cls_v, cls_u = classes
    rows = []
    for dv in delta_grid_v:
        for du in delta_grid_u:
            spec = PerturbationSpec(deltas={cls_v: dv, cls_u: du}, seed=seed,
                                    replicates=replicates)
            try:
                res = response(models, net, streamset, spec, delta_horizon,
                               max_columns)
            except PerturbError:
                for cls in streamset.classes:
                    rows.append((dv, du, cls, np.nan, np.nan, 0, False))
                continue
            n_valid = len({t for t, _ in res.by_tile})
            for cls in streamset.classes:
                mean, stderr = res.by_class.get(cls, (np.nan, np.nan))
                rows.append((dv, du, cls, mean, stderr, n_valid, True))
    cells = pd.DataFrame(rows, columns=["delta_v", "delta_u", "class",
                                        "mean_response", "stderr",
                                        "n_valid_tiles", "valid"])
    return ResponseSurface(delta_classes=(cls_v, cls_u), cells=cells)


@dataclass
class RegressionReport:
    coefficients: dict  # covariate -> slope (standardized covariates)
    stderrs: dict
    r_squared: float
    n: int
    dropped_covariates: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"n = {self.n}   R^2 = {self.r_squared:.4f}"]
        for name, coef in self.coefficients.items():
            lines.append(f"  {name:16s} {coef:+.6f}  (se {self.stderrs[name]:.6f})")
        if self.dropped_covariates:
            lines.append("dropped (collinear): " + ", ".join(self.dropped_covariates))
        return "\n".join(lines) + "\n"


def tile_to_region(grid, tiles, regions_geojson: dict) -> dict:
    """Join tiles to regions by tile-center point-in-polygon."""
    from shapely.geometry import Point, shape

    shapes = []
    for feat in regions_geojson["features"]:
        rid = str(feat["properties"]["region_id"])
        shapes.append((rid, shape(feat["geometry"])))
    joined = {}
    for tile in tiles:
        lat, lon = grid.center(tile)
        pt = Point(lon, lat)
        for rid, geom in shapes:
            if geom.covers(pt):
                joined[tile] = rid
                break
    return joined


def ses_regression(tile_responses: dict, ses_records, tile_region: dict,
                   covariates=None) -> RegressionReport:
    """OLS of per-tile arrest-rate response on standardized SES covariates.

    Collinear covariates are dropped (with a report) until the design is
    full rank.
    """
    if covariates is None:
        covariates = list(SES_COVARIATES)
    ses_by_region = {r.region_id: r for r in ses_records}
    rows = []
    y = []
    for tile, resp in sorted(tile_responses.items()):
        region = tile_region.get(tile)
        if region is None or region not in ses_by_region:
            raise PerturbError(f"tile {tile} has no SES region join")
        rec = ses_by_region[region]
        rows.append([getattr(rec, cov) for cov in covariates])
        y.append(resp)
    X = np.asarray(rows, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) <= len(covariates) + 1:
        raise PerturbError("not enough tiles for the regression design")

    # standardize; constant covariates are degenerate and dropped
    dropped = []
    keep = []
    for j, cov in enumerate(covariates):
        sd = X[:, j].std(ddof=0)
        if sd == 0:
            dropped.append(cov)
        else:
            keep.append(j)
    names = [covariates[j] for j in keep]
    Z = (X[:, keep] - X[:, keep].mean(axis=0)) / X[:, keep].std(axis=0, ddof=0)

    # drop collinear columns until full rank
    while names:
        design = sm.add_constant(Z)
        if np.linalg.matrix_rank(design) == design.shape[1]:
            break
        dropped.append(names.pop())
        Z = Z[:, : len(names)]
    fit = sm.OLS(y, sm.add_constant(Z)).fit()
    coefs = {"const": float(fit.params[0])}
    errs = {"const": float(fit.bse[0])}
    for i, name in enumerate(names):
        coefs[name] = float(fit.params[i + 1])
        errs[name] = float(fit.bse[i + 1])
    return RegressionReport(coefficients=coefs, stderrs=errs,
                            r_squared=float(fit.rsquared), n=len(y),
                            dropped_covariates=dropped)
