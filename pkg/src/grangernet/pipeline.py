"""Resumable pipeline stages with manifest-verified artifacts.

Each stage writes its outputs atomically plus a manifest recording the
config hash and the SHA-256 of every input and output. Re-running a
completed stage with unchanged config and inputs is a no-op; artifacts
from a different config in the same output directory are refused.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import os
import time
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from . import ensemble, evaluate, ingest, network, perturb, quantize
from .config import RunConfig
from .ensemble import BoostModel, FeatureMatrix
from .network import GrangerNet
from .quantize import StreamSet
from .xpfsa import XpfsaParams

STAGE_ORDER = ["ingest", "quantize", "sweep", "fit", "predict", "evaluate",
               "riskmap", "perturb", "diffusion", "report"]

STAGE_DEPS = {
    "ingest": [],
    "quantize": ["ingest"],
    "sweep": ["quantize"],
    "fit": ["sweep"],
    "predict": ["fit"],
    "evaluate": ["predict"],
    "riskmap": ["predict"],
    "perturb": ["fit"],
    "diffusion": ["sweep"],
    "report": ["evaluate"],
}

FLOAT_FMT = "%.12g"


class PipelineError(Exception):
    pass


class StaleArtifactError(PipelineError):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path: Path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _manifest_path(out: Path, stage: str) -> Path:
    return out / f"manifest_{stage}.json"


def _stage_inputs(cfg: RunConfig, stage: str) -> list:
    """External files a stage reads, beyond upstream artifacts."""
    files = []
    if stage == "ingest":
        files.append(cfg.events_path)
    if stage == "perturb":
        if cfg.ses_path is not None:
            files.append(cfg.ses_path)
        if cfg.regions_path is not None:
            files.append(cfg.regions_path)
    return [Path(f) for f in files if f is not None and Path(f).exists()]


def _collect_input_hashes(cfg: RunConfig, stage: str, out: Path) -> dict:
    hashes = {}
    for f in _stage_inputs(cfg, stage):
        hashes[str(f)] = _sha256(f)
    for dep in STAGE_DEPS[stage]:
        mpath = _manifest_path(out, dep)
        manifest = json.loads(mpath.read_text())
        for rel, digest in manifest["outputs"].items():
            hashes[f"{dep}:{rel}"] = digest
    return hashes


def _verify_deps(cfg: RunConfig, stage: str, out: Path) -> None:
    for dep in STAGE_DEPS[stage]:
        mpath = _manifest_path(out, dep)
        if not mpath.exists():
            raise PipelineError(
                f"stage {stage!r} requires {dep!r}; missing manifest {mpath}")
        manifest = json.loads(mpath.read_text())
        if manifest["config_hash"] != cfg.config_hash():
            raise StaleArtifactError(
                f"artifacts for stage {dep!r} were produced by a different "
                "config; use a clean output directory")
        for rel, digest in manifest["outputs"].items():
            fpath = out / rel
            if not fpath.exists() or _sha256(fpath) != digest:
                raise StaleArtifactError(
                    f"artifact {rel} of stage {dep!r} is missing or was "
                    "modified after it was written")


def run_stage(cfg: RunConfig, stage: str) -> str:
    """Run one pipeline stage. Returns "ran" or "skipped" (no-op)."""
    if stage not in STAGE_DEPS:
        raise PipelineError(f"unknown stage {stage!r}; valid: {STAGE_ORDER}")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _verify_deps(cfg, stage, out)

    input_hashes = _collect_input_hashes(cfg, stage, out)
    mpath = _manifest_path(out, stage)
    if mpath.exists():
        manifest = json.loads(mpath.read_text())
        if manifest["config_hash"] != cfg.config_hash():
            raise StaleArtifactError(
                f"output directory already holds a {stage!r} run from a "
                "different config; use a clean output directory")
        outputs_ok = all(
            (out / rel).exists() and _sha256(out / rel) == digest
            for rel, digest in manifest["outputs"].items())
        if manifest["inputs"] == input_hashes and outputs_ok:
            return "skipped"

    start = time.time()
    outputs = _STAGE_FUNCS[stage](cfg, out)
    manifest = {
        "stage": stage,
        "config_hash": cfg.config_hash(),
        "inputs": input_hashes,
        "outputs": {rel: _sha256(out / rel) for rel in outputs},
        "elapsed_s": round(time.time() - start, 3),
        "written_at": dt.datetime.now(dt.timezone.utc).isoformat(),
    }
    write_atomic(mpath, json.dumps(manifest, indent=2, sort_keys=True))
    return "ran"


def run_all(cfg: RunConfig, stages=None) -> dict:
    results = {}
    for stage in stages or STAGE_ORDER:
        results[stage] = run_stage(cfg, stage)
    return results


# --- stage implementations -------------------------------------------------

CLASSIFIED_CSV = "events_classified.csv"
STREAMS_FILE = "streams.bin"
EDGES_CSV = "edges.csv"
SWEEP_DIR = "sweep_checkpoints"
MODELS_DIR = "models"
PREDICTIONS_CSV = "predictions.csv"


def _stage_ingest(cfg: RunConfig, out: Path) -> list:
    parsed = ingest.parse_event_log(cfg.events_path, cfg.schema)
    cmap = ingest.default_class_map(cfg.schema).with_extra(cfg.extra_class_map)
    classified, ignored = ingest.classify_events(parsed.events, cmap)
    lines = ["date,latitude,longitude,category,class"]
    for e in classified:
        lines.append(f"{e.date.isoformat()},{e.latitude!r},{e.longitude!r},"
                     f"{e.category},{e.cls}")
    write_atomic(out / CLASSIFIED_CSV, "\n".join(lines) + "\n")
    summary = {"total_rows": parsed.total_rows, "malformed": parsed.malformed,
               "ignored": ignored, "classified": len(classified)}
    write_atomic(out / "ingest_summary.json",
                 json.dumps(summary, indent=2, sort_keys=True))
    return [CLASSIFIED_CSV, "ingest_summary.json"]


def _read_classified(out: Path):
    events = []
    with open(out / CLASSIFIED_CSV) as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            events.append(ingest.ClassifiedEvent(
                dt.date.fromisoformat(row[0]), float(row[1]), float(row[2]),
                row[3], row[4]))
    return events


def _stage_quantize(cfg: RunConfig, out: Path) -> list:
    events = _read_classified(out)
    grid = quantize.build_grid(cfg.min_lat, cfg.min_lon, cfg.max_lat,
                               cfg.max_lon, cfg.cell_height, cfg.cell_width)
    sset = quantize.rasterize(events, grid, cfg.train_start, cfg.train_days,
                              cfg.holdout_days)
    count_class = ingest.default_class_map(cfg.schema).count_class
    crime_classes = [c for c in sset.classes if c != count_class]
    pruned = quantize.prune_sparse(sset, cfg.min_event_fraction,
                                   crime_classes or None)
    pruned.save(out / STREAMS_FILE)

    rates = [float(pruned.training(v).mean()) for v in pruned.variables]
    ent = []
    for v in pruned.variables:
        try:
            ent.append(quantize.entropy_rate(pruned.training(v), k=1))
        except quantize.QuantizeError:
            pass
    summary = {
        "tiles_before": len(sset.tiles), "tiles_after": len(pruned.tiles),
        "variables": len(pruned.variables),
        "excluded_events": pruned.excluded_events,
        "mean_event_rate": float(np.mean(rates)) if rates else 0.0,
        "mean_entropy_rate_bits": float(np.mean(ent)) if ent else None,
        "grid": grid.to_dict(),
    }
    write_atomic(out / "quantize_summary.json",
                 json.dumps(summary, indent=2, sort_keys=True))
    return [STREAMS_FILE, "quantize_summary.json"]


def _sweep_args(cfg: RunConfig, sset: StreamSet):
    streams = {v: sset.training(v) for v in sset.variables}
    params = XpfsaParams(max_depth=cfg.max_depth, epsilon=cfg.epsilon,
                         n_min=cfg.n_min)
    return streams, params


def _stage_sweep(cfg: RunConfig, out: Path) -> list:
    sset = StreamSet.load(out / STREAMS_FILE)
    streams, params = _sweep_args(cfg, sset)
    net = network.sweep(streams, cfg.dmax, params, cfg.gamma_min,
                        cfg.gamma_direction, n_jobs=cfg.parallelism,
                        checkpoint_dir=out / SWEEP_DIR)
    write_atomic(out / EDGES_CSV, net.to_csv())
    summary = {
        "attempted": net.attempted, "retained": net.retained,
        "bound": network.attempted_bound(len(sset.variables), cfg.dmax),
        "dmax": cfg.dmax, "gamma_min": cfg.gamma_min,
        "gamma_direction": cfg.gamma_direction,
    }
    write_atomic(out / "sweep_summary.json",
                 json.dumps(summary, indent=2, sort_keys=True))
    return [EDGES_CSV, "sweep_summary.json"]


def _load_net(cfg: RunConfig, out: Path, sset: StreamSet) -> GrangerNet:
    streams, params = _sweep_args(cfg, sset)
    return network.sweep(streams, cfg.dmax, params, cfg.gamma_min,
                         cfg.gamma_direction, checkpoint_dir=out / SWEEP_DIR)


def _model_name(var) -> str:
    return f"model_{var[0]}_{var[1]}.bin"


def _stage_fit(cfg: RunConfig, out: Path) -> list:
    sset = StreamSet.load(out / STREAMS_FILE)
    net = _load_net(cfg, out, sset)
    mdir = out / MODELS_DIR
    mdir.mkdir(parents=True, exist_ok=True)
    outputs = []
    fallbacks = 0
    m = sset.train_days
    for var in sset.variables:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fm = ensemble.build_features(net, sset.streams, var, cfg.delta,
                                             t_end=m - cfg.delta,
                                             max_columns=cfg.max_columns)
                n_val = max(int(cfg.validation_fraction * len(fm.t_index)), 1)
                train = FeatureMatrix(fm.X[:-n_val], fm.y[:-n_val],
                                      fm.t_index[:-n_val], fm.columns, fm.delta)
                model = ensemble.fit_boost(train, cfg.rounds, cfg.tree_depth,
                                           cfg.learning_rate, cfg.subsample,
                                           cfg.seed)
                try:
                    ensemble.tune_threshold(model, fm.X[-n_val:], fm.y[-n_val:],
                                            cfg.threshold_objective)
                except ensemble.EnsembleError:
                    model.threshold = 0.5
        except ensemble.EnsembleError:
            model = ensemble.constant_model(float(sset.training(var).mean()),
                                            cfg.delta)
            model.threshold = 0.5
            fallbacks += 1
        name = _model_name(var)
        model.save(mdir / name)
        outputs.append(f"{MODELS_DIR}/{name}")
    summary = {"models": len(outputs), "marginal_fallbacks": fallbacks}
    write_atomic(out / "fit_summary.json",
                 json.dumps(summary, indent=2, sort_keys=True))
    outputs.append("fit_summary.json")
    return outputs


def _load_models(out: Path, sset: StreamSet) -> dict:
    models = {}
    for var in sset.variables:
        path = out / MODELS_DIR / _model_name(var)
        if path.exists():
            models[var] = BoostModel.load(path)
    return models


def _stage_predict(cfg: RunConfig, out: Path) -> list:
    sset = StreamSet.load(out / STREAMS_FILE)
    net = _load_net(cfg, out, sset)
    models = _load_models(out, sset)
    preds = evaluate.predict_holdout(models, net, sset, cfg.delta,
                                     cfg.max_columns)
    lines = ["issue_date,pred_date,tile_row,tile_col,class,score,decision"]
    for rec in preds.itertuples(index=False):
        issue = sset.start_date + dt.timedelta(days=int(rec.issue_day))
        pday = sset.start_date + dt.timedelta(days=int(rec.pred_day))
        r, c = divmod(int(rec.tile), sset.grid.cols)
        lines.append(f"{issue.isoformat()},{pday.isoformat()},{r},{c},"
                     f"{rec._3},{FLOAT_FMT % rec.score},{int(rec.decision)}")
    write_atomic(out / PREDICTIONS_CSV, "\n".join(lines) + "\n")
    return [PREDICTIONS_CSV]


def _read_predictions(out: Path, sset: StreamSet) -> pd.DataFrame:
    df = pd.read_csv(out / PREDICTIONS_CSV)
    df["issue_day"] = df["issue_date"].map(
        lambda s: (dt.date.fromisoformat(s) - sset.start_date).days)
    df["pred_day"] = df["pred_date"].map(
        lambda s: (dt.date.fromisoformat(s) - sset.start_date).days)
    df["tile"] = df["tile_row"] * sset.grid.cols + df["tile_col"]
    return df


def _stage_evaluate(cfg: RunConfig, out: Path) -> list:
    sset = StreamSet.load(out / STREAMS_FILE)
    preds = _read_predictions(out, sset)
    labeled, dropped = evaluate.hit_match(preds, sset, cfg.hit_window)
    outputs = []
    for name, by in (("auc_by_tile_class.csv", ["tile", "class"]),
                     ("auc_by_tile.csv", ["tile"]),
                     ("auc_pooled.csv", [])):
        table = evaluate.auc_summary(labeled, by)
        write_atomic(out / name, table.to_csv(index=False,
                                              float_format=FLOAT_FMT))
        outputs.append(name)
    summary_cols = ["pred_date", "tile_row", "tile_col", "class", "score",
                    "decision", "label"]
    write_atomic(out / "labeled_predictions.csv",
                 labeled[summary_cols].to_csv(index=False,
                                              float_format=FLOAT_FMT))
    outputs.append("labeled_predictions.csv")
    write_atomic(out / "evaluate_summary.json", json.dumps(
        {"records": len(labeled), "dropped_past_end": dropped},
        indent=2, sort_keys=True))
    outputs.append("evaluate_summary.json")
    return outputs


def _stage_riskmap(cfg: RunConfig, out: Path) -> list:
    sset = StreamSet.load(out / STREAMS_FILE)
    net = _load_net(cfg, out, sset)
    models = _load_models(out, sset)

    # sigma^2 tuned against the training tail, never the holdout
    tail = min(cfg.riskmap_tail_days,
               sset.train_days - cfg.delta - cfg.max_depth - cfg.dmax - 1)
    s2 = evaluate.sigma_grid_km2(sset.grid, cfg.sigma_grid_n,
                                 cfg.sigma_lo_tiles, cfg.sigma_hi_tiles)[0]
    if tail > 2:
        tailset = StreamSet(
            grid=sset.grid, start_date=sset.start_date,
            train_days=sset.train_days - tail, holdout_days=tail,
            classes=sset.classes,
            streams={v: s[: sset.train_days] for v, s in sset.streams.items()})
        tail_preds = evaluate.predict_holdout(models, net, tailset, cfg.delta,
                                              cfg.max_columns)
        daily_pred = {}
        for rec in tail_preds[tail_preds["decision"]].itertuples(index=False):
            daily_pred.setdefault(int(rec.pred_day), []).append(int(rec.tile))
        daily_truth = {}
        for v in sset.variables:
            stream = sset.streams[v]
            for day in range(sset.train_days - tail, sset.train_days):
                if stream[day]:
                    daily_truth.setdefault(day, []).append(v[0])
        s2 = evaluate.tune_sigma(
            daily_pred, daily_truth, sset.grid,
            evaluate.sigma_grid_km2(sset.grid, cfg.sigma_grid_n,
                                    cfg.sigma_lo_tiles, cfg.sigma_hi_tiles),
            cfg.riskmap_area_fraction)

    preds = _read_predictions(out, sset)
    daily = {}
    for rec in preds[preds["decision"] == 1].itertuples(index=False):
        daily.setdefault(int(rec.pred_day), set()).add(int(rec.tile))
    lines = ["date,row,col,intensity"]
    geo_dir = out / "riskmaps_geojson"
    geo_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for day in sorted(daily):
        rm = evaluate.risk_map(sorted(daily[day]), sset.grid, s2, day)
        date = (sset.start_date + dt.timedelta(days=day)).isoformat()
        for r in range(rm.intensity.shape[0]):
            for c in range(rm.intensity.shape[1]):
                val = rm.intensity[r, c]
                if val > 0:
                    lines.append(f"{date},{r},{c},{FLOAT_FMT % val}")
        gname = f"riskmaps_geojson/{date}.geojson"
        write_atomic(out / gname, evaluate.risk_map_to_geojson(rm, sset.grid))
        outputs.append(gname)
    write_atomic(out / "riskmaps.csv", "\n".join(lines) + "\n")
    write_atomic(out / "riskmap_summary.json", json.dumps(
        {"sigma2_km2": s2, "days": len(daily)}, indent=2, sort_keys=True))
    return ["riskmaps.csv", "riskmap_summary.json"] + outputs


def _stage_perturb(cfg: RunConfig, out: Path) -> list:
    sset = StreamSet.load(out / STREAMS_FILE)
    net = _load_net(cfg, out, sset)
    models = _load_models(out, sset)
    surface = perturb.sweep_surface(
        models, net, sset, cfg.perturb_deltas_v, cfg.perturb_deltas_u,
        classes=cfg.perturb_classes, seed=cfg.perturb_seed,
        replicates=cfg.perturb_replicates, delta_horizon=cfg.delta,
        max_columns=cfg.max_columns)
    cols = ["delta_v", "delta_u", "class", "mean_response", "stderr",
            "n_valid_tiles"]
    write_atomic(out / "surface.csv",
                 surface.cells[cols].to_csv(index=False,
                                            float_format=FLOAT_FMT))
    outputs = ["surface.csv"]

    if cfg.ses_path is not None and cfg.regions_path is not None:
        spec = perturb.PerturbationSpec(
            deltas={cfg.perturb_classes[0]: cfg.regression_cell[0],
                    cfg.perturb_classes[1]: cfg.regression_cell[1]},
            seed=cfg.perturb_seed, replicates=cfg.perturb_replicates)
        res = perturb.response(models, net, sset, spec, cfg.delta,
                               cfg.max_columns)
        arrest_resp = {t: v for (t, c), v in res.by_tile.items()
                       if c == cfg.response_class}
        ses = ingest.load_ses(cfg.ses_path)
        regions = json.loads(Path(cfg.regions_path).read_text())
        joined = perturb.tile_to_region(sset.grid, sorted(arrest_resp),
                                        regions)
        report = perturb.ses_regression(arrest_resp, ses, joined)
        reg_lines = ["covariate,coefficient,stderr"]
        for name, coef in report.coefficients.items():
            reg_lines.append(f"{name},{FLOAT_FMT % coef},"
                             f"{FLOAT_FMT % report.stderrs[name]}")
        write_atomic(out / "regression.csv", "\n".join(reg_lines) + "\n")
        write_atomic(out / "regression.txt", report.to_text())
        outputs += ["regression.csv", "regression.txt"]
    return outputs


def _stage_diffusion(cfg: RunConfig, out: Path) -> list:
    sset = StreamSet.load(out / STREAMS_FILE)
    net = _load_net(cfg, out, sset)
    lines = ["class,delay,edge_count,rate_k0,rate_total"]
    for cls in sset.classes:
        counts = np.zeros(cfg.dmax + 1)
        for e in net.all_edges():
            if e.key.src[1] == cls:
                counts[e.key.delay] += 1
        for k in range(cfg.dmax + 1):
            r0 = counts[k] / counts[0] if counts[0] else 0.0
            rt = counts[k] / counts.sum() if counts.sum() else 0.0
            lines.append(f"{cls},{k},{int(counts[k])},{FLOAT_FMT % r0},"
                         f"{FLOAT_FMT % rt}")
    write_atomic(out / "diffusion.csv", "\n".join(lines) + "\n")
    return ["diffusion.csv"]


def _stage_report(cfg: RunConfig, out: Path) -> list:
    pooled = pd.read_csv(out / "auc_pooled.csv")
    by_tile = pd.read_csv(out / "auc_by_tile.csv")
    sweep_summary = json.loads((out / "sweep_summary.json").read_text())
    summary = {
        "pooled_auc": (None if pooled["auc"].isna().all()
                       else float(pooled["auc"].iloc[0])),
        "mean_tile_auc": (None if by_tile["auc"].isna().all()
                          else float(by_tile["auc"].mean(skipna=True))),
        "n_tiles_scored": int(by_tile["auc"].notna().sum()),
        "sweep": sweep_summary,
    }
    write_atomic(out / "report_summary.json",
                 json.dumps(summary, indent=2, sort_keys=True))
    auc = by_tile[by_tile["auc"].notna()].sort_values("tile")
    write_atomic(out / "report_auc_distribution.csv",
                 auc.to_csv(index=False, float_format=FLOAT_FMT))
    return ["report_summary.json", "report_auc_distribution.csv"]


_STAGE_FUNCS = {
    "ingest": _stage_ingest,
    "quantize": _stage_quantize,
    "sweep": _stage_sweep,
    "fit": _stage_fit,
    "predict": _stage_predict,
    "evaluate": _stage_evaluate,
    "riskmap": _stage_riskmap,
    "perturb": _stage_perturb,
    "diffusion": _stage_diffusion,
    "report": _stage_report,
}
