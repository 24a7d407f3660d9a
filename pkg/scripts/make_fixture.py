#!/usr/bin/env python3
"""Regenerate the shipped 50-tile synthetic fixture under fixtures/.

Produces an event log, an SES table, and region polygons with plausible
self- and cross-correlated structure so the full pipeline has signal to
find. Deterministic for a fixed seed.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
from pathlib import Path

import numpy as np

ROWS, COLS = 10, 5
CELL_H, CELL_W = 0.00276, 0.0035
MIN_LAT, MIN_LON = 41.80, -87.70
TRAIN_START = dt.date(2015, 1, 1)
TRAIN_END = dt.date(2016, 12, 31)
HOLDOUT_END = dt.date(2017, 6, 30)

VIOLENT_CATS = ["BATTERY", "ASSAULT", "HOMICIDE"]
PROPERTY_CATS = ["THEFT", "BURGLARY", "MOTOR VEHICLE THEFT"]


def simulate(seed: int):
    rng = np.random.default_rng(seed)
    n_tiles = ROWS * COLS
    total = (HOLDOUT_END - TRAIN_START).days + 1

    # Markov self-structure per (tile, class), with one lagged cross
    # coupling per tile: yesterday's property activity nudges violent.
    base_v = rng.uniform(0.15, 0.35, n_tiles)
    base_u = rng.uniform(0.20, 0.40, n_tiles)
    stay_boost = 0.25
    cross = 0.15
    v = np.zeros((n_tiles, total), dtype=np.uint8)
    u = np.zeros((n_tiles, total), dtype=np.uint8)
    for t in range(total):
        for i in range(n_tiles):
            pu = base_u[i] + (stay_boost if t > 0 and u[i, t - 1] else 0.0)
            u[i, t] = rng.random() < min(pu, 0.95)
            pv = base_v[i] + (stay_boost if t > 0 and v[i, t - 1] else 0.0)
            if t > 1 and u[i, t - 2]:
                pv += cross
            v[i, t] = rng.random() < min(pv, 0.95)

    # Arrests ride on crime days; the arrest propensity varies by region
    # so the SES regression has signal.
    region = np.array([(i // COLS >= ROWS // 2) * 2 + (i % COLS >= COLS // 2)
                       for i in range(n_tiles)])
    arrest_p = np.array([0.6, 0.45, 0.3, 0.2])[region]
    return v, u, arrest_p, region, rng


def write_events(path: Path, v, u, arrest_p, rng) -> int:
    n_tiles, total = v.shape
    lines = ["date,latitude,longitude,category,count"]
    n = 0
    for t in range(total):
        date = (TRAIN_START + dt.timedelta(days=t)).isoformat()
        for i in range(n_tiles):
            r, c = divmod(i, COLS)
            any_crime = False
            for present, cats in ((v[i, t], VIOLENT_CATS), (u[i, t], PROPERTY_CATS)):
                if not present:
                    continue
                any_crime = True
                lat = MIN_LAT + (r + rng.uniform(0.1, 0.9)) * CELL_H
                lon = MIN_LON + (c + rng.uniform(0.1, 0.9)) * CELL_W
                cat = cats[rng.integers(len(cats))]
                count = 0
                lines.append(f"{date},{lat:.6f},{lon:.6f},{cat},{count}")
                n += 1
            if any_crime and rng.random() < arrest_p[i]:
                # mark the arrest on the last event of this tile/day
                parts = lines[-1].rsplit(",", 1)
                lines[-1] = parts[0] + ",1"
    path.write_text("\n".join(lines) + "\n")
    return n


def write_ses(path: Path) -> None:
    rows = ["region_id,crowded_pct,poverty_pct,unemployed_pct,income_pc,hardship",
            "R0,3.2,8.5,5.1,48000,18",
            "R1,5.8,14.2,8.3,36500,35",
            "R2,9.4,22.7,12.9,24800,61",
            "R3,14.1,31.3,18.2,16900,88"]
    path.write_text("\n".join(rows) + "\n")


def write_regions(path: Path) -> None:
    mid_lat = MIN_LAT + (ROWS // 2) * CELL_H
    mid_lon = MIN_LON + (COLS // 2) * CELL_W
    max_lat = MIN_LAT + ROWS * CELL_H
    max_lon = MIN_LON + COLS * CELL_W
    boxes = {
        "R0": (MIN_LAT, MIN_LON, mid_lat, mid_lon),
        "R1": (MIN_LAT, mid_lon, mid_lat, max_lon),
        "R2": (mid_lat, MIN_LON, max_lat, mid_lon),
        "R3": (mid_lat, mid_lon, max_lat, max_lon),
    }
    features = []
    for rid, (la0, lo0, la1, lo1) in boxes.items():
        ring = [[lo0, la0], [lo1, la0], [lo1, la1], [lo0, la1], [lo0, la0]]
        features.append({"type": "Feature",
                         "geometry": {"type": "Polygon", "coordinates": [ring]},
                         "properties": {"region_id": rid}})
    path.write_text(json.dumps({"type": "FeatureCollection",
                                "features": features}, indent=2))


def write_config(path: Path) -> None:
    cfg = f"""\
# Run configuration for the shipped 50-tile synthetic fixture.
events: events.csv
ses: ses.csv
regions: regions.geojson
output: ../out/fixture_run

schema: crime
min_lat: {MIN_LAT}
min_lon: {MIN_LON}
max_lat: {MIN_LAT + ROWS * CELL_H}
max_lon: {MIN_LON + COLS * CELL_W}
cell_height: {CELL_H}
cell_width: {CELL_W}

train_start: {TRAIN_START.isoformat()}
train_end: {TRAIN_END.isoformat()}
holdout_end: {HOLDOUT_END.isoformat()}

min_event_fraction: 0.05

dmax: 5
max_depth: 3
epsilon: 0.05
n_min: 10
gamma_min: 0.02
gamma_direction: ge

rounds: 50
tree_depth: 2
learning_rate: 0.1
subsample: 0.8
seed: 7
max_columns: 100
validation_fraction: 0.2

delta: 2
hit_window: 1

riskmap_tail_days: 45

perturb_deltas_v: [-0.1, 0.0, 0.1]
perturb_deltas_u: [-0.1, 0.0, 0.1]
perturb_classes: [violent, property]
response_class: arrests
perturb_replicates: 3
perturb_seed: 11
regression_cell: [0.1, 0.1]

parallelism: 1
"""
    path.write_text(cfg)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=20240501)
    parser.add_argument("--out", default=Path(__file__).parent.parent / "fixtures")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    v, u, arrest_p, region, rng = simulate(args.seed)
    n = write_events(out / "events.csv", v, u, arrest_p, rng)
    write_ses(out / "ses.csv")
    write_regions(out / "regions.geojson")
    write_config(out / "config.yaml")
    print(f"wrote {n} events for {v.shape[0]} tiles over {v.shape[1]} days to {out}")


if __name__ == "__main__":
    main()
