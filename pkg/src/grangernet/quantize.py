"""Spatial tiling, temporal quantization, sparse-tile pruning.

Events are discretized onto a rectangular lat/lon grid with a fixed time
quantum (1 day by default), producing one Boolean stream per (tile, class):
value 1 iff at least one event of that class fell in that tile on that day.
Tiles whose event-day fraction over the training window is below a
threshold are pruned.
"""

from __future__ import annotations

import datetime as dt
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .geo import haversine_km

# Paper-scale defaults: city tiles ~1000 ft across; terror tiles 1 deg x 2 deg.
CRIME_CELL_HEIGHT_DEG = 0.00276
CRIME_CELL_WIDTH_DEG = 0.0035
TERROR_CELL_HEIGHT_DEG = 1.0
TERROR_CELL_WIDTH_DEG = 2.0
DEFAULT_MIN_EVENT_FRACTION = 0.05


class QuantizeError(Exception):
    pass


@dataclass(frozen=True)
class TileGrid:
    origin_lat: float  # south-west corner
    origin_lon: float
    cell_height: float  # degrees latitude
    cell_width: float  # degrees longitude
    rows: int
    cols: int

    @property
    def n_tiles(self) -> int:
        return self.rows * self.cols

    def tile_of(self, lat: float, lon: float):
        """Tile index for a point, or None if outside the grid."""
        r = int(np.floor((lat - self.origin_lat) / self.cell_height))
        c = int(np.floor((lon - self.origin_lon) / self.cell_width))
        if 0 <= r < self.rows and 0 <= c < self.cols:
            return r * self.cols + c
        return None

    def center(self, tile: int):
        r, c = divmod(tile, self.cols)
        return (self.origin_lat + (r + 0.5) * self.cell_height,
                self.origin_lon + (c + 0.5) * self.cell_width)

    def diagonal_km(self, lat: float | None = None) -> float:
        """Great-circle length of one cell diagonal, at the given latitude."""
        if lat is None:
            lat = self.origin_lat + self.rows * self.cell_height / 2.0
        return haversine_km(lat, 0.0, lat + self.cell_height, self.cell_width)

    def to_dict(self) -> dict:
        return {"origin_lat": self.origin_lat, "origin_lon": self.origin_lon,
                "cell_height": self.cell_height, "cell_width": self.cell_width,
                "rows": self.rows, "cols": self.cols}

    @classmethod
    def from_dict(cls, d: dict) -> "TileGrid":
        return cls(**d)


def build_grid(min_lat: float, min_lon: float, max_lat: float, max_lon: float,
               cell_height: float, cell_width: float) -> TileGrid:
    """Rectangular grid fully covering the given bounds."""
    if cell_height <= 0 or cell_width <= 0:
        raise QuantizeError("cell sizes must be positive")
    if max_lat <= min_lat or max_lon <= min_lon:
        raise QuantizeError("degenerate bounds")
    rows = int(np.ceil((max_lat - min_lat) / cell_height - 1e-9))
    cols = int(np.ceil((max_lon - min_lon) / cell_width - 1e-9))
    return TileGrid(min_lat, min_lon, cell_height, cell_width, max(rows, 1), max(cols, 1))


@dataclass
class StreamSet:
    """Aligned Boolean streams for every (tile, class) variable.

    Streams cover training + holdout contiguously; the first
    ``train_days`` indices are the training window.
    """

    grid: TileGrid
    start_date: dt.date
    train_days: int
    holdout_days: int
    classes: list
    streams: dict = field(default_factory=dict)  # (tile, cls) -> uint8 array
    excluded_events: int = 0

    @property
    def total_days(self) -> int:
        return self.train_days + self.holdout_days

    @property
    def variables(self):
        return sorted(self.streams.keys(), key=lambda v: (v[0], v[1]))

    @property
    def tiles(self):
        return sorted({t for t, _ in self.streams})

    def training(self, var) -> np.ndarray:
        return self.streams[var][: self.train_days]

    def day_index(self, date: dt.date) -> int:
        return (date - self.start_date).days

    def save(self, path) -> None:
        """Persist as a single binary file: JSON header + bit-packed streams."""
        header = {
            "grid": self.grid.to_dict(),
            "start_date": self.start_date.isoformat(),
            "train_days": self.train_days,
            "holdout_days": self.holdout_days,
            "classes": list(self.classes),
            "variables": [[t, c] for t, c in self.variables],
            "excluded_events": self.excluded_events,
        }
        packed = {
            f"s{i}": np.packbits(self.streams[v])
            for i, v in enumerate(self.variables)
        }
        with open(path, "wb") as fh:
            np.savez_compressed(fh, header=json.dumps(header, sort_keys=True), **packed)

    @classmethod
    def load(cls, path) -> "StreamSet":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            total = header["train_days"] + header["holdout_days"]
            streams = {}
            for i, (t, c) in enumerate(header["variables"]):
                bits = np.unpackbits(data[f"s{i}"])[:total]
                streams[(int(t), str(c))] = bits.astype(np.uint8)
        return cls(
            grid=TileGrid.from_dict(header["grid"]),
            start_date=dt.date.fromisoformat(header["start_date"]),
            train_days=header["train_days"],
            holdout_days=header["holdout_days"],
            classes=header["classes"],
            streams=streams,
            excluded_events=header["excluded_events"],
        )

    def to_csv(self) -> str:
        """Human-inspectable export: one row per (tile, class) stream."""
        buf = io.StringIO()
        buf.write("tile,class,values\n")
        for (t, c) in self.variables:
            bits = "".join(map(str, self.streams[(t, c)].tolist()))
            buf.write(f"{t},{c},{bits}\n")
        return buf.getvalue()


def rasterize(events, grid: TileGrid, start_date: dt.date, train_days: int,
              holdout_days: int, classes=None) -> StreamSet:
    """Build Boolean streams from classified events.

    Events outside the grid or the date window are counted in
    ``excluded_events`` rather than silently dropped. Multiple events in
    the same (tile, class, day) collapse to a single 1.
    """
    if train_days <= 0 or holdout_days < 0:
        raise QuantizeError("window must have positive training length")
    if classes is None:
        classes = sorted({e.cls for e in events})
    total = train_days + holdout_days
    streams = {
        (t, c): np.zeros(total, dtype=np.uint8)
        for t in range(grid.n_tiles) for c in classes
    }
    excluded = 0
    for e in events:
        day = (e.date - start_date).days
        tile = grid.tile_of(e.latitude, e.longitude)
        if tile is None or not (0 <= day < total) or e.cls not in classes:
            excluded += 1
            continue
        streams[(tile, e.cls)][day] = 1
    return StreamSet(grid=grid, start_date=start_date, train_days=train_days,
                     holdout_days=holdout_days, classes=list(classes),
                     streams=streams, excluded_events=excluded)


def prune_sparse(streamset: StreamSet, min_event_fraction: float = DEFAULT_MIN_EVENT_FRACTION,
                 crime_classes=None) -> StreamSet:
    """Drop tiles whose event-day fraction over training is below threshold.

    The fraction counts training days with any event across
    ``crime_classes`` (default: every class except count-derived ones like
    arrests/casualties is not distinguished here, so all classes unless
    given). A retained tile keeps all its class streams; dropped tiles
    lose all of them. Boundary convention: fraction >= threshold is kept.
    """
    if not (0.0 < min_event_fraction < 1.0):
        raise QuantizeError("min_event_fraction must be in (0,1)")
    if crime_classes is None:
        crime_classes = list(streamset.classes)
    kept = {}
    for tile in streamset.tiles:
        union = np.zeros(streamset.train_days, dtype=np.uint8)
        for c in crime_classes:
            if (tile, c) in streamset.streams:
                union |= streamset.streams[(tile, c)][: streamset.train_days]
        if union.mean() >= min_event_fraction:
            for c in streamset.classes:
                if (tile, c) in streamset.streams:
                    kept[(tile, c)] = streamset.streams[(tile, c)]
    if not kept:
        raise QuantizeError("pruning removed all tiles; lower min_event_fraction")
    return StreamSet(grid=streamset.grid, start_date=streamset.start_date,
                     train_days=streamset.train_days,
                     holdout_days=streamset.holdout_days,
                     classes=list(streamset.classes), streams=kept,
                     excluded_events=streamset.excluded_events)


def entropy_rate(stream: np.ndarray, k: int = 1) -> float:
    """Block-entropy rate estimate H(k) - H(k-1), in bits per symbol.

    Diagnostic for discretization quality; requires the stream to be much
    longer than 2**k.
    """
    stream = np.asarray(stream, dtype=np.uint8)
    if k < 1:
        raise QuantizeError("block length k must be >= 1")
    if len(stream) < 4 * 2 ** k:
        raise QuantizeError(f"stream of length {len(stream)} too short for k={k}")
    return _block_entropy(stream, k) - _block_entropy(stream, k - 1)


def _block_entropy(stream: np.ndarray, k: int) -> float:
    if k == 0:
        return 0.0
    n = len(stream) - k + 1
    codes = np.zeros(n, dtype=np.int64)
    for i in range(k):
        codes |= stream[i: i + n].astype(np.int64) << i
    counts = np.bincount(codes, minlength=2 ** k).astype(float)
    p = counts[counts > 0] / n
    return float(-(p * np.log2(p)).sum())
