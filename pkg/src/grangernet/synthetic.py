"""Synthetic stream systems with known structure, for tests and fixtures.

Planted systems use noisy-copy couplings: the target repeats the source
at a fixed lag with an independent flip probability, so ground-truth
conditional probabilities (and hence Bayes-optimal scores) are known in
closed form.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .quantize import StreamSet, TileGrid


@dataclass(frozen=True)
class Coupling:
    src: tuple  # variable id (tile, class)
    dst: tuple
    lag: int
    flip: float  # probability the copied symbol is flipped


def independent_streams(variables, length: int, rate: float = 0.5,
                        seed: int = 0) -> dict:
    """i.i.d. Bernoulli(rate) stream per variable."""
    rng = np.random.default_rng(seed)
    return {v: (rng.random(length) < rate).astype(np.uint8)
            for v in sorted(variables)}


def markov_streams(variables, length: int, p_stay_1: float = 0.7,
                   p_enter_1: float = 0.2, seed: int = 0) -> dict:
    """Independent binary Markov chains: P(1|1)=p_stay_1, P(1|0)=p_enter_1.

    Self-predictable but independent across variables.
    """
    rng = np.random.default_rng(seed)
    streams = {}
    for v in sorted(variables):
        x = np.zeros(length, dtype=np.uint8)
        u = rng.random(length)
        x[0] = u[0] < p_enter_1
        for t in range(1, length):
            p = p_stay_1 if x[t - 1] else p_enter_1
            x[t] = u[t] < p
        streams[v] = x
    return streams


def planted_system(n_variables: int, length: int, couplings, seed: int = 0,
                   rate: float = 0.5) -> dict:
    """Streams where coupled targets are noisy copies of their sources.

    Un-coupled variables (and coupling sources) are i.i.d. Bernoulli(rate);
    each coupling's destination is overwritten with the lagged, noisy copy
    of its source.
    """
    variables = [(i, "x") for i in range(n_variables)] if isinstance(
        n_variables, int) else sorted(n_variables)
    rng = np.random.default_rng(seed)
    streams = {v: (rng.random(length) < rate).astype(np.uint8) for v in variables}
    for cp in couplings:
        src = streams[tuple(cp.src)]
        flips = (rng.random(length) < cp.flip).astype(np.uint8)
        dst = streams[tuple(cp.dst)].copy()
        dst[cp.lag:] = src[: length - cp.lag] ^ flips[cp.lag:]
        streams[tuple(cp.dst)] = dst
    return streams


def bayes_scores(streams: dict, coupling: Coupling, delta: int) -> np.ndarray:
    """P(dst_{t+delta} = 1 | history through t) from the generator.

    Defined where the coupling is informative (delta <= lag, so the
    relevant source symbol is already observed); out[t] scores the
    destination at t + delta.
    """
    if delta > coupling.lag:
        raise ValueError("horizon exceeds coupling lag; source symbol unseen")
    src = np.asarray(streams[tuple(coupling.src)], dtype=np.float64)
    length = len(src)
    out = np.full(length, 0.5)
    # dst at time T copies src at T - lag; at issue time t = T - delta the
    # source symbol is at t - (lag - delta).
    shift = coupling.lag - delta
    hi = length - delta
    out[shift:hi] = np.where(src[: hi - shift] == 1, 1.0 - coupling.flip,
                             coupling.flip)
    return out


def default_planted_layout(n_variables: int = 10, n_couplings: int = 5,
                           lag_range=(1, 3), flip: float = 0.1):
    """Disjoint source->target couplings over the first 2*n variables."""
    couplings = []
    for i in range(n_couplings):
        lag = lag_range[0] + i % (lag_range[1] - lag_range[0] + 1)
        couplings.append(Coupling(src=(i, "x"), dst=(n_couplings + i, "x"),
                                  lag=lag, flip=flip))
    return [(i, "x") for i in range(n_variables)], couplings


def streams_to_streamset(streams: dict, train_days: int, holdout_days: int,
                         grid: TileGrid | None = None,
                         start_date: dt.date = dt.date(2015, 1, 1)) -> StreamSet:
    """Wrap raw variable streams as a StreamSet for pipeline-level code."""
    variables = sorted(streams)
    classes = sorted({c for _, c in variables})
    n_tiles = max(t for t, _ in variables) + 1
    if grid is None:
        cols = int(np.ceil(np.sqrt(n_tiles)))
        rows = int(np.ceil(n_tiles / cols))
        grid = TileGrid(origin_lat=41.6, origin_lon=-87.9, cell_height=0.00276,
                        cell_width=0.0035, rows=rows, cols=cols)
    total = train_days + holdout_days
    cut = {v: np.asarray(s[:total], dtype=np.uint8) for v, s in streams.items()}
    return StreamSet(grid=grid, start_date=start_date, train_days=train_days,
                     holdout_days=holdout_days, classes=classes, streams=cut)
