"""Full pairwise (source, target, delay) sweep and network-level queries.

The sweep attempts every ordered variable pair at every delay up to a
maximum, keeps edges whose causality coefficient passes the threshold, and
supports checkpointed resumption partitioned by target variable.
"""

from __future__ import annotations

import json
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import xpfsa
from .geo import haversine_km
from .xpfsa import Xpfsa, XpfsaParams

DEFAULT_DMAX = 60
DEFAULT_GAMMA_MIN = 0.01


class NetworkError(Exception):
    pass


@dataclass(frozen=True, order=True)
class EdgeKey:
    src: tuple  # (tile, class)
    dst: tuple
    delay: int


@dataclass
class GrangerEdge:
    key: EdgeKey
    machine: Xpfsa
    gamma: float


@dataclass
class GrangerNet:
    dmax: int
    gamma_min: float
    gamma_direction: str  # "ge": keep gamma >= threshold; "le": flipped
    params: XpfsaParams
    attempted: int = 0
    retained: int = 0
    edges_by_target: dict = field(default_factory=dict)
    targets: set = field(default_factory=set)

    def edges_into(self, target):
        return self.edges_by_target.get(tuple(target), [])

    def all_edges(self):
        for target in sorted(self.edges_by_target):
            yield from self.edges_by_target[target]

    def to_csv(self) -> str:
        lines = ["src_tile,src_class,dst_tile,dst_class,delay,gamma,n_states"]
        for e in self.all_edges():
            lines.append(
                f"{e.key.src[0]},{e.key.src[1]},{e.key.dst[0]},{e.key.dst[1]},"
                f"{e.key.delay},{e.gamma:.12g},{e.machine.n_states}")
        return "\n".join(lines) + "\n"


def attempted_bound(n_variables: int, dmax: int) -> int:
    """Upper bound on the number of models a full sweep attempts."""
    if dmax < 0:
        raise NetworkError("dmax must be >= 0")
    return n_variables * n_variables * (dmax + 1)


def _keep(gamma: float, gamma_min: float, direction: str) -> bool:
    if direction == "ge":
        return gamma >= gamma_min
    if direction == "le":
        return gamma <= gamma_min
    raise NetworkError(f"unknown gamma direction {direction!r}")


def _sweep_target(args):
    """Infer all in-edges of one target. Standalone for process pools."""
    (target, variables, streams, codes, dmax, params, gamma_min,
     direction, candidate_filter) = args
    tgt_stream = streams[target]
    edges = []
    attempted = 0
    for src in variables:
        for k in range(dmax + 1):
            if candidate_filter is not None and not candidate_filter(src, target, k):
                continue
            attempted += 1
            if src == target and k == 0:
                # Predicting a symbol from a history containing that same
                # symbol is vacuous; count the attempt, emit the marginal.
                marg = float(np.asarray(tgt_stream[params.max_depth:]).mean())
                machine = xpfsa.trivial_machine(0, params.max_depth, params, marg)
            else:
                stats = xpfsa.collect_stats_from_codes(
                    codes[src], tgt_stream, k, params.max_depth)
                machine = xpfsa.infer_xpfsa(stats, params.epsilon, params.n_min)
            if _keep(machine.gamma, gamma_min, direction):
                edges.append(GrangerEdge(EdgeKey(src, target, k), machine,
                                         machine.gamma))
    edges.sort(key=lambda e: (-e.gamma, e.key))
    return target, attempted, edges


def sweep(streams: dict, dmax: int, params: XpfsaParams = XpfsaParams(),
          gamma_min: float = DEFAULT_GAMMA_MIN, gamma_direction: str = "ge",
          candidate_filter=None, n_jobs: int = 1,
          checkpoint_dir=None) -> GrangerNet:
    """Infer machines for all (source, target, delay) keys and prune.

    ``streams`` maps (tile, class) variables to training-window arrays.
    With ``checkpoint_dir`` set, completed targets are persisted and a
    rerun resumes from them; results are deterministic for fixed inputs
    regardless of parallelism or resumption.
    """
    variables = sorted(streams.keys())
    codes = {v: xpfsa.suffix_codes(streams[v], params.max_depth) for v in variables}
    net = GrangerNet(dmax=dmax, gamma_min=gamma_min,
                     gamma_direction=gamma_direction, params=params,
                     targets=set(variables))

    pending = []
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    for target in variables:
        if checkpoint_dir is not None:
            ck = checkpoint_dir / _checkpoint_name(target)
            if ck.exists():
                tgt, attempted, edges = _load_checkpoint(ck)
                net.attempted += attempted
                if edges:
                    net.edges_by_target[tgt] = edges
                net.retained += len(edges)
                continue
        pending.append(target)

    task_args = [(t, variables, streams, codes, dmax, params, gamma_min,
                  gamma_direction, candidate_filter) for t in pending]
    if n_jobs > 1 and candidate_filter is None and len(task_args) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_sweep_target, task_args, chunksize=1))
    else:
        results = [_sweep_target(a) for a in task_args]

    for target, attempted, edges in sorted(results, key=lambda r: r[0]):
        net.attempted += attempted
        if edges:
            net.edges_by_target[target] = edges
        net.retained += len(edges)
        if checkpoint_dir is not None:
            _save_checkpoint(checkpoint_dir / _checkpoint_name(target),
                             target, attempted, edges)
    return net


def _checkpoint_name(target) -> str:
    return f"target_{target[0]}_{target[1]}.bin"


def _save_checkpoint(path: Path, target, attempted: int, edges) -> None:
    payload = [len(edges), attempted, list(target)]
    blobs = []
    for e in edges:
        blob = e.machine.to_bytes()
        payload.append([list(e.key.src), list(e.key.dst), e.key.delay,
                        e.gamma, len(blob)])
        blobs.append(blob)
    head = json.dumps(payload).encode()
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def _load_checkpoint(path: Path):
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        payload = json.loads(fh.read(hlen).decode())
        n_edges, attempted, target = payload[0], payload[1], tuple(payload[2])
        target = (int(target[0]), str(target[1]))
        edges = []
        for src, dst, delay, gamma, blen in payload[3: 3 + n_edges]:
            machine = Xpfsa.from_bytes(fh.read(blen))
            key = EdgeKey((int(src[0]), str(src[1])),
                          (int(dst[0]), str(dst[1])), int(delay))
            edges.append(GrangerEdge(key, machine, float(gamma)))
    return target, attempted, edges


def neighborhood(net: GrangerNet, target, max_delay: int) -> set:
    """Tiles owning a retained edge into the target at delay <= max_delay."""
    target = tuple(target)
    if net.targets and target not in net.targets:
        raise NetworkError(f"target {target} not covered by this sweep")
    edges = net.edges_into(target)
    return {e.key.src[0] for e in edges if e.key.delay <= max_delay}


def influence_radius(net: GrangerNet, grid, target, max_delay: int):
    """Max great-circle distance (km) from target tile to any source tile.

    Returns ``(radius_km, isolated)``; an isolated target (no in-edges at
    the horizon) reports radius 0 with the flag set.
    """
    tiles = neighborhood(net, target, max_delay)
    if not tiles:
        return 0.0, True
    tlat, tlon = grid.center(target[0])
    radius = max(haversine_km(tlat, tlon, *grid.center(t)) for t in tiles)
    return radius, False


def diffusion_rate(net: GrangerNet, source_class: str, delay: int,
                   normalize: str = "k0") -> float:
    """Retained-edge count at exactly this delay, for edges sourced from a
    class, normalized by the delay-0 count ("k0") or the class total
    ("total")."""
    if delay > net.dmax:
        raise NetworkError(f"delay {delay} exceeds sweep dmax {net.dmax}")
    per_delay = np.zeros(net.dmax + 1)
    for e in net.all_edges():
        if e.key.src[1] == source_class:
            per_delay[e.key.delay] += 1
    if normalize == "k0":
        denom = per_delay[0]
    elif normalize == "total":
        denom = per_delay.sum()
    else:
        raise NetworkError(f"unknown normalization {normalize!r}")
    if denom == 0:
        return 0.0
    return float(per_delay[delay] / denom)
