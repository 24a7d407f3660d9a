"""Pairwise probabilistic transducer inference on Boolean streams.

A machine maps equivalence classes of recent source-history suffixes to a
probability of the target emitting 1 at a fixed delay. Inference is
suffix-tree splitting (a child suffix whose empirical target rate deviates
from its parent's by more than a tolerance gets its own node) followed by
a tolerance merge of leaf emission probabilities into states.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

DEFAULT_MAX_DEPTH = 7
DEFAULT_EPSILON = 0.05
DEFAULT_N_MIN = 10

_MAGIC = b"XPF1"


class XpfsaError(Exception):
    pass


@dataclass(frozen=True)
class XpfsaParams:
    max_depth: int = DEFAULT_MAX_DEPTH
    epsilon: float = DEFAULT_EPSILON
    n_min: int = DEFAULT_N_MIN


@dataclass
class SuffixStats:
    """Occurrence / target-hit counts for every source suffix up to depth L.

    Suffix codes put the most recent symbol in bit 0. Counting positions t
    run over [L, M-1-k] for every depth, so child counts sum exactly to
    parent counts.
    """

    delay: int
    max_depth: int
    n_positions: int
    counts: list  # counts[d][code], shape (2**d,)
    ones: list  # target=1 counts, same shapes


def suffix_codes(source: np.ndarray, max_depth: int) -> np.ndarray:
    """Depth-L suffix code at each position (valid from index L-1 on)."""
    source = np.asarray(source, dtype=np.int64)
    codes = np.zeros(len(source), dtype=np.int64)
    for i in range(max_depth):
        codes[i:] |= source[: len(source) - i] << i
    return codes


def collect_stats(source, target, delay: int, max_depth: int) -> SuffixStats:
    """Count suffix occurrences and following target hits at the delay."""
    source = np.asarray(source, dtype=np.uint8)
    target = np.asarray(target, dtype=np.uint8)
    if len(source) != len(target):
        raise XpfsaError("source and target streams must be aligned")
    codes = suffix_codes(source, max_depth)
    return collect_stats_from_codes(codes, target, delay, max_depth)


def collect_stats_from_codes(codes: np.ndarray, target: np.ndarray, delay: int,
                             max_depth: int) -> SuffixStats:
    """Same as collect_stats but reusing precomputed depth-L codes."""
    m = len(codes)
    if m <= max_depth + delay:
        raise XpfsaError(f"stream length {m} too short for depth {max_depth} "
                         f"and delay {delay}")
    t0, t1 = max_depth, m - delay  # positions [t0, t1)
    c = codes[t0:t1]
    y = np.asarray(target[t0 + delay: t1 + delay], dtype=np.float64)
    counts, ones = [], []
    for d in range(max_depth + 1):
        cd = c & ((1 << d) - 1)
        counts.append(np.bincount(cd, minlength=1 << d).astype(np.int64))
        ones.append(np.bincount(cd, weights=y, minlength=1 << d))
    return SuffixStats(delay=delay, max_depth=max_depth,
                       n_positions=t1 - t0, counts=counts, ones=ones)


@dataclass
class Xpfsa:
    """Inferred finite-state transducer for one (source, target, delay).

    ``resolve[d][code]`` gives the state reached from a d-symbol recent
    history (bit 0 = most recent); histories longer than ``max_depth`` use
    the depth-``max_depth`` table. This realizes longest-matching-suffix
    state resolution as a total function.
    """

    delay: int
    max_depth: int
    epsilon: float
    n_min: int
    emissions: np.ndarray  # (n_states,)
    transitions: np.ndarray  # (n_states, 2) int
    resolve: list  # resolve[d]: int array of shape (2**d,)
    marginal: float
    gamma: float
    trivial: bool = False  # degenerate: no suffix met n_min (or forced)

    @property
    def n_states(self) -> int:
        return len(self.emissions)

    def evaluate(self, history) -> float:
        """Probability of target=1 given a recent source history.

        An empty history carries no state information and falls back to
        the marginal target rate.
        """
        history = np.asarray(history, dtype=np.uint8)
        if len(history) == 0:
            return self.marginal
        d = min(len(history), self.max_depth)
        code = 0
        for i in range(d):
            code |= int(history[len(history) - 1 - i]) << i
        return float(self.emissions[self.resolve[d][code]])

    def evaluate_batch(self, source: np.ndarray) -> np.ndarray:
        """evaluate() over every prefix of the stream; out[t] uses source[:t+1]."""
        source = np.asarray(source, dtype=np.uint8)
        states = self.state_batch(source)
        return self.emissions[states]

    def state_batch(self, source: np.ndarray) -> np.ndarray:
        source = np.asarray(source, dtype=np.uint8)
        m = len(source)
        l = self.max_depth
        out = np.zeros(m, dtype=np.int64)
        codes = suffix_codes(source, l)
        if m > l:
            out[l:] = self.resolve[l][codes[l:]]
        for t in range(min(l, m)):
            d = t + 1 if t + 1 <= l else l
            out[t] = self.resolve[d][codes[t] & ((1 << d) - 1)]
        return out

    def to_bytes(self) -> bytes:
        ns = self.n_states
        head = struct.pack("<4sHBBH d d B", _MAGIC, self.delay, self.max_depth,
                           int(self.trivial), ns, self.gamma, self.marginal,
                           0)
        parts = [head,
                 struct.pack("<d I", self.epsilon, self.n_min),
                 np.asarray(self.emissions, dtype=np.float64).tobytes(),
                 np.asarray(self.transitions, dtype=np.uint16).tobytes()]
        for d in range(self.max_depth + 1):
            parts.append(np.asarray(self.resolve[d], dtype=np.uint16).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Xpfsa":
        off = struct.calcsize("<4sHBBH d d B")
        magic, delay, l, trivial, ns, gamma, marginal, _ = struct.unpack(
            "<4sHBBH d d B", data[:off])
        if magic != _MAGIC:
            raise XpfsaError("bad machine record magic")
        eps, n_min = struct.unpack("<d I", data[off:off + 12])
        off += 12
        emissions = np.frombuffer(data, dtype=np.float64, count=ns, offset=off).copy()
        off += 8 * ns
        transitions = np.frombuffer(data, dtype=np.uint16, count=2 * ns,
                                    offset=off).reshape(ns, 2).astype(np.int64)
        off += 4 * ns
        resolve = []
        for d in range(l + 1):
            resolve.append(np.frombuffer(data, dtype=np.uint16, count=1 << d,
                                         offset=off).astype(np.int64))
            off += 2 * (1 << d)
        return cls(delay=int(delay), max_depth=int(l), epsilon=eps, n_min=int(n_min),
                   emissions=emissions, transitions=transitions, resolve=resolve,
                   marginal=marginal, gamma=gamma, trivial=bool(trivial))


def _binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


def trivial_machine(delay: int, max_depth: int, params: XpfsaParams,
                    marginal: float) -> Xpfsa:
    resolve = [np.zeros(1 << d, dtype=np.int64) for d in range(max_depth + 1)]
    return Xpfsa(delay=delay, max_depth=max_depth, epsilon=params.epsilon,
                 n_min=params.n_min, emissions=np.array([marginal]),
                 transitions=np.zeros((1, 2), dtype=np.int64), resolve=resolve,
                 marginal=marginal, gamma=0.0, trivial=True)


def infer_xpfsa(stats: SuffixStats, epsilon: float = DEFAULT_EPSILON,
                n_min: int = DEFAULT_N_MIN) -> Xpfsa:
    """Infer a machine from suffix statistics.

    Growth: starting from the empty suffix, a node is split when any child
    with enough support has an empirical target rate differing from the
    node's by more than ``epsilon``. Leaves are then merged into states by
    greedy tolerance clustering of their rates; state emission is the
    pooled ratio over the state's suffixes.
    """
    l = stats.max_depth
    params = XpfsaParams(max_depth=l, epsilon=epsilon, n_min=n_min)
    n_root = int(stats.counts[0][0])
    if n_root < n_min or n_root == 0:
        marg = float(stats.ones[0][0] / n_root) if n_root else 0.0
        return trivial_machine(stats.delay, l, params, marg)

    counts, ones = stats.counts, stats.ones
    interior = set()
    leaves = []  # (depth, code)

    def grow(d: int, code: int) -> None:
        n = counts[d][code]
        p = ones[d][code] / n
        if d < l:
            kids = []
            for b in (0, 1):
                ccode = code | (b << d)
                if counts[d + 1][ccode] >= n_min:
                    kids.append(ccode)
            if kids and any(
                abs(ones[d + 1][cc] / counts[d + 1][cc] - p) > epsilon for cc in kids
            ):
                interior.add((d, code))
                for cc in kids:
                    grow(d + 1, cc)
                return
        leaves.append((d, code))

    grow(0, 0)

    # Merge leaves into states: greedy clustering with diameter <= epsilon.
    leaf_p = {(d, c): ones[d][c] / counts[d][c] for d, c in leaves}
    order = sorted(leaves, key=lambda dc: (leaf_p[dc], dc))
    state_of = {}
    clusters = []
    for dc in order:
        if clusters and leaf_p[dc] - leaf_p[clusters[-1][0]] <= epsilon:
            clusters[-1].append(dc)
        else:
            clusters.append([dc])
        state_of[dc] = len(clusters) - 1
    emissions = np.array([
        sum(ones[d][c] for d, c in cl) / sum(counts[d][c] for d, c in cl)
        for cl in clusters
    ])

    # Interior nodes are resolution fallbacks for histories whose deeper
    # continuation lacked support; assign each to the nearest state by its
    # residual rate (or its own rate when nothing resolves there).
    node_state = dict(state_of)
    resid_n = {}
    resid_n1 = {}
    for d, c in leaves:
        resid_n[(d, c)] = int(counts[d][c])
        resid_n1[(d, c)] = float(ones[d][c])
    for d, c in sorted(interior, key=lambda dc: -dc[0]):
        rn = int(counts[d][c])
        r1 = float(ones[d][c])
        for b in (0, 1):
            cc = c | (b << d)
            if (d + 1, cc) in node_state:
                rn -= int(counts[d + 1][cc])
                r1 -= float(ones[d + 1][cc])
        resid_n[(d, c)] = rn
        resid_n1[(d, c)] = r1
        p_here = (r1 / rn) if rn > 0 else ones[d][c] / counts[d][c]
        node_state[(d, c)] = int(np.argmin(np.abs(emissions - p_here)))

    # Resolution tables: descend the tree with the coded recent history.
    resolve = []
    for d in range(l + 1):
        table = np.zeros(1 << d, dtype=np.int64)
        for code in range(1 << d):
            cur = (0, 0)
            for i in range(d):
                nxt = (cur[0] + 1, cur[1] | (((code >> i) & 1) << cur[0]))
                if nxt in node_state:
                    cur = nxt
                else:
                    break
            table[code] = node_state[cur]
        resolve.append(table)

    # State occupancy and conditional rates for the causality coefficient:
    # each counted position resolves to exactly one node, so per-state
    # totals are sums of node residuals.
    n_states = len(clusters)
    occ = np.zeros(n_states)
    occ1 = np.zeros(n_states)
    for node, s in node_state.items():
        occ[s] += resid_n[node]
        occ1[s] += resid_n1[node]
    marginal = float(ones[0][0] / counts[0][0])
    gamma = _gamma_from_occupancy(occ, occ1, marginal)

    # Transition table via suffix extension from each state's deepest suffix.
    transitions = np.zeros((n_states, 2), dtype=np.int64)
    for s, cl in enumerate(clusters):
        rep_d, rep_c = max(cl)
        for a in (0, 1):
            new_d = min(rep_d + 1, l)
            new_c = (a | (rep_c << 1)) & ((1 << new_d) - 1)
            transitions[s, a] = resolve[new_d][new_c]

    return Xpfsa(delay=stats.delay, max_depth=l, epsilon=epsilon, n_min=n_min,
                 emissions=emissions, transitions=transitions, resolve=resolve,
                 marginal=marginal, gamma=gamma, trivial=False)


def _gamma_from_occupancy(occ: np.ndarray, occ1: np.ndarray, marginal: float) -> float:
    h_target = _binary_entropy(marginal)
    if h_target == 0.0:
        return 0.0
    total = occ.sum()
    h_cond = 0.0
    for o, o1 in zip(occ, occ1):
        if o > 0:
            h_cond += (o / total) * _binary_entropy(o1 / o)
    return float(np.clip(1.0 - h_cond / h_target, 0.0, 1.0))


def coefficient_of_causality(machine: Xpfsa, source, target) -> float:
    """Relative entropy reduction of the target given the machine state.

    gamma = 1 - H(target | state) / H(target), computed over the stream
    pair the machine was trained on (base-2; clamped to [0, 1]; defined as
    0 for a constant target).
    """
    source = np.asarray(source, dtype=np.uint8)
    target = np.asarray(target, dtype=np.uint8)
    l, k = machine.max_depth, machine.delay
    m = len(source)
    if m <= l + k:
        raise XpfsaError("stream too short for this machine")
    states = machine.state_batch(source)[l: m - k]
    y = target[l + k:].astype(np.float64)
    occ = np.bincount(states, minlength=machine.n_states).astype(float)
    occ1 = np.bincount(states, weights=y, minlength=machine.n_states)
    marginal = float(y.mean())
    return _gamma_from_occupancy(occ, occ1, marginal)
