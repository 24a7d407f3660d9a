"""Transducer inference: suffix statistics, state merging, gamma."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grangernet import xpfsa
from grangernet.xpfsa import (Xpfsa, XpfsaError, coefficient_of_causality,
                              collect_stats, infer_xpfsa)
from conftest import noisy_copy_pair


def binary_entropy(p):
    if p in (0.0, 1.0):
        return 0.0
    return -p * np.log2(p) - (1 - p) * np.log2(1 - p)


# --- suffix statistics -----------------------------------------------------

def test_stats_all_ones():
    m = 50
    ones = np.ones(m, dtype=np.uint8)
    stats = collect_stats(ones, ones, delay=1, max_depth=1)
    # suffix "1" observed at every countable position: n = M - 2, all hits
    assert stats.counts[1][1] == m - 2
    assert stats.ones[1][1] == m - 2
    assert stats.counts[1][0] == 0


def test_stats_hand_enumeration():
    # 12-symbol fixture counted by hand. Positions t in [2, 10]; suffix
    # code has the most recent symbol in bit 0.
    src = np.array([0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 1], dtype=np.uint8)
    tgt = np.array([1, 0, 0, 1, 1, 0, 1, 0, 1, 1, 0, 0], dtype=np.uint8)
    stats = collect_stats(src, tgt, delay=1, max_depth=2)
    assert stats.n_positions == 9
    # depth 0: every position; hits are tgt[3..11]
    assert stats.counts[0][0] == 9
    assert stats.ones[0][0] == int(tgt[3:12].sum()) == 5
    # depth 1 by hand: src[2..10] = 1,0,1,0,0,1,1,1,0
    assert stats.counts[1].tolist() == [4, 5]
    # hits for src[t]=0 at t=3,5,6,10 -> tgt[4,6,7,11] = 1,1,0,0
    # hits for src[t]=1 at t=2,4,7,8,9 -> tgt[3,5,8,9,10] = 1,0,1,1,0
    assert stats.ones[1].tolist() == [2, 3]
    # depth 2: code = src[t] | src[t-1]<<1 over t=2..10:
    # (1,1)=3 (0,1)=2 (1,0)=1 (0,1)=2 (0,0)=0 (1,0)=1 (1,1)=3 (1,1)=3 (0,1)=2
    assert stats.counts[2].tolist() == [1, 2, 3, 3]
    # hits: code0 t=6 ->tgt7=0; code1 t=4,7 ->tgt5,8=0,1;
    # code2 t=3,5,10 ->tgt4,6,11=1,1,0; code3 t=2,8,9 ->tgt3,9,10=1,1,0
    assert stats.ones[2].tolist() == [0, 1, 2, 2]


def test_stats_children_sum_to_parent():
    src, tgt = noisy_copy_pair(length=2000)
    stats = collect_stats(src, tgt, delay=2, max_depth=4)
    for d in range(4):
        for code in range(1 << d):
            kids = [code, code | (1 << d)]
            assert (stats.counts[d][code]
                    == sum(stats.counts[d + 1][k] for k in kids))
            assert stats.ones[d][code] == pytest.approx(
                sum(stats.ones[d + 1][k] for k in kids))


def test_stats_stream_too_short():
    s = np.zeros(8, dtype=np.uint8)
    with pytest.raises(XpfsaError, match="too short"):
        collect_stats(s, s, delay=4, max_depth=4)


def test_stats_misaligned_streams():
    with pytest.raises(XpfsaError, match="aligned"):
        collect_stats(np.zeros(10, dtype=np.uint8),
                      np.zeros(11, dtype=np.uint8), 1, 2)


# --- inference -------------------------------------------------------------

def test_independent_pair_collapses_to_one_state(rng):
    src = (rng.random(10_000) < 0.5).astype(np.uint8)
    tgt = (rng.random(10_000) < 0.3).astype(np.uint8)
    machine = infer_xpfsa(collect_stats(src, tgt, 1, 7))
    assert machine.n_states == 1
    assert abs(machine.emissions[0] - 0.3) < 0.03


def test_planted_noisy_copy_two_states(planted_machine):
    machine, _, _ = planted_machine
    assert machine.n_states == 2
    emits = sorted(machine.emissions)
    assert abs(emits[0] - 0.1) < 0.03
    assert abs(emits[1] - 0.9) < 0.03


def test_period_two_deterministic_copy():
    src = np.tile([0, 1], 600).astype(np.uint8)
    tgt = np.roll(src, 1)
    machine = infer_xpfsa(collect_stats(src, tgt, 1, 4))
    assert machine.n_states == 2
    assert sorted(machine.emissions) == [0.0, 1.0]


def test_low_support_yields_trivial_machine():
    src = np.array([0, 1, 0, 1, 0, 1, 1, 0], dtype=np.uint8)
    tgt = np.array([1, 0, 1, 0, 1, 0, 0, 1], dtype=np.uint8)
    machine = infer_xpfsa(collect_stats(src, tgt, 1, 2), n_min=100)
    assert machine.trivial and machine.n_states == 1
    assert machine.gamma == 0.0


# --- evaluation ------------------------------------------------------------

def test_one_state_machine_constant_output():
    machine = xpfsa.trivial_machine(1, 3, xpfsa.XpfsaParams(max_depth=3), 0.25)
    for hist in ([], [1], [0, 1, 1, 0, 1]):
        assert machine.evaluate(hist) == 0.25


def test_planted_machine_history_resolution(planted_machine):
    machine, _, _ = planted_machine
    assert machine.evaluate([0, 0, 1]) > 0.85
    assert machine.evaluate([1, 1, 0]) < 0.15
    # empty history falls back to the marginal rate
    assert machine.evaluate([]) == machine.marginal


def test_evaluate_batch_matches_pointwise(planted_machine):
    machine, src, _ = planted_machine
    src = src[:200]
    batch = machine.evaluate_batch(src)
    for t in range(len(src)):
        assert batch[t] == machine.evaluate(src[: t + 1])


def test_emissions_are_probabilities(rng):
    for _ in range(10):
        src = (rng.random(500) < rng.uniform(0.1, 0.9)).astype(np.uint8)
        tgt = (rng.random(500) < rng.uniform(0.1, 0.9)).astype(np.uint8)
        machine = infer_xpfsa(collect_stats(src, tgt, 1, 5))
        assert np.all(machine.emissions >= 0) and np.all(machine.emissions <= 1)
        assert 0.0 <= machine.evaluate(src[:37]) <= 1.0


@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
@settings(max_examples=20, deadline=None)
def test_refinement_monotone_in_epsilon(seed):
    r = np.random.default_rng(seed)
    src = (r.random(1500) < 0.5).astype(np.uint8)
    tgt = (r.random(1500) < 0.5).astype(np.uint8)
    tgt[2:] ^= src[:-2] & (r.random(1498) < 0.7)
    stats = collect_stats(src, tgt, 1, 4)
    counts = [infer_xpfsa(stats, epsilon=e, n_min=5).n_states
              for e in (0.4, 0.2, 0.1, 0.05, 0.02)]
    assert all(a <= b for a, b in zip(counts, counts[1:]))


# --- coefficient of causality ---------------------------------------------

def test_gamma_independent_near_zero(rng):
    src = (rng.random(10_000) < 0.5).astype(np.uint8)
    tgt = (rng.random(10_000) < 0.5).astype(np.uint8)
    machine = infer_xpfsa(collect_stats(src, tgt, 1, 7))
    assert machine.gamma <= 0.02


def test_gamma_noisy_copy_analytic(planted_machine):
    machine, _, _ = planted_machine
    # balanced target: gamma -> 1 - h(0.1) with h the binary entropy
    expected = 1.0 - binary_entropy(0.1)
    assert abs(machine.gamma - expected) < 0.05


def test_gamma_constant_target():
    src = (np.random.default_rng(3).random(2000) < 0.5).astype(np.uint8)
    tgt = np.ones(2000, dtype=np.uint8)
    machine = infer_xpfsa(collect_stats(src, tgt, 1, 5))
    assert machine.gamma == 0.0


def test_gamma_bounds_and_one_state_zero(rng):
    src = (rng.random(3000) < 0.4).astype(np.uint8)
    tgt = (rng.random(3000) < 0.4).astype(np.uint8)
    machine = infer_xpfsa(collect_stats(src, tgt, 1, 5))
    assert 0.0 <= machine.gamma <= 1.0
    if machine.n_states == 1:
        assert machine.gamma == 0.0


def test_gamma_recomputation_matches_inference(planted_machine):
    machine, src, tgt = planted_machine
    recomputed = coefficient_of_causality(machine, src, tgt)
    assert recomputed == pytest.approx(machine.gamma, abs=1e-12)


# --- serialization ---------------------------------------------------------

def test_binary_roundtrip(planted_machine):
    machine, _, _ = planted_machine
    clone = Xpfsa.from_bytes(machine.to_bytes())
    assert clone.delay == machine.delay
    assert clone.max_depth == machine.max_depth
    assert clone.gamma == machine.gamma
    assert clone.marginal == machine.marginal
    assert clone.trivial == machine.trivial
    np.testing.assert_array_equal(clone.emissions, machine.emissions)
    np.testing.assert_array_equal(clone.transitions, machine.transitions)
    for d in range(machine.max_depth + 1):
        np.testing.assert_array_equal(clone.resolve[d], machine.resolve[d])


def test_bad_magic_rejected(planted_machine):
    machine, _, _ = planted_machine
    blob = bytearray(machine.to_bytes())
    blob[0] = ord("Z")
    with pytest.raises(XpfsaError, match="magic"):
        Xpfsa.from_bytes(bytes(blob))
