"""Rate injection, response measurement, surfaces, and SES regression."""

import numpy as np
import pytest

from grangernet import ensemble, perturb
from grangernet.ingest import SesRecord
from grangernet.network import sweep
from grangernet.perturb import (PerturbationSpec, PerturbError, inject,
                                response, ses_regression, sweep_surface,
                                tile_to_region)
from grangernet.quantize import TileGrid
from grangernet.synthetic import markov_streams, streams_to_streamset
from conftest import default_params


def test_inject_zero_delta_identity(rng):
    s = (rng.random(1000) < 0.3).astype(np.uint8)
    np.testing.assert_array_equal(inject(s, 0.0, seed=1), s)


def test_inject_rate_law(rng):
    n = 100_000
    for p in (0.05, 0.2):
        s = (rng.random(n) < p).astype(np.uint8)
        p_emp = s.mean()
        for delta in (-0.1, -0.05, 0.05, 0.1):
            out = inject(s, delta, seed=42)
            expected = p_emp * (1 + delta)
            se = np.sqrt(expected * (1 - expected) / n)
            assert abs(out.mean() - expected) < 3 * se


def test_inject_seed_determinism(rng):
    s = (rng.random(5000) < 0.2).astype(np.uint8)
    np.testing.assert_array_equal(inject(s, 0.1, seed=9),
                                  inject(s, 0.1, seed=9))
    assert not np.array_equal(inject(s, 0.1, seed=9), inject(s, 0.1, seed=10))


def test_inject_only_touches_zeros_upward(rng):
    s = (rng.random(2000) < 0.2).astype(np.uint8)
    out = inject(s, 0.1, seed=3)
    assert np.all(out[s == 1] == 1)  # existing events never removed


def test_inject_infeasible_delta_reports_range():
    s = np.array([1, 1, 1, 0], dtype=np.uint8)  # p = 0.75, max delta = 1/3
    with pytest.raises(PerturbError, match="max delta"):
        inject(s, 0.5, seed=0)


def test_inject_constant_stream_rejected():
    with pytest.raises(PerturbError, match="rate"):
        inject(np.ones(100, dtype=np.uint8), 0.05, seed=0)


def test_spec_validates_delta_limit():
    with pytest.raises(PerturbError, match="exceeds limit"):
        PerturbationSpec(deltas={"u": 0.2}).validate()
    PerturbationSpec(deltas={"u": 0.1}).validate()  # boundary ok


def suppressive_system(length=6000, seed=0):
    """Class u suppresses class v on one tile; arrests ride on v."""
    r = np.random.default_rng(seed)
    u = (r.random(length) < 0.5).astype(np.uint8)
    v = np.zeros(length, dtype=np.uint8)
    roll = r.random(length)
    v[0] = roll[0] < 0.45
    v[1:] = roll[1:] < np.where(u[:-1] == 1, 0.2, 0.7)
    streams = {(0, "u"): u, (0, "v"): v.astype(np.uint8)}
    sset = streams_to_streamset(streams, length - 90, 90)
    train = {k: sset.training(k) for k in sset.variables}
    net = sweep(train, dmax=3, params=default_params(), gamma_min=0.05)
    models = {}
    for var in sset.variables:
        try:
            fm = ensemble.build_features(net, train, var, 1)
            models[var] = ensemble.fit_boost(fm, rounds=40, seed=2)
        except ensemble.EnsembleError:
            models[var] = ensemble.constant_model(float(train[var].mean()), 1)
    return models, net, sset


def test_response_zero_perturbation_is_exactly_zero():
    models, net, sset = suppressive_system()
    spec = PerturbationSpec(deltas={"u": 0.0, "v": 0.0}, replicates=2)
    res = response(models, net, sset, spec, delta_horizon=1)
    for mean, stderr in res.by_class.values():
        assert mean == 0.0 and stderr == 0.0
    assert all(v == 0.0 for v in res.by_tile.values())


def test_response_sign_matches_planted_suppression():
    models, net, sset = suppressive_system()
    spec = PerturbationSpec(deltas={"u": 0.1}, seed=5, replicates=5)
    res = response(models, net, sset, spec, delta_horizon=1)
    mean_v, se_v = res.by_class["v"]
    # raising u's rate must lower the predicted v rate
    assert mean_v < 0
    assert mean_v < -3 * max(se_v, 1e-12)


def test_response_perturbs_holdout_inputs_only():
    models, net, sset = suppressive_system()
    spec = PerturbationSpec(deltas={"u": 0.1}, seed=6, replicates=1)
    perturbed = perturb._perturbed_copy(sset, spec, replicate=0)
    m = sset.train_days
    np.testing.assert_array_equal(perturbed.streams[(0, "u")][:m],
                                  sset.streams[(0, "u")][:m])
    assert not np.array_equal(perturbed.streams[(0, "u")][m:],
                              sset.streams[(0, "u")][m:])
    np.testing.assert_array_equal(perturbed.streams[(0, "v")],
                                  sset.streams[(0, "v")])


def test_surface_anchoring_and_shape():
    models, net, sset = suppressive_system()
    surface = sweep_surface(models, net, sset, [-0.05, 0.0], [0.0, 0.05],
                            classes=("v", "u"), seed=1, replicates=2,
                            delta_horizon=1)
    cells = surface.cells
    assert len(cells) == 4 * len(sset.classes)
    origin = cells[(cells["delta_v"] == 0.0) & (cells["delta_u"] == 0.0)]
    assert (origin["mean_response"] == 0.0).all()
    assert origin["valid"].all()


def test_surface_marks_infeasible_cells():
    models, net, sset = suppressive_system()
    # u runs near rate 0.5, so +0.1 is feasible; fake infeasibility with a
    # delta far beyond the spec limit instead
    surface = sweep_surface(models, net, sset, [0.0], [0.0, 0.5],
                            classes=("v", "u"), replicates=1,
                            delta_horizon=1)
    bad = surface.cells[surface.cells["delta_u"] == 0.5]
    assert not bad["valid"].any()
    good = surface.cells[surface.cells["delta_u"] == 0.0]
    assert good["valid"].all()


def test_null_dissipation_cross_class():
    # independent classes: cross-class surface cells statistically zero
    variables = [(0, "u"), (0, "v"), (1, "u"), (1, "v")]
    streams = markov_streams(variables, 5000, seed=11)
    sset = streams_to_streamset(streams, 4900, 100)
    train = {v: sset.training(v) for v in sset.variables}
    net = sweep(train, dmax=2, params=default_params(), gamma_min=0.05)
    # no cross-class edges should have been retained
    assert all(e.key.src[1] == e.key.dst[1] for e in net.all_edges())
    models = {}
    for var in sset.variables:
        try:
            fm = ensemble.build_features(net, train, var, 1)
            models[var] = ensemble.fit_boost(fm, rounds=30, seed=3)
        except ensemble.EnsembleError:
            models[var] = ensemble.constant_model(float(train[var].mean()), 1)
    spec = PerturbationSpec(deltas={"u": 0.1}, seed=12, replicates=8)
    res = response(models, net, sset, spec, delta_horizon=1)
    mean_v, se_v = res.by_class["v"]
    assert abs(mean_v) <= 3 * max(se_v, 1e-9)


GRID = TileGrid(41.8, -87.7, 0.01, 0.01, 2, 2)

REGIONS = {"type": "FeatureCollection", "features": [
    {"type": "Feature", "properties": {"region_id": f"R{i}"},
     "geometry": {"type": "Polygon", "coordinates": [[
         [-87.7 + (i % 2) * 0.01, 41.8 + (i // 2) * 0.01],
         [-87.69 + (i % 2) * 0.01, 41.8 + (i // 2) * 0.01],
         [-87.69 + (i % 2) * 0.01, 41.81 + (i // 2) * 0.01],
         [-87.7 + (i % 2) * 0.01, 41.81 + (i // 2) * 0.01],
         [-87.7 + (i % 2) * 0.01, 41.8 + (i // 2) * 0.01]]]}}
    for i in range(4)]}


def test_tile_to_region_join():
    joined = tile_to_region(GRID, [0, 1, 2, 3], REGIONS)
    assert joined == {0: "R0", 1: "R1", 2: "R2", 3: "R3"}


def ses_records(hardships):
    return [SesRecord(region_id=f"R{i}", crowded_pct=5.0 + i,
                      poverty_pct=10.0, unemployed_pct=7.0,
                      income_pc=30000.0, hardship=h)
            for i, h in enumerate(hardships)]


def test_ses_regression_constant_response_zero_slopes():
    records = ses_records([10, 30, 50, 70])
    tile_region = {t: f"R{t}" for t in range(4)}
    responses = {t: 0.25 for t in range(4)}
    report = ses_regression(responses, records, tile_region,
                            covariates=["hardship"])
    assert report.coefficients["hardship"] == pytest.approx(0.0, abs=1e-12)


def test_ses_regression_recovers_planted_slope(rng):
    n = 40
    hardships = np.linspace(5, 95, n)
    records = ses_records(hardships)
    tile_region = {t: f"R{t}" for t in range(n)}
    z = (hardships - hardships.mean()) / hardships.std()
    noise = rng.normal(0, 0.05, n)
    responses = {t: -0.5 * z[t] + noise[t] for t in range(n)}
    report = ses_regression(responses, records, tile_region,
                            covariates=["hardship"])
    slope = report.coefficients["hardship"]
    assert abs(slope + 0.5) < 3 * report.stderrs["hardship"]


def test_ses_regression_three_point_closed_form():
    records = ses_records([10, 20, 60])
    tile_region = {0: "R0", 1: "R1", 2: "R2"}
    responses = {0: 0.1, 1: 0.2, 2: 0.6}
    # hand solve: standardized x = (h - 30) / sd, sd = sqrt(1400/3);
    # slope = cov(x,y)/var(x) computed from the normal equations
    h = np.array([10.0, 20.0, 60.0])
    y = np.array([0.1, 0.2, 0.6])
    z = (h - h.mean()) / h.std()
    expected_slope = ((z - z.mean()) @ (y - y.mean())) / ((z - z.mean()) ** 2).sum()
    report = ses_regression(responses, records, tile_region,
                            covariates=["hardship"])
    assert report.coefficients["hardship"] == pytest.approx(expected_slope)
    assert report.coefficients["const"] == pytest.approx(y.mean())


def test_ses_regression_drops_constant_covariate():
    records = ses_records([10, 30, 50, 70])
    tile_region = {t: f"R{t}" for t in range(4)}
    responses = {0: 0.1, 1: 0.3, 2: 0.2, 3: 0.4}
    with pytest.raises(PerturbError, match="not enough"):
        # 4 points cannot support the full 5-covariate design
        ses_regression(responses, records, tile_region)
    report = ses_regression(responses, records, tile_region,
                            covariates=["poverty_pct", "hardship"])
    assert "poverty_pct" in report.dropped_covariates  # constant column
    assert "hardship" in report.coefficients


def test_ses_regression_missing_join_errors():
    records = ses_records([10, 30])
    with pytest.raises(PerturbError, match="no SES region"):
        ses_regression({0: 0.1, 5: 0.2}, records, {0: "R0"},
                       covariates=["hardship"])
