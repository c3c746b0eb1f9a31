import numpy as np
import pytest
from hypothesis import given, strategies as st

from disloclab.density import EnergyDensity
from disloclab.geometry import ModelManifold, model_body
from disloclab.solve import (_rotation, best_rotation, energy, energy_and_gradient, holed_square_body, minimize,
                             parallel_map, random_trial_field, rotation_is_optimal, rotation_misfit)

W = EnergyDensity("isotropic", 1.0, 1.0)


@pytest.fixture(scope="module")
def disloc_body():
    return model_body(ModelManifold((0.01, 0.0), 1.0), None, 8, None)


@pytest.fixture(scope="module")
def flat_body():
    return holed_square_body(1, n_theta=16)


def test_gradient_matches_finite_differences(disloc_body, rng):
    f = disloc_body.chart + 1e-2 * rng.normal(size=disloc_body.chart.shape)
    E, g = energy_and_gradient(disloc_body, f, W)
    assert E == pytest.approx(energy(disloc_body, f, W).total, rel=1e-12)
    h = 1e-6
    for _ in range(6):
        i, c = rng.integers(len(f)), rng.integers(2)
        fp, fm = f.copy(), f.copy()
        fp[i, c] += h
        fm[i, c] -= h
        fd = (energy(disloc_body, fp, W).total - energy(disloc_body, fm, W).total) / (2 * h)
        assert fd == pytest.approx(g[i, c], rel=1e-5, abs=1e-10)


@given(st.floats(0, 2 * np.pi), st.floats(-3, 3), st.floats(-3, 3))
def test_energy_ignores_rigid_motions(theta, tx, ty):
    body = holed_square_body(1, n_theta=16)
    f = body.chart + 0.02 * np.sin(3 * body.chart)
    g = f @ _rotation(theta).T + [tx, ty]
    assert energy(body, g, W).total == pytest.approx(energy(body, f, W).total, rel=1e-9)


def test_minimize_relaxes_flat_body_to_rigid(flat_body, rng):
    f0 = flat_body.chart + 0.01 * np.sin(2 * np.pi * flat_body.chart[:, ::-1])
    res = minimize(flat_body, W, f0)
    assert res.converged
    assert res.breakdown.total < 1e-10 * energy(flat_body, f0, W).total + 1e-14


def test_minimize_lowers_dislocated_energy(disloc_body):
    E0 = energy(disloc_body, disloc_body.chart, W).total
    res = minimize(disloc_body, W, disloc_body.chart)
    assert res.converged
    assert 0 < res.breakdown.total < E0
    # log history never increases
    es = [r["energy"] for r in res.log]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(es, es[1:]))


def test_procrustes_beats_every_sampled_angle(flat_body, rng):
    f = random_trial_field(flat_body, rng, 0.1)
    rep = best_rotation(flat_body, f)
    base = rotation_misfit(flat_body, f, rep.rotation)
    angles = np.linspace(0, 2 * np.pi, 721)
    assert all(rotation_misfit(flat_body, f, _rotation(a)) >= base - 1e-12 for a in angles)
    assert rotation_is_optimal(flat_body, f, rep.rotation)
    assert rep.lhs >= rep.rhs - 1e-12  # pointwise distance never exceeds a fixed rotation's


def test_energy_regions_partition_total(disloc_body, rng):
    from disloclab.assembly import with_region_labels
    body = with_region_labels(disloc_body, np.zeros((1, 2)), 0.3, 0.1)
    f = body.chart + 1e-3 * rng.normal(size=body.chart.shape)
    br = energy(body, f, W)
    assert sum(br.per_region.values()) == pytest.approx(br.total, rel=1e-12)
    assert set(br.per_region) == {"far", "ball0", "core0"}


def test_parallel_map_keeps_order():
    items = list(range(7))
    assert parallel_map(abs, [-i for i in items], workers=2) == items
    assert parallel_map(abs, [-i for i in items], workers=1) == items


def scaled(body, k):
    from disloclab.assembly import planar_body
    from disloclab.mesh import TriMesh
    return planar_body(TriMesh(k * body.mesh.points, body.mesh.tris.copy()))


def test_defect_free_identity_has_zero_energy(flat_body):
    assert energy(flat_body, flat_body.chart, W).total < 1e-25


def test_chart_energy_and_minimiser_bounds():
    v = 1e-2
    L = np.log(1 / v)
    vals = {}
    for cpd in (12, 24):
        body = model_body(ModelManifold((v, 0.0), 1.0), None, cpd, None)
        vals[cpd] = energy(body, body.chart, W).total
    # refinement barely moves the chart energy
    assert abs(vals[24] - vals[12]) <= 0.005 * vals[12]
    body = model_body(ModelManifold((v, 0.0), 1.0), None, 12, None)
    res = minimize(body, W, body.chart)
    ratio_chart, ratio_min = vals[12] / (v * v * L), res.breakdown.total / (v * v * L)
    assert 0 < ratio_min <= ratio_chart < 1.0
    # circulation / Jensen witness for the distance to a single rotation
    rep = best_rotation(body, res.positions)
    assert rep.lhs >= v * v / (2 * np.pi) * L * (1 - 1e-2)


def test_exact_rotation_is_recovered(flat_body):
    U0 = _rotation(0.8)
    f = flat_body.chart @ U0.T + [2.0, -1.0]
    rep = best_rotation(flat_body, f)
    assert np.allclose(rep.rotation, U0, atol=1e-12)
    assert rep.lhs <= 1e-12 and rep.ratio == 0.0


def test_rigidity_ratio_is_scale_invariant(flat_body, rng):
    f = random_trial_field(flat_body, rng, 0.1)
    big = scaled(flat_body, 7.0)
    assert best_rotation(big, 7.0 * f).ratio == pytest.approx(best_rotation(flat_body, f).ratio, rel=1e-9)


def test_holes_do_not_spoil_rigidity():
    from disloclab.solve import uniform_fjm_probe
    rep = uniform_fjm_probe((0, 4), trials=200, seed=3)
    assert rep["spread"] <= 2.0
