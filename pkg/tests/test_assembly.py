import numpy as np
import pytest

from disloclab import experiments as ex
from disloclab.assembly import (DislocationMeasure, HodgeStrain, ResolutionError, approximate_measure,
                                build_implant, burgers_convergence_check, closedness_residual,
                                deviation_report, gamma_partial_circulation, h_minus_one_norm_sq, h_squared,
                                measure_pairing, op_norm, target_pairing, torsion_functional)
from disloclab.density import InvalidInput, QuadraticForm
from disloclab.lattice_selfenergy import DislocationLattice, sigma
from disloclab.mesh import QUAD3

IQ = np.eye(2) / (3 * np.pi)


@pytest.fixture(scope="module")
def lattice():
    return DislocationLattice.certified([[1.0, 0.0], [0.0, 1.0]], IQ)


@pytest.fixture(scope="module")
def implant(lattice):
    m = approximate_measure((1.0, 0.0), 25, 1e-3, lattice, IQ)
    return build_implant(m, n_theta=32)


def unit_square_series(terms=400):
    # Dirichlet energy of Laplace(phi) = 1 on the unit square by sine series
    k = np.arange(1, terms, 2)
    M, N = np.meshgrid(k, k)
    return float(np.sum(64 / (np.pi ** 6 * M ** 2 * N ** 2 * (M ** 2 + N ** 2))))


def test_h_squared_switches_at_the_critical_count():
    eps = 1e-3
    L = np.log(1 / eps)
    assert h_squared(5, eps) == pytest.approx(5 * eps ** 2 * L)
    assert h_squared(100, eps) == pytest.approx(100 ** 2 * eps ** 2)
    assert h_squared(L, eps) == pytest.approx(L ** 2 * eps ** 2)


def test_measure_places_expected_mass(lattice):
    m = approximate_measure((1.0, 0.0), 25, 1e-3, lattice, IQ)
    assert m.count == 25
    assert np.allclose(m.burgers.sum(axis=0) / m.eps, [25, 0])
    assert 10 * m.b < m.smear_radius


def test_measure_rejects_crowded_cores(lattice):
    with pytest.raises(ResolutionError):
        approximate_measure((1.0, 0.0), 400, 5e-2, lattice, IQ)
    with pytest.raises(InvalidInput):
        DislocationMeasure([[1.5, 0.5]], [[1e-3, 0]], 1e-3, 1)


def test_every_core_circulates_its_burgers_vector(implant):
    circ = implant.circulations()
    assert np.allclose(circ, implant.measure.burgers, rtol=0, atol=1e-7 * implant.measure.b)
    assert implant.diagnostics["min_det"] > 0


def test_implant_is_closed_away_from_cores(implant):
    assert closedness_residual(implant) < 1e-12


def test_gamma_carries_the_smeared_mass(implant):
    # inside a disc gamma_loc circulates b (r/a)^2
    m = implant.measure
    got = gamma_partial_circulation(implant, 0, 0.5 * m.smear_radius)
    assert np.allclose(got, 0.25 * m.burgers[0], atol=1e-10)


def test_beta_sup_matches_bound(implant):
    d = implant.diagnostics
    assert d["beta_sup"] <= d["beta_bound"] * (1 + 1e-12)


def test_hodge_strain_energy_matches_series():
    J = HodgeStrain((1.0, 0.0))
    assert J.elastic_energy(QuadraticForm(1.0, 1.0)) == pytest.approx(unit_square_series(), rel=1e-3)
    assert h_minus_one_norm_sq(lambda x: np.ones(x.shape[:-1] + (1,))) == pytest.approx(unit_square_series(),
                                                                                       rel=1e-3)


def test_hodge_strain_has_prescribed_curl():
    J = HodgeStrain((1.0, 0.0), n=64)
    # circulation around a grid-aligned square loop equals the enclosed mass
    s = np.linspace(0.25, 0.75, 2001)
    mid = 0.5 * (s[1:] + s[:-1])
    ds = np.diff(s)
    circ = (np.sum(J(np.stack([mid, 0.25 + 0 * mid], -1))[:, :, 0] * ds[:, None], 0)
            + np.sum(J(np.stack([0.75 + 0 * mid, mid], -1))[:, :, 1] * ds[:, None], 0)
            - np.sum(J(np.stack([mid, 0.75 + 0 * mid], -1))[:, :, 0] * ds[:, None], 0)
            - np.sum(J(np.stack([0.25 + 0 * mid, mid], -1))[:, :, 1] * ds[:, None], 0))
    assert np.allclose(circ, [0.25, 0.0], atol=1e-3)


def test_torsion_of_constant_field_is_total_burgers(implant):
    m = implant.measure
    psi = np.array([0.3, -1.2])
    assert torsion_functional(implant, psi) == pytest.approx(float(m.burgers.sum(0) @ psi), rel=1e-12)


def test_pairings_agree_for_smooth_fields(lattice, implant):
    m = implant.measure
    psi = lambda x: np.stack([np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]), 0 * x[:, 0]], -1)  # noqa: E731
    target = target_pairing((1.0, 0.0), psi)
    assert target == pytest.approx(4 / np.pi ** 2, rel=1e-4)
    assert measure_pairing(m, psi) == pytest.approx(target, rel=0.05)
    assert measure_pairing(m, psi, smeared=True) == pytest.approx(measure_pairing(m, psi), rel=0.02)


def test_convergence_report_structure(implant):
    psi = lambda x: np.stack([x[:, 0] * (1 - x[:, 0]) * x[:, 1] * (1 - x[:, 1]), 0 * x[:, 0]], -1)  # noqa: E731
    rep = burgers_convergence_check([implant], (1.0, 0.0), [psi])
    assert rep["fields"][0]["target"] == pytest.approx(1 / 36, rel=1e-4)
    assert rep["fields"][0]["final"] < 0.1


def test_deviation_report_is_consistent(implant):
    rep = deviation_report(implant, 64)
    assert rep["integral"] > 0
    assert rep["integral_over_h2"] == pytest.approx(rep["integral"] / rep["h_eps_sq"])
    assert rep["near_ratio"] < 2 and rep["far_ratio"] < 2


def test_empty_measure_builds_flat_body(lattice):
    m = approximate_measure(None, 10, 1e-3, lattice, IQ)
    ab = build_implant(m, n_theta=16)
    assert m.count == 0
    assert np.allclose(ab.body.q, np.eye(2))


@pytest.mark.parametrize("mu", [(1.0, 0.0), (1.0, 0.5)])
def test_measure_mass_and_pairings_at_n100(lattice, mu):
    m = approximate_measure(mu, 100, 1e-3, lattice, IQ)
    assert m.count == pytest.approx(m.meta["lambda_sum"], rel=0.01)
    for psi in ex.burgers_test_fields():
        assert measure_pairing(m, psi) == pytest.approx(target_pairing(mu, psi), rel=0.05)


def test_atom_self_energies_reproduce_sigma(lattice):
    mu = np.array([1.0, 0.5])
    target = sigma(lattice, IQ, mu).value
    for n, eps in ((100, 1e-3), (400, 1e-4), (1600, 1e-4)):
        m = approximate_measure(mu, n, eps, lattice, IQ)
        cost = np.sum(IQ[0, 0] * np.sum((m.burgers / eps) ** 2, axis=1)) / n
        assert cost == pytest.approx(target, rel=0.05)


def test_single_atom_matches_model_frame():
    c, b = 4.0, np.array([1e-3, 0.0])
    m = DislocationMeasure([[c, c]], [b], 1e-3, 1, box=(0.0, 2 * c))
    ab = build_implant(m, n_theta=64)
    assert np.allclose(ab.circulations(), [b], atol=1e-12)
    x = ab.body.mesh.quad_points(QUAD3) - c
    r2 = np.sum(x * x, axis=-1)
    sel = (r2 > (2 * 1e-3) ** 2) & (r2 < (m.smear_radius / 2) ** 2)
    dth = np.stack([-x[..., 1], x[..., 0]], -1) / r2[..., None]
    qhat = np.eye(2) + b[:, None] * dth[..., None, :] / (2 * np.pi)
    D = ab.body.q[sel] - qhat[sel]
    assert op_norm(D - D.mean(axis=0)).max() < 1e-3


def test_uniform_estimates(implant):
    d = implant.diagnostics
    assert d["alpha_sup"] < 1 / 9
    assert d["gamma_constant"] < 1.0


@pytest.mark.parametrize("n", [25, 100])
def test_global_distortion_and_bilipschitz(lattice, n):
    ab = build_implant(approximate_measure((1.0, 0.0), n, 1e-3, lattice, IQ))
    rep = deviation_report(ab)
    assert rep["integral_over_h2"] < 1.0
    assert max(rep["bilipschitz"]) <= 9 / 7


def test_torsion_norm_is_total_burgers_length(implant):
    from scipy.spatial import cKDTree
    m = implant.measure
    tree = cKDTree(m.positions)
    unit = m.burgers / np.linalg.norm(m.burgers, axis=1)[:, None]
    psi = lambda x: unit[tree.query(x)[1]]  # noqa: E731
    assert torsion_functional(implant, psi) == pytest.approx(np.linalg.norm(m.burgers, axis=1).sum(), rel=1e-12)
    assert torsion_functional(implant, np.zeros(2)) == 0.0


def test_torsion_ignores_fields_away_from_cores(implant):
    m = implant.measure
    far = lambda x: np.where((np.min(np.linalg.norm(x[:, None] - m.positions, axis=2), 1) > m.smear_radius)[:, None],  # noqa: E731
                             np.array([[1.0, 2.0]]), 0.0)
    assert torsion_functional(implant, far) == 0.0
