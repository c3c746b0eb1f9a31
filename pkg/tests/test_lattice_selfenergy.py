import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from disloclab.density import InvalidInput
from disloclab.lattice_selfenergy import (DislocationLattice, cutoff_doubling_certificate, derive_cutoff,
                                          enumerate_lattice, quad_value, sigma, verify_sigma_properties)

I0 = 1.0 / (3.0 * np.pi)
SQUARE = ((1.0, 0.0), (0.0, 1.0))
HEX = ((1.0, 0.0), (0.5, np.sqrt(3) / 2))
vecs = st.tuples(st.floats(-5, 5), st.floats(-5, 5)).filter(lambda v: np.hypot(*v) > 1e-3)


def highs_sigma(P, M, v):
    """Independent LP oracle: HiGHS on the same candidate set.

    Default feasibility tolerance (1e-7) would absorb tiny components of v.
    """
    tight = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
    res = linprog(quad_value(M, P), A_eq=P.T, b_eq=v, bounds=(0, None), method="highs", options=tight)
    assert res.status == 0
    return res.fun


def test_square_lattice_e1_equals_prefactor():
    M = I0 * np.eye(2)
    lat = DislocationLattice.certified(SQUARE, M)
    r = sigma(lat, M, (1.0, 0.0))
    assert r.value == pytest.approx(I0, rel=1e-14)
    assert len(r.decomposition) == 1 and np.allclose(r.decomposition[0][0], (1, 0))


def test_enumeration_count_matches_brute_force():
    lat = DislocationLattice(SQUARE, 10.0)
    brute = sum(1 for i, j in itertools.product(range(-10, 11), repeat=2) if 0 < i * i + j * j < 100)
    assert len(enumerate_lattice(lat)) == brute == 304


def test_cutoffs():
    assert derive_cutoff(DislocationLattice(SQUARE, 1.0), np.eye(2)) == pytest.approx(np.sqrt(2))
    assert derive_cutoff(DislocationLattice(HEX, 1.0), np.eye(2)) == pytest.approx(2.0)


@pytest.mark.parametrize("basis", [SQUARE, HEX])
@given(v=vecs)
def test_matches_highs(basis, v):
    M = np.array([[1.0, 0.2], [0.2, 0.7]])
    lat = DislocationLattice.certified(basis, M)
    P = enumerate_lattice(lat)
    r = sigma(lat, M, v)
    assert r.value == pytest.approx(highs_sigma(P, M, np.asarray(v)), rel=1e-8)
    recon = sum(l * w for w, l in r.decomposition)
    assert np.allclose(recon, v, atol=1e-9)


@given(vecs, vecs, st.floats(0, 1), st.floats(1e-2, 1e2))
def test_homogeneous_and_convex(u, v, t, a):
    M = I0 * np.eye(2)
    lat = DislocationLattice.certified(HEX, M)
    s = lambda w: sigma(lat, M, w).value  # noqa: E731
    assert s(a * np.asarray(v)) == pytest.approx(a * s(v), rel=1e-9)
    w = t * np.asarray(u) + (1 - t) * np.asarray(v)
    if np.hypot(*w) > 1e-9:
        assert s(w) <= t * s(u) + (1 - t) * s(v) + 1e-9


def test_property_suite_and_certificate():
    M = I0 * np.eye(2)
    lat = DislocationLattice.certified(SQUARE, M)
    assert verify_sigma_properties(lat, M, samples=100, seed=3)["passed"]
    assert cutoff_doubling_certificate(lat, M, [(1, 0), (1, 1), (3, 1), (0.3, -2.2)])["passed"]


def test_zero_query_and_bad_forms():
    M = np.eye(2)
    lat = DislocationLattice.certified(SQUARE, M)
    assert sigma(lat, M, (0.0, 0.0)).value == 0.0
    with pytest.raises(InvalidInput):
        sigma(lat, np.array([[1.0, 0.0], [0.0, -1.0]]), (1, 0))
    with pytest.raises(InvalidInput):
        DislocationLattice(((1.0, 0.0), (2.0, 0.0)), 1.0)


def test_tie_break_is_deterministic():
    M = np.eye(2)
    lat = DislocationLattice.certified(SQUARE, M)
    a = sigma(lat, M, (1.0, 1.0)).to_dict()
    b = sigma(lat, M, (1.0, 1.0)).to_dict()
    assert a == b
