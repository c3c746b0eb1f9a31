import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from disloclab.density import (EnergyDensity, InvalidInput, QuadraticForm, closest_rotation, density_and_stress,
                               dist2_to_rotations, eval_density, finite_difference_form, hessian_at_identity)

mats = arrays(np.float64, (2, 2), elements=st.floats(-3, 3, allow_nan=False))
angles = st.floats(-np.pi, np.pi)


def rot(t):
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def svd_distance2(A):
    """Independent oracle: distance to SO(2) through numpy's SVD."""
    U, s, Vt = np.linalg.svd(A)
    D = np.diag([1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    R = U @ D @ Vt
    return np.sum((A - R) ** 2)


@given(mats)
def test_distance_matches_svd(A):
    assert dist2_to_rotations(A) == pytest.approx(svd_distance2(A), abs=1e-10)


@given(mats)
def test_closest_rotation_is_rotation(A):
    R = closest_rotation(A)
    assert np.allclose(R.T @ R, np.eye(2)) and np.linalg.det(R) == pytest.approx(1.0)


@given(mats, angles, st.sampled_from(["isotropic", "dist2"]))
def test_frame_indifference(A, t, kind):
    w = EnergyDensity(kind, 1.3, 0.7)
    assert eval_density(w, rot(t) @ A) == pytest.approx(eval_density(w, A), rel=1e-9, abs=1e-10)


@given(angles)
def test_zero_on_rotations(t):
    assert eval_density(EnergyDensity(), rot(t)) == pytest.approx(0.0, abs=1e-14)


def test_tiny_strain_keeps_relative_precision():
    w = EnergyDensity()
    for s in (1e-4, 1e-6, 1e-8):
        A = np.eye(2) + s * np.array([[1.0, 0.3], [0.3, -0.5]])
        q = hessian_at_identity(w)(A - np.eye(2))
        assert eval_density(w, A) == pytest.approx(q, rel=10 * s + 1e-9)


@given(mats)
def test_stress_is_gradient(A):
    w = EnergyDensity("isotropic", 1.0, 2.0)
    if abs(np.trace(A)) + abs(A[1, 0] - A[0, 1]) < 1e-2:
        return  # t = 0: closest rotation is not unique
    _, P = density_and_stress(w, A)
    h = 1e-6
    for i in range(2):
        for j in range(2):
            E = np.zeros((2, 2))
            E[i, j] = h
            fd = (eval_density(w, A + E) - eval_density(w, A - E)) / (2 * h)
            assert P[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-5)


@given(mats)
def test_hessian_matches_finite_difference(A):
    w = EnergyDensity("isotropic", 0.8, 1.7)
    assert finite_difference_form(w, A) == pytest.approx(hessian_at_identity(w)(A), rel=1e-5, abs=1e-6)


def test_form_matrix_agrees_with_call(rng):
    q = QuadraticForm(1.0, 1.0)
    A = rng.normal(size=(20, 2, 2))
    v = A.reshape(20, 4)
    assert np.allclose(np.einsum("ni,ij,nj->n", v, q.matrix(), v), q(A))
    assert q.nu == pytest.approx(0.25)


def test_invalid_parameters():
    with pytest.raises(InvalidInput):
        EnergyDensity("isotropic", -1.0, 1.0)
    with pytest.raises(InvalidInput):
        EnergyDensity("neo", 1.0, 1.0)
    with pytest.raises(InvalidInput):
        eval_density(EnergyDensity(), np.array([[np.nan, 0], [0, 1]]))
