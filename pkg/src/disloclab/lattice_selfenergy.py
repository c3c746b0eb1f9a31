"""Lattice Burgers vectors and the relaxed self-energy.

Given a positive-definite form I(v) = v^T M v (the core prefactor), the
self-energy of a macroscopic Burgers vector v is

    Sigma(v) = min { sum l_i I(v_i) : sum l_i v_i = v, l_i >= 0, v_i in lattice },

a linear program with two equality rows. Its optimum sits at a basic
solution with at most two active columns, so we enumerate those directly:
singletons parallel to v and pairs whose cone contains v.
"""
from dataclasses import dataclass

import numpy as np

from .density import InvalidInput

MAX_POINTS = 10 ** 6


class CutoffTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class DislocationLattice:
    basis: tuple
    cutoff_K: float

    def __post_init__(self):
        B = self.matrix
        if B.shape != (2, 2) or not np.all(np.isfinite(B)):
            raise InvalidInput("basis must be two finite 2-vectors")
        if abs(np.linalg.det(B)) < 1e-14 * max(np.abs(B).max() ** 2, 1e-300):
            raise InvalidInput("basis vectors are linearly dependent")
        if not self.cutoff_K > 0:
            raise InvalidInput("cutoff must be positive")

    @property
    def matrix(self):
        """Basis vectors as columns."""
        return np.asarray(self.basis, dtype=float).T

    def with_cutoff(self, K):
        return DislocationLattice(self.basis, float(K))

    @classmethod
    def certified(cls, basis, iquad):
        lat = cls(tuple(map(tuple, np.asarray(basis, float))), 1.0)
        return lat.with_cutoff(derive_cutoff(lat, iquad))

    def to_dict(self):
        return {"basis": [list(map(float, b)) for b in self.basis], "cutoff_K": self.cutoff_K}


def _check_form(iquad):
    M = np.asarray(iquad, dtype=float)
    if M.shape != (2, 2) or not np.allclose(M, M.T, rtol=0, atol=1e-14 * np.abs(M).max()):
        raise InvalidInput("self-energy prefactor must be a symmetric 2x2 matrix")
    if np.linalg.eigvalsh(M)[0] <= 0:
        raise InvalidInput("self-energy prefactor must be positive definite")
    return 0.5 * (M + M.T)


def quad_value(iquad, v):
    v = np.asarray(v, dtype=float)
    return np.einsum("...i,ij,...j->...", v, np.asarray(iquad, float), v)


def enumerate_lattice(lat, return_coefficients=False):
    """Nonzero lattice vectors with norm strictly below the cutoff.

    Ordered lexicographically by integer coefficients.
    """
    B = lat.matrix
    K = lat.cutoff_K
    # |k_j| <= K |row j of B^{-1}|
    Binv = np.linalg.inv(B)
    bound = np.floor(K * np.linalg.norm(Binv, axis=1)).astype(np.int64)
    if np.prod(2 * bound + 1) > 50 * MAX_POINTS:
        raise CutoffTooLarge("cutoff produces too many lattice points")
    k1 = np.arange(-bound[0], bound[0] + 1)
    k2 = np.arange(-bound[1], bound[1] + 1)
    C = np.stack(np.meshgrid(k1, k2, indexing="ij"), -1).reshape(-1, 2)
    P = C @ B.T
    keep = (np.linalg.norm(P, axis=1) < K) & np.any(C != 0, axis=1)
    C, P = C[keep], P[keep]
    if len(P) > MAX_POINTS:
        raise CutoffTooLarge(f"{len(P)} lattice points exceed the limit {MAX_POINTS}")
    return (P, C) if return_coefficients else P


def derive_cutoff(lat, iquad):
    """K = max_i I(u_i) / (c1 c) with c the least eigenvalue of the form.

    c1 is the largest constant with |l1 u1 + l2 u2| >= c1 (|l1| + |l2|),
    i.e. the distance from 0 to the segments [s1 u1, s2 u2] over signs.
    """
    M = _check_form(iquad)
    c = np.linalg.eigvalsh(M)[0]
    u1, u2 = lat.matrix.T
    c1 = np.inf
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            a, b = s1 * u1, s2 * u2
            d = a - b
            t = np.clip(-(b @ d) / (d @ d), 0.0, 1.0)
            c1 = min(c1, np.linalg.norm(b + t * d))
    return float(max(quad_value(M, u1), quad_value(M, u2)) / (c1 * c))


@dataclass
class SelfEnergyResult:
    value: float
    decomposition: list

    def to_dict(self):
        return {"value": self.value,
                "decomposition": [{"vector": list(map(float, w)), "weight": float(l)} for w, l in self.decomposition]}


def sigma(lat, iquad, v, candidates=None, rtol=1e-12):
    """Exact LP optimum by enumeration of basic feasible solutions.

    Among optimal bases (within rtol) the lexicographically smallest index
    tuple wins, so decompositions are reproducible.
    """
    M = _check_form(iquad)
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidInput("query vector must be finite")
    if not np.any(v != 0):
        return SelfEnergyResult(0.0, [])
    P = enumerate_lattice(lat) if candidates is None else np.asarray(candidates, float)
    if len(P) == 0:
        raise RuntimeError("empty candidate set, cutoff below the shortest lattice vector")
    cost = quad_value(M, P)
    nv = np.linalg.norm(v)
    scale = max(np.abs(P).max(), nv)
    tol = 1e-12 * scale

    options = []  # (value, index tuple, weights)
    # singletons parallel to v
    cross = P[:, 0] * v[1] - P[:, 1] * v[0]
    dot = P @ v
    par = np.flatnonzero((np.abs(cross) <= tol * nv) & (dot > 0))
    for i in par:
        lam = nv / np.linalg.norm(P[i])
        options.append((lam * cost[i], (int(i),), (lam,)))
    # pairs with v in the open cone
    i, j = np.triu_indices(len(P), 1)
    det = P[i, 0] * P[j, 1] - P[i, 1] * P[j, 0]
    ok = np.abs(det) > tol * scale
    i, j, det = i[ok], j[ok], det[ok]
    li = (v[0] * P[j, 1] - v[1] * P[j, 0]) / det
    lj = (P[i, 0] * v[1] - P[i, 1] * v[0]) / det
    feas = (li > 0) & (lj > 0)
    i, j, li, lj = i[feas], j[feas], li[feas], lj[feas]
    vals = li * cost[i] + lj * cost[j]
    if len(vals):
        best = vals.min()
        near = np.flatnonzero(vals <= best * (1 + rtol))
        for k in near:
            options.append((vals[k], (int(i[k]), int(j[k])), (li[k], lj[k])))
    if not options:
        raise RuntimeError("self-energy program infeasible")
    vmin = min(o[0] for o in options)
    cands = [o for o in options if o[0] <= vmin * (1 + rtol)]
    value, idx, lam = min(cands, key=lambda o: o[1])
    return SelfEnergyResult(float(value), [(P[k].copy(), float(l)) for k, l in zip(idx, lam)])


def cutoff_doubling_certificate(lat, iquad, queries, rtol=1e-10):
    """Sigma must not change when the cutoff is doubled."""
    wide = lat.with_cutoff(2 * lat.cutoff_K)
    worst = 0.0
    for v in queries:
        a = sigma(lat, iquad, v).value
        b = sigma(wide, iquad, v).value
        worst = max(worst, abs(a - b) / max(abs(a), 1e-300))
    return {"max_relative_change": float(worst), "passed": bool(worst <= rtol),
            "note": "cutoff certified by doubling"}


def verify_sigma_properties(lat, iquad, samples=1000, seed=0, tol_hom=1e-7, tol_conv=1e-9):
    """Random checks of homogeneity, convexity and Sigma <= I on the lattice."""
    rng = np.random.default_rng(seed)
    M = _check_form(iquad)
    P = enumerate_lattice(lat)
    sig = lambda w: sigma(lat, M, w, candidates=P).value  # noqa: E731
    worst_h = worst_c = worst_b = 0.0
    viol = {"homogeneity": 0, "convexity": 0, "bound": 0}
    B = lat.matrix
    for _ in range(samples):
        u, v = rng.normal(size=2), rng.normal(size=2)
        t = rng.uniform(0, 1)
        alpha = np.exp(rng.uniform(np.log(1e-2), np.log(1e2)))
        sv = sig(v)
        eh = abs(sig(alpha * v) - alpha * sv) / max(alpha * sv, 1e-300)
        ec = sig(t * u + (1 - t) * v) - (t * sig(u) + (1 - t) * sv)
        w = B @ rng.integers(-3, 4, size=2)
        eb = sig(w) - quad_value(M, w) if np.any(w != 0) else 0.0
        worst_h, worst_c, worst_b = max(worst_h, eh), max(worst_c, ec), max(worst_b, eb)
        viol["homogeneity"] += int(eh > tol_hom)
        viol["convexity"] += int(ec > tol_conv)
        viol["bound"] += int(eb > tol_conv * max(quad_value(M, w), 1.0))
    return {"samples": samples, "violations": viol, "max_homogeneity_error": float(worst_h),
            "max_convexity_excess": float(worst_c), "max_bound_excess": float(worst_b),
            "passed": sum(viol.values()) == 0}
