"""Bodies with many edge dislocations on a square.

Atoms p_i carry Burgers vectors b_i (already scaled by eps). The implant is

    Q = I + alpha - beta + gamma,

alpha = sum b_i (x) dtheta_i / 2pi inside the discs B_a(p_i),
beta  = sum b_i (x) (-y_i, x_i) / (2pi a^2) inside the same discs,
gamma = the divergence-free field with d gamma = smeared atoms and no
normal component on the outer boundary.

We realise gamma as gamma_loc + d chi, where gamma_loc is the Biot-Savart
field of the uniformly smeared discs (equal to the disc field inside and to
b_i dtheta_i / 2pi outside) and chi is the harmonic Neumann correction that
cancels its normal trace. Then alpha - beta + gamma collapses to
sum b_i dtheta_i / 2pi + d chi, so Q is exactly closed away from the cores and
its loop integrals can be evaluated in closed form along straight edges.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from .density import InvalidInput
from .lattice_selfenergy import sigma
from .mesh import (QUAD3, Body, CorruptBody, boundary_load, laplacian, make_body,
                   outer_boundary_edges, perforated_square, square_mesh)

TWO_PI = 2.0 * np.pi
CORE_FACTOR = 1.5


class ResolutionError(ValueError):
    pass


class ConstructionFailure(RuntimeError):
    pass


def h_squared(n_eps, eps):
    """Energy scale max(n^2 eps^2, n eps^2 log(1/eps))."""
    return max(n_eps ** 2 * eps ** 2, n_eps * eps ** 2 * np.log(1.0 / eps))


@dataclass
class DislocationMeasure:
    positions: np.ndarray
    burgers: np.ndarray
    eps: float
    n_eps: float
    box: tuple = (0.0, 1.0)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.burgers = np.asarray(self.burgers, dtype=float).reshape(-1, 2)
        if len(self.positions) != len(self.burgers):
            raise InvalidInput("positions and Burgers vectors differ in length")
        lo, hi = self.box
        if np.any(self.positions <= lo) or np.any(self.positions >= hi):
            raise InvalidInput("atoms must lie inside the domain")

    @property
    def count(self):
        return len(self.positions)

    @property
    def smear_radius(self):
        """a = min(min separation / 3, min distance to the boundary / 2)."""
        if self.count == 0:
            return None
        lo, hi = self.box
        p = self.positions
        dist_bdry = np.min(np.minimum(p - lo, hi - p))
        a = dist_bdry / 2
        if self.count > 1:
            d, _ = cKDTree(p).query(p, k=2)
            a = min(a, d[:, 1].min() / 3)
        return float(a)

    @property
    def b(self):
        return float(np.linalg.norm(self.burgers, axis=1).max()) if self.count else 0.0

    @property
    def core_radii(self):
        return CORE_FACTOR * np.linalg.norm(self.burgers, axis=1)

    def check(self):
        if self.count and not 10 * self.b < self.smear_radius:
            raise ResolutionError(f"need 10 b < a (b = {self.b:.3g}, a = {self.smear_radius:.3g}); use smaller eps")

    def smeared(self, x):
        """Density of the smeared measure at points x, shape (..., 2)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2,))
        if self.count == 0:
            return out
        a = self.smear_radius
        d, idx = cKDTree(self.positions).query(x.reshape(-1, 2))
        inside = d < a
        flat = out.reshape(-1, 2)
        flat[inside] = self.burgers[idx[inside]] / (np.pi * a * a)
        return out

    def to_dict(self):
        return {"count": self.count, "eps": self.eps, "n_eps": self.n_eps, "box": list(self.box),
                "smear_radius": self.smear_radius, "b": self.b,
                "positions": self.positions.tolist(), "burgers": self.burgers.tolist()}


def _density_fn(mu_target):
    if callable(mu_target):
        return mu_target
    c = np.asarray(mu_target, dtype=float)
    return lambda x: np.broadcast_to(c, np.shape(x)[:-1] + (2,)).copy()


def approximate_measure(mu_target, n_eps, eps, lattice, iquad, box=(0.0, 1.0), n_quad=4):
    """Atoms approximating n_eps * mu_target with lattice Burgers vectors.

    The box is cut into k x k squares with k = ceil(sqrt(n_eps sup|mu|)).
    In each square the mass n_eps * int mu (plus the rounding residual carried
    over from the previous square, in serpentine order) is split along the
    optimal self-energy decomposition and rounded to integer multiplicities.
    The atoms of a square sit at the centres of a sub-grid.
    """
    lo, hi = box
    if mu_target is None:
        return DislocationMeasure(np.zeros((0, 2)), np.zeros((0, 2)), eps, n_eps, box)
    dens = _density_fn(mu_target)
    s = np.linspace(lo, hi, 65)
    G = np.stack(np.meshgrid(0.5 * (s[1:] + s[:-1]), 0.5 * (s[1:] + s[:-1]), indexing="ij"), -1)
    mmax = float(np.linalg.norm(dens(G), axis=-1).max())
    if mmax == 0:
        return DislocationMeasure(np.zeros((0, 2)), np.zeros((0, 2)), eps, n_eps, box)
    k = max(1, int(np.ceil(np.sqrt(n_eps * mmax) - 1e-9)))
    side = (hi - lo) / k
    gx, gw = np.polynomial.legendre.leggauss(n_quad)
    gx, gw = 0.5 * (gx + 1), 0.5 * gw
    positions, vectors, lam_total = [], [], 0.0
    resid = np.zeros(2)
    for i in range(k):
        cols = range(k) if i % 2 == 0 else range(k - 1, -1, -1)
        for j in cols:
            x0 = np.array([lo + i * side, lo + j * side])
            q = x0 + side * np.stack(np.meshgrid(gx, gx, indexing="ij"), -1)
            w = np.outer(gw, gw) * side * side
            xi = n_eps * np.einsum("ab,abc->c", w, dens(q)) + resid
            mult = []
            if np.linalg.norm(xi) > 1e-12:
                res = sigma(lattice, iquad, xi)
                for vec, lam in res.decomposition:
                    m = int(np.floor(lam + 0.5))
                    lam_total += lam
                    if m > 0:
                        mult.append((vec, m))
            placed = sum(m * vec for vec, m in mult) if mult else np.zeros(2)
            resid = xi - placed
            M = sum(m for _, m in mult)
            if M == 0:
                continue
            qn = int(np.ceil(np.sqrt(M)))
            sub = side / qn
            slots = [(a, b) for a in range(qn) for b in range(qn)][:M]
            vs = [vec for vec, m in mult for _ in range(m)]
            for (a, b), vec in zip(slots, vs):
                positions.append(x0 + sub * (np.array([a, b]) + 0.5))
                vectors.append(eps * np.asarray(vec, float))
    meas = DislocationMeasure(np.array(positions).reshape(-1, 2), np.array(vectors).reshape(-1, 2), eps, n_eps, box,
                              {"squares_per_side": k, "a_eps": side, "lambda_sum": lam_total,
                               "residual": resid.tolist()})
    meas.check()
    return meas


def singular_part(x, positions, burgers, block=8192):
    """sum b_i (x) dtheta_i / 2pi at points x, shape (..., 2, 2).

    In complex notation dtheta = i / conj(z - p), so the sum over atoms is one
    matrix product per block of points.
    """
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, 2)
    out = np.zeros((len(flat), 2, 2))
    if len(positions) == 0:
        return out.reshape(x.shape[:-1] + (2, 2))
    z = flat[:, 0] - 1j * flat[:, 1]
    pc = positions[:, 0] - 1j * positions[:, 1]
    bc = burgers.astype(complex) * (1j / TWO_PI)
    for s in range(0, len(flat), block):
        w = (1.0 / (z[s:s + block, None] - pc[None, :])) @ bc  # (P, 2)
        out[s:s + block, :, 0] = w.real
        out[s:s + block, :, 1] = w.imag
    return out.reshape(x.shape[:-1] + (2, 2))


def disc_parts(x, positions, burgers, a):
    """alpha and beta at points x: the two fields supported in the discs."""
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, 2)
    alpha = np.zeros((len(flat), 2, 2))
    beta = np.zeros((len(flat), 2, 2))
    if len(positions):
        dist, idx = cKDTree(positions).query(flat)
        ins = dist < a
        d = flat[ins] - positions[idx[ins]]
        r2 = np.sum(d * d, axis=-1)
        bv = burgers[idx[ins]]
        rot = np.stack([-d[:, 1], d[:, 0]], -1)
        alpha[ins] = bv[:, :, None] * (rot / r2[:, None])[:, None, :] / TWO_PI
        beta[ins] = bv[:, :, None] * (rot / (a * a))[:, None, :] / TWO_PI
    shape = x.shape[:-1] + (2, 2)
    return alpha.reshape(shape), beta.reshape(shape)


def segment_angles(x0, x1, positions, block=8192):
    """Angle swept by x - p_i as x runs along each segment, shape (M, m)."""
    x0 = np.asarray(x0, float).reshape(-1, 2)
    x1 = np.asarray(x1, float).reshape(-1, 2)
    z0 = x0[:, 0] + 1j * x0[:, 1]
    z1 = x1[:, 0] + 1j * x1[:, 1]
    pc = positions[:, 0] + 1j * positions[:, 1]
    out = np.zeros((len(x0), len(positions)))
    for s in range(0, len(x0), block):
        out[s:s + block] = np.angle((z1[s:s + block, None] - pc) * np.conj(z0[s:s + block, None] - pc))
    return out


class HarmonicCorrection:
    """chi with Laplace(chi) = 0, d chi / dn = -gamma_loc(n) on the box, on a grid."""

    def __init__(self, measure, n=128):
        self.box = measure.box
        self.n = n
        mesh = square_mesh(n, self.box)
        pos, bur = measure.positions, measure.burgers
        self.values = np.zeros((mesh.n_vertices, 2))
        if measure.count:
            def g_fn(x, nrm):
                # gamma_loc equals the singular part outside the discs, and the
                # discs stay a away from the boundary
                S = singular_part(x, pos, bur)
                return -np.einsum("mkj,mj->mk", S, nrm)

            edges = outer_boundary_edges(mesh, self.box)
            g = boundary_load(mesh, edges, g_fn)
            bverts = np.unique(edges)
            g[bverts] -= g.sum(axis=0) / len(bverts)
            L = laplacian(mesh).tocsc()
            free = np.arange(1, mesh.n_vertices)
            lu = splu(L[free][:, free].tocsc())
            self.values[free] = lu.solve(g[free])
            self.values -= self.values.mean(axis=0)
        s = np.linspace(self.box[0], self.box[1], n + 1)
        grid = self.values.reshape(n + 1, n + 1, 2)
        self._interp = RegularGridInterpolator((s, s), grid, method="linear")

    def __call__(self, x):
        x = np.asarray(x, float)
        lo, hi = self.box
        return self._interp(np.clip(x, lo, hi).reshape(-1, 2)).reshape(x.shape[:-1] + (2,))


@dataclass
class AssembledBody:
    measure: DislocationMeasure
    body: Body
    chi: np.ndarray
    forms: dict
    core_loops: list
    diagnostics: dict = field(default_factory=dict)

    def edge_integrals(self, i0, i1):
        """Exact integrals of Q along straight edges between vertices, shape (M, 2)."""
        p = self.body.mesh.points
        x0, x1 = p[i0], p[i1]
        out = (x1 - x0) + (self.chi[i1] - self.chi[i0])
        if self.measure.count:
            ang = segment_angles(x0, x1, self.measure.positions)
            out = out + ang @ self.measure.burgers / TWO_PI
        return out

    def circulations(self):
        res = []
        for loop in self.core_loops:
            res.append(self.edge_integrals(loop, np.roll(loop, -1)).sum(axis=0))
        return np.array(res).reshape(-1, 2)


def build_implant(measure, n_theta=64, n_theta_min=16, h_far=None, chi_grid=128, check_closed=True,
                  coarsen=1.5):
    """Mesh the square minus core discs and sample Q at quadrature points."""
    measure.check()
    lo, hi = measure.box
    m = measure.count
    if m:
        a = measure.smear_radius
        mesh = perforated_square(measure.positions, measure.core_radii, a, n_theta, h_far,
                                 measure.box, n_theta_min, coarsen)
    else:
        mesh = perforated_square(np.zeros((0, 2)), [], [], n_theta, h_far or (hi - lo) / 32, measure.box)
        a = None
    chi_field = HarmonicCorrection(measure, chi_grid)
    chi = chi_field(mesh.points)
    dchi = mesh.differential(chi)  # (T, 2, 2)
    qp = mesh.quad_points(QUAD3)
    S = singular_part(qp, measure.positions, measure.burgers)
    if m:
        alpha, beta = disc_parts(qp, measure.positions, measure.burgers, a)
    else:
        alpha = beta = np.zeros_like(S)
    gamma = S - alpha + beta + dchi[:, None]
    Q = np.eye(2) + S + dchi[:, None]
    detq = Q[..., 0, 0] * Q[..., 1, 1] - Q[..., 0, 1] * Q[..., 1, 0]
    if np.any(detq <= 0):
        t, k = np.unravel_index(np.argmin(detq), detq.shape)
        raise ConstructionFailure(f"det Q = {detq[t, k]:.3g} at {qp[t, k].tolist()}")
    qinv = np.linalg.inv(Q)
    wvol = QUAD3[1][None, :] * mesh.area[:, None] * detq
    try:
        body = Body(mesh, Q, qinv, wvol, mesh.points.copy(), meta={"kind": "assembled"})
    except CorruptBody as exc:
        raise ConstructionFailure(str(exc)) from exc
    loops = [mesh.boundary_loops[f"core{i}"] for i in range(m)]
    ab = AssembledBody(measure, body, chi, {"alpha": alpha, "beta": beta, "gamma": gamma}, loops)
    circ = ab.circulations()
    diag = {"min_det": float(detq.min()), "vertices": int(mesh.n_vertices), "triangles": int(mesh.n_tris)}
    if m:
        nb = np.linalg.norm(measure.burgers, axis=1)
        diag["circulation_error"] = float(np.max(np.linalg.norm(circ - measure.burgers, axis=1) / nb))
        diag["alpha_sup"] = float(np.max(op_norm(alpha)))
        diag["beta_sup"] = float(np.max(op_norm(beta)))
        diag["beta_bound"] = float(measure.b / (TWO_PI * a))
        g_sup = float(np.max(op_norm(gamma)))
        diag["gamma_sup"] = g_sup
        diag["gamma_constant"] = g_sup / (measure.b / a ** 2)
    else:
        diag["circulation_error"] = 0.0
    if check_closed:
        diag["closedness"] = closedness_residual(ab)
    ab.diagnostics = diag
    return ab


def closedness_residual(ab):
    """max over triangles of |loop integral of Q| / perimeter."""
    mesh = ab.body.mesh
    t = mesh.tris
    p = mesh.points
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    key = np.sort(e, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    E = ab.edge_integrals(uniq[:, 0], uniq[:, 1])
    sign = np.where(e[:, 0] == key[:, 0], 1.0, -1.0)
    contrib = (sign[:, None] * E[inv.ravel()]).reshape(3, len(t), 2)
    lengths = np.linalg.norm(p[e[:, 1]] - p[e[:, 0]], axis=1).reshape(3, len(t))
    return float(np.max(np.linalg.norm(contrib.sum(axis=0), axis=1) / lengths.sum(axis=0)))


def op_norm(A):
    """Spectral norm of 2x2 matrices in closed form."""
    f2 = np.sum(A * A, axis=(-2, -1))
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    return 0.5 * (np.sqrt(np.maximum(f2 + 2 * det, 0)) + np.sqrt(np.maximum(f2 - 2 * det, 0)))


def gamma_partial_circulation(ab, i, radius, n=2048):
    """Loop integral of gamma_loc around core i at the given radius (< a), exact disc part."""
    meas = ab.measure
    a = meas.smear_radius
    t = TWO_PI * np.arange(n) / n
    pts = meas.positions[i] + radius * np.stack([np.cos(t), np.sin(t)], -1)
    tang = radius * TWO_PI / n * np.stack([-np.sin(t), np.cos(t)], -1)
    alpha, beta = disc_parts(pts, meas.positions, meas.burgers, a)
    S = singular_part(pts, meas.positions, meas.burgers)
    gloc = S - alpha + beta
    return np.einsum("pkj,pj->k", gloc, tang)


def structured_load(n, box, density_fn, sub=8):
    """P1 load vector on square_mesh(n, box) from a density sampled on a fine grid."""
    lo, hi = box
    h = (hi - lo) / n
    m = n * sub
    c = lo + (np.arange(m) + 0.5) * (hi - lo) / m
    X, Y = np.meshgrid(c, c, indexing="ij")
    x = np.stack([X.ravel(), Y.ravel()], -1)
    f = np.asarray(density_fn(x), float).reshape(len(x), -1)
    w = ((hi - lo) / m) ** 2
    i = np.minimum(((x[:, 0] - lo) / h).astype(int), n - 1)
    j = np.minimum(((x[:, 1] - lo) / h).astype(int), n - 1)
    xi = (x[:, 0] - lo) / h - i
    eta = (x[:, 1] - lo) / h - j
    v00 = i * (n + 1) + j
    v10, v01, v11 = v00 + n + 1, v00 + 1, v00 + n + 2
    lower = xi >= eta
    # lower triangle (v00, v10, v11): weights 1 - xi, xi - eta, eta
    # upper triangle (v00, v11, v01): weights 1 - eta, xi, eta - xi
    out = np.zeros(((n + 1) ** 2, f.shape[1]))
    for verts, wts in (
        ((v00, v10, v11), (1 - xi, xi - eta, eta)),
        ((v00, v11, v01), (1 - eta, xi, eta - xi)),
    ):
        sel = lower if verts[1] is v10 else ~lower
        for vv, ww in zip(verts, wts):
            np.add.at(out, vv[sel], (w * ww[sel])[:, None] * f[sel])
    return out


def _dirichlet_solve(n, box, load):
    mesh = square_mesh(n, box)
    L = laplacian(mesh).tocsc()
    p = mesh.points
    lo, hi = box
    bd = np.isclose(p[:, 0], lo) | np.isclose(p[:, 0], hi) | np.isclose(p[:, 1], lo) | np.isclose(p[:, 1], hi)
    free = np.flatnonzero(~bd)
    u = np.zeros_like(load)
    lu = splu(L[free][:, free].tocsc())
    u[free] = lu.solve(load[free])
    return mesh, L, u


def h_minus_one_norm_sq(density_fn, box=(0.0, 1.0), n=128, sub=8):
    """||mu||^2 in H^{-1}: Dirichlet energy of psi with -Laplace psi = mu, psi = 0 on the boundary."""
    load = structured_load(n, box, density_fn, sub)
    _, L, u = _dirichlet_solve(n, box, load)
    return float(sum(u[:, k] @ (L @ u[:, k]) for k in range(u.shape[1])))


class HodgeStrain:
    """J0 with dJ0 = mu, div J0 = 0 and J0(n) = 0 on a square.

    Row k of J0 is the rotated gradient (-d_y phi_k, d_x phi_k) of the
    Dirichlet solution of Laplace(phi_k) = mu_k.
    """

    def __init__(self, mu_target, box=(0.0, 1.0), n=128, sub=4):
        self.box, self.n = box, n
        dens = _density_fn(mu_target)
        load = structured_load(n, box, dens, sub)
        self.mesh, _, phi = _dirichlet_solve(n, box, -load)
        self.phi = phi
        g = self.mesh.differential(phi)  # rows k: grad phi_k
        self.per_tri = np.stack([-g[:, :, 1], g[:, :, 0]], -1)

    def __call__(self, x):
        x = np.asarray(x, float)
        lo, hi = self.box
        n = self.n
        h = (hi - lo) / n
        flat = x.reshape(-1, 2)
        i = np.clip(((flat[:, 0] - lo) / h).astype(int), 0, n - 1)
        j = np.clip(((flat[:, 1] - lo) / h).astype(int), 0, n - 1)
        xi = (flat[:, 0] - lo) / h - i
        eta = (flat[:, 1] - lo) / h - j
        cell = i * n + j
        tri = np.where(xi >= eta, cell, cell + n * n)
        return self.per_tri[tri].reshape(x.shape[:-1] + (2, 2))

    def elastic_energy(self, form):
        return float(np.sum(form(self.per_tri) * self.mesh.area))


def _nearest_core(ab, x):
    meas = ab.measure
    d, idx = cKDTree(meas.positions).query(x.reshape(-1, 2))
    return d.reshape(x.shape[:-1]), idx.reshape(x.shape[:-1])


def deviation_report(ab, h_minus_one_grid=128):
    """Pointwise and integral size of dZ - Q for the identity chart Z."""
    body = ab.body
    meas = ab.measure
    D = body.q - np.eye(2)
    pw = op_norm(D)
    integral = float(np.sum(body.wvol * np.sum(D * D, axis=(-2, -1))))
    out = {"integral": integral,
           "bilipschitz": [float(op_norm(body.q).max()), float(op_norm(body.qinv).max())]}
    if meas.count == 0:
        out.update({"near_ratio": 0.0, "far_ratio": 0.0, "pointwise_max": float(pw.max())})
        return out
    a, b = meas.smear_radius, meas.b
    x = body.mesh.quad_points(QUAD3)
    r, idx = _nearest_core(ab, x)
    nb = np.linalg.norm(meas.burgers, axis=1)[idx]
    near = r < a
    out["near_ratio"] = float(np.max(pw[near] / (nb[near] / r[near] + b / a ** 2))) if near.any() else 0.0
    out["far_ratio"] = float(np.max(pw[~near] / (b / a ** 2))) if (~near).any() else 0.0
    out["pointwise_max"] = float(pw.max())
    self_term = float(np.sum(np.linalg.norm(meas.burgers, axis=1) ** 2
                             * np.log(a / np.linalg.norm(meas.burgers, axis=1))))
    hm1 = h_minus_one_norm_sq(meas.smeared, meas.box, h_minus_one_grid)
    out["self_term"] = self_term
    out["h_minus_one_sq"] = hm1
    out["integral_over_bound"] = integral / (self_term + hm1)
    h2 = h_squared(meas.n_eps, meas.eps)
    out["h_eps_sq"] = h2
    out["integral_over_h2"] = integral / h2
    return out


def torsion_functional(ab, psi):
    """Sum over cores of the loop integral of <Q(tangent), psi>.

    psi is a callable on points (M, 2) -> (M, 2), or a constant 2-vector.
    """
    total = 0.0
    p = ab.body.mesh.points
    for loop in ab.core_loops:
        nxt = np.roll(loop, -1)
        E = ab.edge_integrals(loop, nxt)
        mid = 0.5 * (p[loop] + p[nxt])
        val = psi(mid) if callable(psi) else np.broadcast_to(np.asarray(psi, float), mid.shape)
        total += float(np.sum(E * val))
    return total


def measure_pairing(measure, psi, smeared=False, n=400):
    """(1/(n eps)) * sum <b_i, psi(p_i)>, or the same for the smeared measure."""
    scale = measure.n_eps * measure.eps
    if not smeared:
        return float(np.sum(measure.burgers * psi(measure.positions))) / scale
    lo, hi = measure.box
    c = lo + (np.arange(n) + 0.5) * (hi - lo) / n
    X, Y = np.meshgrid(c, c, indexing="ij")
    x = np.stack([X.ravel(), Y.ravel()], -1)
    return float(np.sum(measure.smeared(x) * psi(x)) * ((hi - lo) / n) ** 2) / scale


def target_pairing(mu_target, psi, box=(0.0, 1.0), n=400):
    lo, hi = box
    c = lo + (np.arange(n) + 0.5) * (hi - lo) / n
    X, Y = np.meshgrid(c, c, indexing="ij")
    x = np.stack([X.ravel(), Y.ravel()], -1)
    return float(np.sum(_density_fn(mu_target)(x) * psi(x)) * ((hi - lo) / n) ** 2)


def burgers_convergence_check(bodies, mu_target, test_fields):
    """Gaps between the rescaled torsion pairing and the target pairing per field."""
    report = {"fields": []}
    for k, psi in enumerate(test_fields):
        target = target_pairing(mu_target, psi, bodies[0].measure.box)
        gaps, smeared_gaps = [], []
        for ab in bodies:
            meas = ab.measure
            val = torsion_functional(ab, psi) / (meas.n_eps * meas.eps)
            gaps.append(abs(val - target) / abs(target))
            smeared_gaps.append(abs(measure_pairing(meas, psi, smeared=True) - target) / abs(target))
        mono = all(g1 < g0 for g0, g1 in zip(gaps, gaps[1:]))
        report["fields"].append({"index": k, "target": target, "gaps": gaps, "smeared_gaps": smeared_gaps,
                                 "monotone": mono, "final": gaps[-1]})
    report["passed"] = all(f["monotone"] and f["final"] <= 0.05 for f in report["fields"])
    return report


def with_region_labels(body, centers, ball_radius, near_radius=None):
    """Copy of body with labels: cores (r < near_radius), balls (r < ball_radius), far field."""
    cen = body.mesh.points[body.mesh.tris].mean(axis=1)
    names = ["far"]
    labels = np.zeros(body.mesh.n_tris, dtype=np.int64)
    if len(centers):
        d, idx = cKDTree(centers).query(cen)
        m = len(centers)
        names = ["far"] + [f"ball{i}" for i in range(m)]
        in_ball = d < ball_radius
        labels[in_ball] = 1 + idx[in_ball]
        if near_radius is not None:
            names += [f"core{i}" for i in range(m)]
            in_core = d < near_radius
            labels[in_core] = 1 + m + idx[in_core]
    return Body(body.mesh, body.q, body.qinv, body.wvol, body.chart, labels, tuple(names), dict(body.meta))


def planar_body(mesh):
    """Body with Q = I on the given mesh."""
    ident = lambda x, y: np.broadcast_to(np.eye(2), np.shape(x) + (2, 2)).copy()  # noqa: E731
    return make_body(mesh, ident, mesh.points.copy(), QUAD3)


__all__ = ["DislocationMeasure", "approximate_measure", "build_implant", "deviation_report",
           "torsion_functional", "burgers_convergence_check", "HodgeStrain", "AssembledBody",
           "h_squared", "with_region_labels"]
