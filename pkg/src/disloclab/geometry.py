"""The single-dislocation model body in polar coordinates.

Points are (r, phi) with r >= |v|. The implant is

    Q = dx (x) e1 + dy (x) e2 + (dphi / 2 pi) (x) v,

so in the (dr, dphi) basis its columns are Q(d_r) = (cos phi, sin phi) and
Q(d_phi) = (-r sin phi + v1/2pi, r cos phi + v2/2pi). The metric is g = Q^T Q
and the reference chart is Z(r, phi) = (r cos phi, r sin phi).
"""
import csv
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .density import InvalidInput
from .mesh import annulus_polar, make_body, polar_jacobian, polar_to_cartesian, write_mesh_text

TWO_PI = 2 * np.pi


class OutsideManifold(ValueError):
    pass


class RegularityViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelManifold:
    burgers: tuple
    r_outer: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.burgers, dtype=float)
        if v.shape != (2,) or not np.all(np.isfinite(v)):
            raise InvalidInput("burgers must be a finite 2-vector")
        object.__setattr__(self, "burgers", (float(v[0]), float(v[1])))
        if not self.r_outer > self.r_inner:
            raise InvalidInput("r_outer must exceed |v|")

    @property
    def v(self):
        return np.array(self.burgers)

    @property
    def r_inner(self):
        return float(np.hypot(*self.burgers))


def _check_r(m, r):
    r = np.asarray(r, dtype=float)
    if np.any(r < m.r_inner * (1 - 1e-12)):
        raise OutsideManifold(f"r < |v| = {m.r_inner}")
    return r


def frame_at(m, r, phi):
    """Coordinate matrix of Q at (r, phi): columns are Q(d_r), Q(d_phi)."""
    r = _check_r(m, r)
    phi = np.asarray(phi, dtype=float)
    J = polar_jacobian(r, phi)
    J[..., 0, 1] += m.burgers[0] / TWO_PI
    J[..., 1, 1] += m.burgers[1] / TWO_PI
    return J


def metric_at(m, r, phi):
    """g = Q^T Q in the (dr, dphi) basis, from explicit entries."""
    r = _check_r(m, r)
    phi = np.asarray(phi, dtype=float)
    v1, v2 = m.burgers
    c, s = np.cos(phi), np.sin(phi)
    along = (v1 * c + v2 * s) / TWO_PI
    across = (-v1 * s + v2 * c) / TWO_PI
    g = np.empty(np.shape(r) + (2, 2))
    g[..., 0, 0] = 1.0
    g[..., 0, 1] = g[..., 1, 0] = along
    g[..., 1, 1] = (r + across) ** 2 + along ** 2
    return g


def coframe_at(m, r, phi):
    """Parallel coframe nu^1, nu^2 as rows in the (dr, dphi) basis."""
    return frame_at(m, r, phi)


def chart_map(m, r, phi):
    _check_r(m, r)
    return polar_to_cartesian(np.stack(np.broadcast_arrays(np.asarray(r, float), np.asarray(phi, float)), -1))


def chart_differential(m, r, phi):
    _check_r(m, r)
    return polar_jacobian(np.asarray(r, float), np.asarray(phi, float))


def deviation_norm(m, r, phi):
    """Operator norm of dZ - Q measured from (TM, g) to the plane."""
    Q = frame_at(m, r, phi)
    D = chart_differential(m, r, phi) - Q
    return np.linalg.norm(D @ np.linalg.inv(Q), ord=2, axis=(-2, -1))


def bilipschitz_constants(m, r, phi):
    """Largest |dZ| and |dZ^{-1}| (operator norms w.r.t. g and e)."""
    Q = frame_at(m, r, phi)
    A = chart_differential(m, r, phi) @ np.linalg.inv(Q)
    s = np.linalg.svd(A, compute_uv=False)
    return float(s[..., 0].max()), float((1.0 / s[..., -1]).max())


def core_distance_bounds(m, r):
    r = _check_r(m, r)
    lower = (1 - 1 / TWO_PI) * r + m.r_inner / TWO_PI
    return lower, r


def shortest_core_distance(m, r_max, n_r=120, n_phi=256):
    """Graph estimate of frak_r = dist(p, inner boundary) + |v| on a polar grid.

    Dijkstra on the 16-neighbour (r, phi) grid graph (knight moves included,
    which removes most of the 8-neighbour metrication bias) with edge
    lengths from the metric at edge midpoints. Returns (r grid, phi grid,
    distances of shape (n_r, n_phi)).
    """
    rs = np.linspace(m.r_inner, r_max, n_r)
    ph = TWO_PI * np.arange(n_phi) / n_phi
    idx = np.arange(n_r * n_phi).reshape(n_r, n_phi)
    rows, cols, vals = [], [], []
    steps = [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (2, -1), (1, 2), (1, -2)]
    for di, dj in steps:
        i0 = np.arange(max(0, -di), n_r - max(0, di))
        I, Jn = np.meshgrid(i0, np.arange(n_phi), indexing="ij")
        I2, J2 = I + di, (Jn + dj) % n_phi
        rm = 0.5 * (rs[I] + rs[I2])
        pm = ph[Jn] + 0.5 * dj * TWO_PI / n_phi
        g = metric_at(m, rm, pm)
        dx = np.stack([rs[I2] - rs[I], np.full(I.shape, dj * TWO_PI / n_phi)], -1)
        L = np.sqrt(np.einsum("...i,...ij,...j->...", dx, g, dx))
        rows.append(idx[I, Jn].ravel())
        cols.append(idx[I2, J2].ravel())
        vals.append(L.ravel())
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    G = coo_matrix((vals, (rows, cols)), shape=(n_r * n_phi,) * 2).tocsr()
    d = dijkstra(G, directed=False, indices=idx[0], min_only=True)
    return rs, ph, d.reshape(n_r, n_phi) + m.r_inner


def develop(m, cut_angle=0.0, radii=None, n_phi=64, n_gauss=8):
    """Cut-and-weld developing map f(q) = integral of Q from a base point.

    Paths run radially from (r0, cut) and then counter-clockwise along the
    circle of radius r. The grid angles are cut + 2 pi k / n_phi for
    k = 0..n_phi, so the first and last columns are the two one-sided limits
    at the cut. Returns a dict with r, phi, xy (n_r, n_phi + 1, 2) and the
    jump across the cut for every radius.
    """
    if radii is None:
        radii = np.linspace(m.r_inner if m.r_inner > 0 else 0.1 * m.r_outer, m.r_outer, 9)
    radii = np.asarray(radii, float)
    _check_r(m, radii)
    r0 = radii[0]
    phis = cut_angle + TWO_PI * np.arange(n_phi + 1) / n_phi
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    a, b = phis[:-1], phis[1:]
    s = 0.5 * (b - a)[:, None] * xg[None, :] + 0.5 * (a + b)[:, None]  # (n_phi, n_gauss)
    wts = 0.5 * (b - a)[:, None] * wg[None, :]
    xy = np.empty((len(radii), n_phi + 1, 2))
    radial = np.array([np.cos(cut_angle), np.sin(cut_angle)])
    for i, r in enumerate(radii):
        Q = frame_at(m, np.full(s.shape, r), s)[..., :, 1]  # Q(d_phi), (n_phi, n_gauss, 2)
        seg = np.einsum("pg,pgc->pc", wts, Q)
        xy[i, 0] = (r - r0) * radial
        xy[i, 1:] = xy[i, 0] + np.cumsum(seg, axis=0)
    jump = xy[:, -1] - xy[:, 0]
    return {"r": radii, "phi": phis, "xy": xy, "jump": jump}


def export_developed_csv(path, dev):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "phi", "x", "y"])
        for i, r in enumerate(dev["r"]):
            for j, p in enumerate(dev["phi"]):
                w.writerow([repr(float(r)), repr(float(p)), repr(float(dev["xy"][i, j, 0])), repr(float(dev["xy"][i, j, 1]))])


def export_developed_mesh(path, dev):
    nr, nc = dev["xy"].shape[:2]
    pts = dev["xy"].reshape(-1, 2)
    I, J = np.meshgrid(np.arange(nr - 1), np.arange(nc - 1), indexing="ij")
    a = (I * nc + J).ravel()
    b, c, d = a + nc, a + nc + 1, a + 1
    tris = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    write_mesh_text(path, pts, tris)


def loop_circulation(m, loop_r, loop_phi):
    """Integral of Q along a closed polyline given in (r, unwrapped phi).

    Uses the exact antiderivative Z(r, phi) + phi v / 2 pi of Q, so each
    segment contributes the difference of its endpoint values.
    """
    r = np.asarray(loop_r, float)
    p = np.asarray(loop_phi, float)
    _check_r(m, r)
    F = polar_to_cartesian(np.stack([r, p], -1)) + p[:, None] * m.v[None, :] / TWO_PI
    return F[-1] - F[0]


def quadrature_circulation(m, loop_r, loop_phi, n_gauss=6):
    """Same loop integral, by Gauss quadrature of Q along straight chart segments."""
    r = np.asarray(loop_r, float)
    p = np.asarray(loop_phi, float)
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    t = 0.5 * (xg + 1)
    dr = np.diff(r)
    dp = np.diff(p)
    rr = r[:-1, None] + t[None, :] * dr[:, None]
    pp = p[:-1, None] + t[None, :] * dp[:, None]
    Q = frame_at(m, rr, pp)
    tang = np.stack([np.broadcast_to(dr[:, None], rr.shape), np.broadcast_to(dp[:, None], rr.shape)], -1)
    vals = np.einsum("sgij,sgj->sgi", Q, tang)
    return np.einsum("g,sgi->i", 0.5 * wg, vals)


def model_body(m, r_in=None, cells_per_decade=12, n_theta=None, rule=None, coords="cartesian"):
    """Mesh of r_in <= r <= R with Q sampled at quadrature points.

    With coords="polar" the mesh lives in (r, phi) and Q is frame_at. With
    "cartesian" the same connectivity is laid out at the chart images, so
    Q becomes I + v (x) dtheta / 2pi and the chart is reproduced exactly by
    P1 elements (no interpolation energy from the curvature of polar lines).
    """
    from .mesh import QUAD3, TriMesh
    r_in = m.r_inner if r_in is None else r_in
    polar = annulus_polar(r_in, m.r_outer, cells_per_decade, n_theta)
    chart = polar_to_cartesian(polar.points)
    meta = {"kind": "model", "burgers": list(m.burgers), "r_in": r_in, "r_out": m.r_outer, "coords": coords}
    if coords == "polar":
        return make_body(polar, lambda r, p: frame_at(m, r, p), chart, rule or QUAD3, meta=meta)
    if coords != "cartesian":
        raise InvalidInput(f"unknown coordinates {coords!r}")
    mesh = TriMesh(chart, polar.tris.copy())
    mesh.boundary_loops = polar.boundary_loops
    mesh.radii, mesh.n_theta = polar.radii, polar.n_theta
    v = np.asarray(m.burgers, float)

    def q_fn(x, y):
        r2 = x * x + y * y
        dth = np.stack([-y / r2, x / r2], -1)
        return np.eye(2) + v[:, None] * dth[..., None, :] / TWO_PI

    return make_body(mesh, q_fn, chart.copy(), rule or QUAD3, meta=meta)


def body_radius(body, pts):
    """Distance to the core axis for mesh-coordinate points of a model body."""
    if body.meta.get("coords") == "polar":
        return pts[..., 0]
    return np.linalg.norm(pts, axis=-1)


def check_regular_boundary(m, n_r=60, n_phi=128):
    """Numerical check of the regular inner-boundary conditions on r <= 3|v|.

    (a) points within intrinsic distance |v| of the core have r <= 3|v|,
    (b) the annulus sits inside the model body of radius 4|v| (inclusion),
    (c) metric equivalence with the flat annulus B_2|v| minus B_|v|.
    The constant in (c) is the product of the coordinate metric
    equivalence, the pi/2 ratio between intrinsic and chordal distance on a
    round annulus and the factor 2 of the radial squeeze r -> (r + |v|)/2.
    """
    v = m.r_inner
    if v == 0:
        return {"inclusion_rmax": 0.0, "embeds": True, "metric_constant": 1.0,
                "equivalence_constant": 1.0, "passed": True}
    rs, ph, d = shortest_core_distance(ModelManifold(m.burgers, 4 * v), 4 * v, n_r, n_phi)
    near = (d - v) < v
    rmax = float(np.max(np.broadcast_to(rs[:, None], d.shape)[near]))
    R, P = np.meshgrid(np.linspace(v, 3 * v, 40), TWO_PI * np.arange(n_phi) / n_phi, indexing="ij")
    g = metric_at(m, R, P)
    scale = np.zeros(R.shape + (2, 2))
    scale[..., 0, 0] = 1.0
    scale[..., 1, 1] = 1.0 / R
    ev = np.linalg.eigvalsh(scale @ g @ scale)
    cmet = float(np.sqrt(max(ev[..., 1].max(), 1.0 / ev[..., 0].min())))
    const = cmet * (np.pi / 2) * 2.0
    rep = {"inclusion_rmax": rmax / v, "embeds": 3 * v < 4 * v, "metric_constant": cmet,
           "equivalence_constant": const}
    rep["passed"] = bool(rmax <= 3 * v and rep["embeds"] and const <= 10)
    if not rep["passed"]:
        raise RegularityViolation(rep)
    return rep
