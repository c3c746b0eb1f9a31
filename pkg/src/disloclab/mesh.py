"""Triangle meshes, P1 gradient operators and implant-carrying bodies.

A mesh lives in a coordinate chart: polar (r, phi) for the model manifold,
Cartesian for planar domains. Each triangle keeps its own copy of vertex
coordinates (`local`) so periodic polar meshes can unwrap phi across the seam.

A `Body` is a mesh plus, at every quadrature point, the implant Q (a 2x2 map
from coordinate tangent vectors to the plane), its inverse and the volume
weight quad_weight * coordinate_area * det Q.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay

# degree-2 interior rule, barycentric coordinates and weights
QUAD3 = (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
         np.array([1 / 3, 1 / 3, 1 / 3]))
QUAD1 = (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0]))


class CorruptBody(RuntimeError):
    pass


@dataclass
class TriMesh:
    points: np.ndarray
    tris: np.ndarray
    local: np.ndarray = None
    boundary_loops: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.tris = np.asarray(self.tris, dtype=np.int64)
        if self.local is None:
            self.local = self.points[self.tris]
        L = np.stack([self.local[:, 1] - self.local[:, 0],
                      self.local[:, 2] - self.local[:, 0]], axis=-1)
        det = L[:, 0, 0] * L[:, 1, 1] - L[:, 0, 1] * L[:, 1, 0]
        flip = det < 0
        if np.any(flip):
            self.tris[flip] = self.tris[flip][:, [0, 2, 1]]
            self.local[flip] = self.local[flip][:, [0, 2, 1]]
            L[flip] = L[flip][:, :, [1, 0]]
            det[flip] = -det[flip]
        self.area = 0.5 * det
        self.edge_inv = np.linalg.inv(L)

    @property
    def n_vertices(self):
        return len(self.points)

    @property
    def n_tris(self):
        return len(self.tris)

    def basis_gradients(self):
        """Coordinate gradients of the three hat functions, shape (T, 3, 2)."""
        G = self.edge_inv
        g1, g2 = G[:, 0, :], G[:, 1, :]
        return np.stack([-g1 - g2, g1, g2], axis=1)

    def quad_points(self, rule=QUAD3):
        bary, _ = rule
        return np.einsum("kv,tvc->tkc", bary, self.local)

    def differential(self, f):
        """Per-triangle differential of the P1 interpolant of f, shape (T, 2, 2)."""
        F = np.asarray(f)[self.tris]
        E = np.stack([F[:, 1] - F[:, 0], F[:, 2] - F[:, 0]], axis=-1)
        return E @ self.edge_inv

    def edges(self):
        e = np.concatenate([self.tris[:, [0, 1]], self.tris[:, [1, 2]], self.tris[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def boundary_edges(self):
        e = np.concatenate([self.tris[:, [0, 1]], self.tris[:, [1, 2]], self.tris[:, [2, 0]]])
        key = np.sort(e, axis=1)
        _, idx, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
        return e[idx[counts == 1]]

    def boundary_vertices(self):
        return np.unique(self.boundary_edges())


def log_radii(r_in, r_out, cells_per_decade):
    n = max(1, int(np.ceil(cells_per_decade * np.log10(r_out / r_in))))
    return np.geomspace(r_in, r_out, n + 1)


def annulus_polar(r_in, r_out, cells_per_decade=12, n_theta=None, radii=None):
    """Periodic (r, phi) mesh of r_in <= r <= r_out, log-graded in r.

    Each (r, phi) cell is split along alternating diagonals.
    """
    radii = log_radii(r_in, r_out, cells_per_decade) if radii is None else np.asarray(radii)
    if n_theta is None:
        ratio = radii[1] / radii[0]
        n_theta = int(8 * np.ceil(2 * np.pi / (ratio - 1) / 8))
    nr = len(radii)
    phis = 2 * np.pi * np.arange(n_theta) / n_theta
    R, P = np.meshgrid(radii, phis, indexing="ij")
    points = np.stack([R.ravel(), P.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(nr - 1), np.arange(n_theta), indexing="ij")
    i, j = i.ravel(), j.ravel()
    jp = (j + 1) % n_theta
    v00 = i * n_theta + j
    v01 = i * n_theta + jp
    v10 = (i + 1) * n_theta + j
    v11 = (i + 1) * n_theta + jp
    dphi = 2 * np.pi / n_theta
    c00 = np.stack([radii[i], phis[j]], axis=1)
    c01 = np.stack([radii[i], phis[j] + dphi], axis=1)
    c10 = np.stack([radii[i + 1], phis[j]], axis=1)
    c11 = np.stack([radii[i + 1], phis[j] + dphi], axis=1)
    alt = (i + j) % 2 == 0
    ta = np.where(alt[:, None], np.stack([v00, v10, v11], 1), np.stack([v00, v10, v01], 1))
    tb = np.where(alt[:, None], np.stack([v00, v11, v01], 1), np.stack([v10, v11, v01], 1))
    la = np.where(alt[:, None, None], np.stack([c00, c10, c11], 1), np.stack([c00, c10, c01], 1))
    lb = np.where(alt[:, None, None], np.stack([c00, c11, c01], 1), np.stack([c10, c11, c01], 1))
    mesh = TriMesh(points, np.concatenate([ta, tb]), np.concatenate([la, lb]))
    mesh.boundary_loops = {"inner": np.arange(n_theta), "outer": (nr - 1) * n_theta + np.arange(n_theta)}
    mesh.radii = radii
    mesh.n_theta = n_theta
    return mesh


def polar_to_cartesian(points):
    r, p = points[..., 0], points[..., 1]
    return np.stack([r * np.cos(p), r * np.sin(p)], axis=-1)


def polar_jacobian(r, phi):
    """d(x, y)/d(r, phi), shape (..., 2, 2)."""
    r, phi = np.broadcast_arrays(np.asarray(r, float), np.asarray(phi, float))
    c, s = np.cos(phi), np.sin(phi)
    J = np.empty(r.shape + (2, 2))
    J[..., 0, 0] = c
    J[..., 0, 1] = -r * s
    J[..., 1, 0] = s
    J[..., 1, 1] = r * c
    return J


def _ring_points(center, r0, r1, n_theta, n_min=None, coarsen=4.0):
    """Staggered rings from r0 to r1; the angular count halves every `coarsen` factor in radius."""
    n_min = n_theta if n_min is None else n_min
    pts, radii = [], []
    r, n, r_last = r0, n_theta, r0
    k = 0
    while r < r1 or k == 0:
        th = 2 * np.pi * (np.arange(n) + 0.5 * (k % 2)) / n
        pts.append(center + r * np.stack([np.cos(th), np.sin(th)], axis=1))
        radii.append(r)
        r *= 1.0 + 2 * np.pi / n
        k += 1
        if n // 2 >= n_min and r > coarsen * r_last:
            n //= 2
            r_last = r
    return np.concatenate(pts), np.array(radii), n


def perforated_square(centers, hole_radii, patch_radii, n_theta=64, h_far=None, box=(0.0, 1.0), n_theta_min=None,
                      coarsen=4.0):
    """Delaunay mesh of a square minus discs, graded towards each hole.

    Each hole gets rings of points growing geometrically up to its patch
    radius, n_theta on the hole boundary and coarsening outward down to
    n_theta_min; the rest of the square is filled with a uniform lattice
    of spacing h_far. The first ring is the polygonal hole boundary.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float)).reshape(-1, 2)
    hole_radii = np.broadcast_to(np.asarray(hole_radii, dtype=float), (len(centers),))
    patch_radii = np.broadcast_to(np.asarray(patch_radii, dtype=float), (len(centers),))
    lo, hi = box
    n_outer = n_theta if n_theta_min is None else n_theta_min
    if h_far is None:
        h_far = 2 * np.pi * (patch_radii.min() if len(centers) else (hi - lo) / 8) / n_outer * 1.5
    nb = max(2, int(np.ceil((hi - lo) / h_far)))
    s = np.linspace(lo, hi, nb + 1)
    X, Y = np.meshgrid(s, s, indexing="ij")
    grid = np.stack([X.ravel(), Y.ravel()], axis=1)
    keep = np.ones(len(grid), dtype=bool)
    ring_sets, starts = [], []
    offset = 0
    for c, r0, rp in zip(centers, hole_radii, patch_radii):
        d = np.hypot(grid[:, 0] - c[0], grid[:, 1] - c[1])
        pts, radii, _ = _ring_points(c, r0, rp, n_theta, n_theta_min, coarsen)
        keep &= d > radii[-1] + 0.5 * h_far
        starts.append(offset)
        ring_sets.append(pts)
        offset += len(pts)
    on_edge = (np.isclose(grid[:, 0], lo) | np.isclose(grid[:, 0], hi)
               | np.isclose(grid[:, 1], lo) | np.isclose(grid[:, 1], hi))
    keep |= on_edge
    pts = np.concatenate(ring_sets + [grid[keep]]) if ring_sets else grid
    tri = Delaunay(pts, qhull_options="Qbb Qc Qz Q12")
    tris = tri.simplices
    cen = pts[tris].mean(axis=1)
    inside = np.zeros(len(tris), dtype=bool)
    for c, r0 in zip(centers, hole_radii):
        inside |= np.hypot(cen[:, 0] - c[0], cen[:, 1] - c[1]) < r0
    tris = tris[~inside]
    used = np.unique(tris)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    mesh = TriMesh(pts[used], remap[tris])
    loops = {}
    for i, st in enumerate(starts):
        loops[f"core{i}"] = remap[st + np.arange(n_theta)]
    mesh.boundary_loops = loops
    return mesh


@dataclass
class Body:
    """Mesh plus implant samples at quadrature points.

    q, qinv: (T, K, 2, 2); wvol: (T, K) metric volume weights;
    chart: (N, 2) image of each vertex under the reference chart Z;
    labels: (T,) integer region labels with `label_names`.
    """
    mesh: TriMesh
    q: np.ndarray
    qinv: np.ndarray
    wvol: np.ndarray
    chart: np.ndarray
    labels: np.ndarray = None
    label_names: tuple = ("all",)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        detq = self.q[..., 0, 0] * self.q[..., 1, 1] - self.q[..., 0, 1] * self.q[..., 1, 0]
        if np.any(~np.isfinite(detq)) or np.any(detq <= 0):
            bad = np.argmin(detq)
            raise CorruptBody(f"det Q <= 0 on element {np.unravel_index(bad, detq.shape)[0]}")
        if self.labels is None:
            self.labels = np.zeros(self.mesh.n_tris, dtype=np.int64)

    @property
    def volume(self):
        return float(self.wvol.sum())

    def restrict(self, tri_mask):
        """Sub-body on the selected triangles, vertices renumbered."""
        tris = self.mesh.tris[tri_mask]
        used = np.unique(tris)
        remap = -np.ones(self.mesh.n_vertices, dtype=np.int64)
        remap[used] = np.arange(len(used))
        sub = TriMesh(self.mesh.points[used], remap[tris], self.mesh.local[tri_mask].copy())
        return Body(sub, self.q[tri_mask], self.qinv[tri_mask], self.wvol[tri_mask],
                    self.chart[used], self.labels[tri_mask], self.label_names, dict(self.meta)), used


def make_body(mesh, q_fn, chart, rule=QUAD3, labels=None, label_names=("all",), meta=None):
    bary, w = rule
    qp = mesh.quad_points(rule)
    q = q_fn(qp[..., 0], qp[..., 1])
    qinv = np.linalg.inv(q)
    detq = np.linalg.det(q)
    wvol = w[None, :] * mesh.area[:, None] * detq
    return Body(mesh, q, qinv, wvol, chart, labels, label_names, meta or {})


def strain_operator(body):
    """Sparse S with (S u) = vec(du Q^{-1}) at every quadrature point.

    Rows are ordered (triangle, point, i, j) with vec row-major; u is the
    vertex field flattened as (N, 2) -> 2N.
    """
    mesh = body.mesh
    T, K = body.wvol.shape
    gl = mesh.basis_gradients()                       # (T, 3, 2)
    c = np.einsum("tva,tkaj->tkvj", gl, body.qinv)    # (T, K, 3, 2)
    rows, cols, vals = [], [], []
    base = (np.arange(T)[:, None] * K + np.arange(K)[None, :]) * 4  # (T, K)
    for v in range(3):
        vert = mesh.tris[:, v]
        for i in range(2):
            for j in range(2):
                rows.append((base + 2 * i + j).ravel())
                cols.append(np.repeat(2 * vert + i, K))
                vals.append(c[:, :, v, j].ravel())
    S = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(4 * T * K, 2 * mesh.n_vertices))
    return S


def quadratic_system(body, form, particular=None, tri_mask=None):
    """Stiffness K and load b for u -> sum w * form(B_p + du Q^{-1}).

    Energy = u^T K u + 2 b^T u + c. `particular` has shape (T, K, 2, 2).
    """
    S = strain_operator(body)
    w = body.wvol.ravel()
    if tri_mask is not None:
        w = (body.wvol * tri_mask[:, None]).ravel()
    C = form.matrix()
    D = sp.kron(sp.diags(w), sp.csr_matrix(C), format="csr")
    K = (S.T @ D @ S).tocsr()
    if particular is None:
        return K, np.zeros(K.shape[0]), 0.0
    bp = particular.reshape(-1)
    Db = D @ bp
    return K, S.T @ Db, float(bp @ Db)


def write_mesh_text(path, points, tris):
    """Indexed triangle format: 'v x y' lines then 'f i j k' lines (0-based)."""
    with open(path, "w") as fh:
        fh.write(f"# vertices {len(points)} faces {len(tris)}\n")
        for x, y in points:
            fh.write(f"v {x!r} {y!r}\n")
        for a, b, c in tris:
            fh.write(f"f {a} {b} {c}\n")


def read_mesh_text(path):
    pts, tris = [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("v "):
                pts.append([float(t) for t in line.split()[1:3]])
            elif line.startswith("f "):
                tris.append([int(t) for t in line.split()[1:4]])
    return np.array(pts), np.array(tris, dtype=np.int64)


def square_mesh(n, box=(0.0, 1.0)):
    """Structured n x n square split into 2n^2 triangles."""
    lo, hi = box
    s = np.linspace(lo, hi, n + 1)
    X, Y = np.meshgrid(s, s, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v00 = (i * (n + 1) + j).ravel()
    v10, v01, v11 = v00 + n + 1, v00 + 1, v00 + n + 2
    tris = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
    return TriMesh(pts, tris)


def laplacian(mesh):
    """P1 stiffness matrix of the Dirichlet form int grad u . grad v."""
    g = mesh.basis_gradients()
    Ke = np.einsum("tac,tbc->tab", g, g) * mesh.area[:, None, None]
    rows = np.repeat(mesh.tris, 3, axis=1).ravel()
    cols = np.tile(mesh.tris, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(n, n))


def load_vector(mesh, values, rule=QUAD3):
    """int f phi_a for f sampled at quadrature points, shape (T, K, ...)."""
    bary, w = rule
    values = np.asarray(values, dtype=float)
    contrib = np.einsum("k,kv,tk...->tv...", w, bary, values) * mesh.area.reshape((-1, 1) + (1,) * (values.ndim - 2))
    out = np.zeros((mesh.n_vertices,) + values.shape[2:])
    np.add.at(out, mesh.tris, contrib)
    return out


GAUSS3 = (np.array([0.5 - np.sqrt(0.15), 0.5, 0.5 + np.sqrt(0.15)]), np.array([5.0, 8.0, 5.0]) / 18.0)


def outer_boundary_edges(mesh, box=(0.0, 1.0)):
    """Boundary edges lying on the square box, oriented with the domain on the left."""
    e = mesh.boundary_edges()
    p = mesh.points
    lo, hi = box
    on = lambda x: np.isclose(x, lo) | np.isclose(x, hi)  # noqa: E731
    a, b = p[e[:, 0]], p[e[:, 1]]
    keep = (on(a[:, 0]) & np.isclose(a[:, 0], b[:, 0])) | (on(a[:, 1]) & np.isclose(a[:, 1], b[:, 1]))
    return e[keep]


def boundary_load(mesh, edges, g_fn):
    """int_edges g phi_a with g_fn(points, outward normals) -> (M, ...).

    Edges come from boundary_edges, so they run counter-clockwise around
    the domain and (t_y, -t_x) points outward.
    """
    s, w = GAUSS3
    a, b = mesh.points[edges[:, 0]], mesh.points[edges[:, 1]]
    t = b - a
    L = np.linalg.norm(t, axis=1)
    nrm = np.stack([t[:, 1], -t[:, 0]], 1) / L[:, None]
    out = None
    for sk, wk in zip(s, w):
        x = a + sk * t
        g = np.asarray(g_fn(x, nrm), dtype=float)
        if out is None:
            out = np.zeros((mesh.n_vertices,) + g.shape[1:])
        wt = (wk * L).reshape((-1,) + (1,) * (g.ndim - 1))
        np.add.at(out, edges[:, 0], (1 - sk) * wt * g)
        np.add.at(out, edges[:, 1], sk * wt * g)
    return out
