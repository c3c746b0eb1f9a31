"""Nonlinear elastic energy of configurations, its minimisation and rigidity probes.

A configuration is an (N, 2) array of vertex images; its differential is
constant on every triangle. The energy of f on a body is

    E(f) = sum over quadrature points of wvol * W(df Q^{-1}),

which is the metric-volume integral of W(df o Q^{-1}).
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .density import (EnergyDensity, InvalidInput, closest_rotation, density_and_stress, dist2_to_rotations,
                      hessian_at_identity)
from .mesh import QUAD3, make_body, perforated_square, quadratic_system


class DivergenceError(RuntimeError):
    pass


class DegenerateField(RuntimeError):
    pass


@dataclass
class Configuration:
    positions: np.ndarray

    def differential(self, body):
        return body.mesh.differential(self.positions)


@dataclass
class EnergyBreakdown:
    total: float
    per_region: dict
    distortion: float

    def to_dict(self):
        return {"total": self.total, "per_region": dict(self.per_region), "distortion": self.distortion}


def _strain(body, f):
    df = body.mesh.differential(f)
    return np.einsum("tij,tkjl->tkil", df, body.qinv)


def energy(body, f, density):
    A = _strain(body, f)
    W, _ = density_and_stress(density, A)
    per_tri = np.sum(body.wvol * W, axis=1)
    regions = np.bincount(body.labels, weights=per_tri, minlength=len(body.label_names))
    per_region = {name: float(regions[i]) for i, name in enumerate(body.label_names)}
    total = float(np.sum(regions))
    distortion = float(np.sum(body.wvol * dist2_to_rotations(A)))
    return EnergyBreakdown(total, per_region, distortion)


def energy_and_gradient(body, f, density, tri_weights=None):
    """Energy and its gradient with respect to the vertex positions."""
    mesh = body.mesh
    A = _strain(body, f)
    W, P = density_and_stress(density, A)
    w = body.wvol if tri_weights is None else body.wvol * tri_weights[:, None]
    E = float(np.sum(w * W))
    # dE/d(df) = sum_k w_k P_k Q_k^{-T}
    Gdf = np.einsum("tk,tkil,tkjl->tij", w, P, body.qinv)
    Ge = Gdf @ np.swapaxes(mesh.edge_inv, -1, -2)  # columns: d/d(f1 - f0), d/d(f2 - f0)
    n = mesh.n_vertices
    grad = np.zeros((n, 2))
    t = mesh.tris
    for c in range(2):
        g1, g2 = Ge[:, c, 0], Ge[:, c, 1]
        grad[:, c] = (np.bincount(t[:, 1], g1, n) + np.bincount(t[:, 2], g2, n)
                      - np.bincount(t[:, 0], g1 + g2, n))
    return E, grad


def gauge_vertices(body):
    """Vertex pinned in full and the vertex whose position is kept on a ray."""
    chart = body.chart
    a = int(np.argmin(np.sum((chart - chart.mean(axis=0)) ** 2, axis=1)))
    b = int(np.argmax(np.sum((chart - chart[a]) ** 2, axis=1)))
    return a, b


class _Reduced:
    """Affine map x = x0 + P z removing one rigid motion."""

    def __init__(self, body, x0, gauge):
        n = body.mesh.n_vertices
        a, b = gauge
        x0 = np.asarray(x0, float).reshape(-1)
        d = x0.reshape(n, 2)[b] - x0.reshape(n, 2)[a]
        nd = np.linalg.norm(d)
        d = d / nd if nd > 0 else np.array([1.0, 0.0])
        free = np.ones(2 * n, dtype=bool)
        free[[2 * a, 2 * a + 1, 2 * b, 2 * b + 1]] = False
        idx = np.flatnonzero(free)
        rows = np.concatenate([idx, [2 * b, 2 * b + 1]])
        cols = np.concatenate([np.arange(len(idx)), [len(idx), len(idx)]])
        vals = np.concatenate([np.ones(len(idx)), d])
        self.P = sp.csr_matrix((vals, (rows, cols)), shape=(2 * n, len(idx) + 1))
        self.x0 = x0
        self.n = n

    def full(self, z):
        return (self.x0 + self.P @ z).reshape(self.n, 2)

    def reduce_grad(self, g):
        return self.P.T @ g.reshape(-1)


@dataclass
class MinimizeResult:
    positions: np.ndarray
    breakdown: EnergyBreakdown
    iterations: int
    converged: bool
    log: list = field(default_factory=list)


def minimize(body, density, initial, tol_g=1e-7, tol_e=1e-12, max_iter=3000, memory=12,
             precondition=True, gauge=None, tri_weights=None, armijo=1e-4, max_halvings=40):
    """Limited-memory quasi-Newton descent with Armijo backtracking.

    The initial inverse Hessian of the two-loop recursion is the inverse of
    the linear-elastic stiffness at the identity (one sparse factorisation),
    which makes the iteration count nearly mesh independent. Stops when the
    reduced gradient max-norm drops below tol_g times its initial value, or
    when the energy decreased by less than tol_e (relative) over 10 steps,
    or when no step can lower the energy beyond rounding (including an
    energy that is already zero to round-off).
    """
    f0 = np.asarray(initial, float)
    gauge = gauge_vertices(body) if gauge is None else gauge
    red = _Reduced(body, f0, gauge)
    z = np.zeros(red.P.shape[1])

    def fg(zz):
        E, g = energy_and_gradient(body, red.full(zz), density, tri_weights)
        return E, red.reduce_grad(g)

    if precondition:
        K, _, _ = quadratic_system(body, hessian_at_identity(density), tri_mask=tri_weights)
        Kr = (red.P.T @ K @ red.P).tocsc() * 2.0
        Kr = Kr + sp.identity(Kr.shape[0], format="csc") * (1e-12 * abs(Kr.diagonal()).max())
        lu = splu(Kr)
        apply_h0 = lu.solve
    else:
        apply_h0 = lambda q: q  # noqa: E731

    E, g = fg(z)
    g0 = max(np.abs(g).max(), 1e-300)
    S, Y = [], []
    hist = [E]
    log = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(S), reversed(Y)):
            a = (s @ q) / (y @ s)
            alphas.append(a)
            q -= a * y
        r = apply_h0(q)
        for (s, y), a in zip(zip(S, Y), reversed(alphas)):
            b = (y @ r) / (y @ s)
            r += s * (a - b)
        d = -r
        slope = g @ d
        if not slope < 0:
            S, Y = [], []
            d = -apply_h0(g)
            slope = g @ d
        t = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            zn = z + t * d
            En, gn = fg(zn)
            if np.isfinite(En) and En <= E + armijo * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if S:
                S, Y = [], []
                continue
            if abs(slope) <= 1e-10 * abs(E) or abs(E) <= 1e-24 * body.volume:
                # predicted decrease is below the rounding floor of E, or E is zero to round-off
                converged = True
                log.append({"iter": it, "energy": E, "gmax": float(np.abs(g).max()), "step": 0.0})
                break
            raise DivergenceError(f"line search failed at iteration {it}, energy {E!r}")
        s_vec, y_vec = zn - z, gn - g
        if s_vec @ y_vec > 1e-300:
            S.append(s_vec)
            Y.append(y_vec)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        z, E, g = zn, En, gn
        hist.append(E)
        log.append({"iter": it, "energy": E, "gmax": float(np.abs(g).max()), "step": t})
        if np.abs(g).max() <= tol_g * g0:
            converged = True
            break
        if len(hist) > 10 and (hist[-11] - hist[-1]) <= tol_e * abs(hist[-1]):
            converged = True
            break
    f = red.full(z)
    return MinimizeResult(f, energy(body, f, density), it, converged, log)


@dataclass
class RigidityReport:
    rotation: np.ndarray
    lhs: float
    rhs: float
    ratio: float
    degenerate: bool = False
    slack: float = 0.0

    def to_dict(self):
        return {"rotation": self.rotation.tolist(), "lhs": self.lhs, "rhs": self.rhs,
                "ratio": self.ratio, "degenerate": self.degenerate, "slack": self.slack}


def _rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotation_misfit(body, f, U):
    A = _strain(body, f)
    return float(np.sum(body.wvol * np.sum((A - U) ** 2, axis=(-2, -1))))


def best_rotation(body, f, slack=0.0):
    """Procrustes rotation U minimising ||df - U Q||^2 and the rigidity ratio."""
    A = _strain(body, f)
    M = np.einsum("tk,tkij->ij", body.wvol, A)
    degenerate = np.linalg.norm(M) < 1e-14 * max(body.volume, 1e-300)
    U = np.eye(2) if degenerate else closest_rotation(M)
    lhs = float(np.sum(body.wvol * np.sum((A - U) ** 2, axis=(-2, -1))))
    rhs = float(np.sum(body.wvol * dist2_to_rotations(A)))
    floor = 1e-20 * body.volume  # squared strains below this are round-off
    if rhs <= floor:
        ratio = 0.0 if lhs <= floor else np.inf
    else:
        ratio = lhs / (rhs + slack)
    return RigidityReport(U, lhs, rhs, float(ratio), bool(degenerate), slack)


def rotation_is_optimal(body, f, U, angle=1e-3):
    base = rotation_misfit(body, f, U)
    return all(rotation_misfit(body, f, _rotation(s) @ U) >= base for s in (angle, -angle))


def random_trial_field(body, rng, amplitude, n_modes=4):
    """Smooth random field: a rigid motion, a slowly varying rotation and random modes.

    Built from the chart positions X so that it makes sense on any body:
    f = U0 (R(omega(X)) X + amplitude * sum of low Fourier modes).
    """
    X = body.chart
    lo, hi = X.min(axis=0), X.max(axis=0)
    Y = (X - lo) / np.maximum(hi - lo, 1e-300)
    out = np.zeros_like(X)
    for _ in range(n_modes):
        k = rng.integers(0, 3, size=2)
        ph = rng.uniform(0, 2 * np.pi, size=2)
        c = rng.normal(size=2)
        out += c[None, :] * np.cos(np.pi * (k[0] * Y[:, :1] + k[1] * Y[:, 1:2]) + ph[None, :])
    kw = rng.integers(1, 3, size=2)
    omega = amplitude * rng.normal() * np.cos(np.pi * (kw[0] * Y[:, 0] + kw[1] * Y[:, 1]) + rng.uniform(0, 2 * np.pi))
    c, s = np.cos(omega), np.sin(omega)
    rot = np.stack([c * X[:, 0] - s * X[:, 1], s * X[:, 0] + c * X[:, 1]], axis=1)
    U0 = _rotation(rng.uniform(0, 2 * np.pi))
    return (rot + amplitude * out) @ U0.T + rng.normal(size=2)


def holed_square_body(n_holes, area_fraction=0.05, n_theta=32, h_far=None):
    """Unit square with n_holes equal round holes on a regular grid, Q = I."""
    k = int(round(np.sqrt(n_holes)))
    if k * k != n_holes:
        raise InvalidInput("hole count must be a perfect square")
    if n_holes == 0:
        mesh = perforated_square(np.zeros((0, 2)), [], [], n_theta, h_far or 1 / 24)
    else:
        c = (np.arange(k) + 0.5) / k
        centers = np.stack(np.meshgrid(c, c, indexing="ij"), -1).reshape(-1, 2)
        rh = np.sqrt(area_fraction / (np.pi * n_holes))
        mesh = perforated_square(centers, rh, 0.35 / k, n_theta, h_far or min(1 / 24, 2 * np.pi * 0.35 / k / n_theta * 1.5))
    ident = lambda x, y: np.broadcast_to(np.eye(2), np.shape(x) + (2, 2)).copy()  # noqa: E731
    return make_body(mesh, ident, mesh.points.copy(), QUAD3)


def uniform_fjm_probe(hole_counts=(1, 4, 16), trials=200, seed=0, area_fraction=0.05, amplitude=0.05):
    """Worst ||df - U||^2 / int dist^2(df, SO(2)) over random fields, per hole count."""
    rng = np.random.default_rng(seed)
    worst = {}
    for nh in hole_counts:
        body = holed_square_body(nh, area_fraction)
        best = 0.0
        for _ in range(trials):
            f = random_trial_field(body, rng, amplitude)
            best = max(best, best_rotation(body, f).ratio)
        worst[int(nh)] = best
    vals = list(worst.values())
    return {"worst": worst, "spread": max(vals) / min(vals) if min(vals) > 0 else np.inf}


def parallel_map(fn, items, workers=1):
    """Ordered map, in worker processes when workers > 1."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))
