"""Quadratic cell problems on annuli and the singular edge-dislocation strain.

An admissible strain on the annulus B_1 minus B_delta is a curl-free field
whose loop integral around the hole is -v. Any two differ by an exact
gradient, so we write

    beta = beta_p + du,    beta_p = -(1/2pi) v (x) dtheta,

with u piecewise linear on a log-graded polar mesh. The cell value

    I_delta(v) = min (1/log(1/delta)) int W_quad(beta)

is then one sparse symmetric solve.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

from .density import InvalidInput, QuadraticForm, EnergyDensity
from .geometry import ModelManifold, body_radius, model_body
from .mesh import QUAD3, annulus_polar, make_body, polar_jacobian, polar_to_cartesian, quadratic_system, strain_operator
from .solve import energy, parallel_map

TWO_PI = 2.0 * np.pi
MIN_CELLS_PER_DECADE = 8
DEFAULT_LADDER = (1e-2, 3e-3, 1e-3, 3e-4, 1e-4)


class SolverFailure(RuntimeError):
    pass


class InconsistentForm(RuntimeError):
    pass


class InvalidDomain(ValueError):
    pass


def _as_form(density):
    if isinstance(density, QuadraticForm):
        return density
    if isinstance(density, EnergyDensity):
        return QuadraticForm(density.mu, density.lam)
    raise InvalidInput("expected an isotropic quadratic form")


def _dtheta(x):
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    return np.stack([-x[..., 1] / r2, x[..., 0] / r2], axis=-1)


def multivalued_part(v, x):
    """-(1/2pi) v (x) dtheta at points x, shape (..., 2, 2)."""
    return -np.asarray(v, float)[:, None] * _dtheta(x)[..., None, :] / TWO_PI


@dataclass(frozen=True)
class SingularStrain:
    """Closed-form isotropic edge-dislocation strain.

    beta_v = -(1/2pi) v (x) dtheta + grad w, where
    w = a log r + c cos(2 theta) + d sin(2 theta) and, with k = 1/(8 pi (1 - nu)),
    a = 2 k (1 - 2 nu) (-v2, v1), c = k (v2, v1), d = k (-v1, v2).
    The coefficients come from balancing the isotropic stress and cancelling
    the net force through circles; `fit_singular_coefficients` recovers them
    from the discrete cell solution.
    """

    burgers: tuple
    nu: float
    mu: float = 1.0
    fitted: tuple = None  # optional (a, c, d) replacing the closed form

    def __post_init__(self):
        if not -1.0 < self.nu < 0.5:
            raise InvalidInput("Poisson ratio must lie in (-1, 1/2)")

    @property
    def v(self):
        return np.asarray(self.burgers, dtype=float)

    def coefficients(self):
        if self.fitted is not None:
            return tuple(np.asarray(c, float) for c in self.fitted)
        v1, v2 = self.v
        k = 1.0 / (8.0 * np.pi * (1.0 - self.nu))
        a = 2.0 * k * (1.0 - 2.0 * self.nu) * np.array([-v2, v1])
        c = k * np.array([v2, v1])
        d = k * np.array([-v1, v2])
        return a, c, d

    def potential(self, x):
        """The single-valued part w at points x, shape (..., 2)."""
        x = np.asarray(x, dtype=float)
        a, c, d = self.coefficients()
        r2 = np.sum(x * x, axis=-1)
        c2 = (x[..., 0] ** 2 - x[..., 1] ** 2) / r2
        s2 = 2 * x[..., 0] * x[..., 1] / r2
        return (0.5 * np.log(r2)[..., None] * a + c2[..., None] * c + s2[..., None] * d)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        a, c, d = self.coefficients()
        X, Y = x[..., 0], x[..., 1]
        r2 = X * X + Y * Y
        r4 = r2 * r2
        glog = np.stack([X / r2, Y / r2], -1)
        # grad of cos 2t = (x^2 - y^2)/r^2 and sin 2t = 2xy/r^2
        gc = np.stack([4 * X * Y * Y / r4, -4 * X * X * Y / r4], -1)
        gs = np.stack([2 * Y * (Y * Y - X * X) / r4, 2 * X * (X * X - Y * Y) / r4], -1)
        grad_w = (a[:, None] * glog[..., None, :] + c[:, None] * gc[..., None, :]
                  + d[:, None] * gs[..., None, :])
        return multivalued_part(self.v, x) + grad_w

    def prelog_factor(self, form=None, n=4096):
        """Angular quadrature of W_quad(beta_v) on the unit circle."""
        form = form or self.form()
        t = TWO_PI * np.arange(n) / n
        x = np.stack([np.cos(t), np.sin(t)], -1)
        return float(np.mean(form(self(x))) * TWO_PI)

    def closed_form_factor(self):
        return float(self.mu * (self.v @ self.v) / (4.0 * np.pi * (1.0 - self.nu)))

    def form(self):
        lam = 2.0 * self.mu * self.nu / (1.0 - 2.0 * self.nu)
        return QuadraticForm(self.mu, lam)


def singular_strain(v, density):
    form = _as_form(density)
    return SingularStrain(tuple(float(c) for c in np.asarray(v, float)), form.nu, form.mu)


@dataclass
class CellResult:
    v: np.ndarray
    delta: float
    value_delta: float
    value_zero_extrapolated: float = None
    mesh_resolution: int = 0
    residuals: dict = field(default_factory=dict)
    corrector: np.ndarray = None
    mesh: object = None

    def to_dict(self):
        return {"v": [float(c) for c in self.v], "delta": self.delta, "value_delta": self.value_delta,
                "value_zero_extrapolated": self.value_zero_extrapolated,
                "mesh_resolution": self.mesh_resolution, "residuals": dict(self.residuals)}


def cell_body(delta, resolution=(16, None), scale=1.0, phase=0.0):
    """Polar mesh body of scale*delta <= r <= scale with Q = polar Jacobian."""
    cpd, n_theta = resolution
    if cpd < MIN_CELLS_PER_DECADE:
        raise InvalidInput(f"resolution below {MIN_CELLS_PER_DECADE} cells per decade")
    mesh = annulus_polar(scale * delta, scale, cpd, n_theta)
    if phase:
        mesh.points[:, 1] += phase
        mesh.local[..., 1] += phase
    chart = polar_to_cartesian(mesh.points)
    return make_body(mesh, polar_jacobian, chart, QUAD3)


def _pin(body):
    """Three DOFs removing infinitesimal rigid motions: vertex a fully, y of a radial partner."""
    r, p = body.mesh.points[:, 0], body.mesh.points[:, 1]
    a = int(np.lexsort((r, np.abs(np.angle(np.exp(1j * p)))))[0])
    same = np.abs(np.angle(np.exp(1j * (p - p[a])))) < 1e-12
    b = int(np.flatnonzero(same)[np.argmax(r[same])])
    # direction normal to the chord a -> b
    ca, cb = body.chart[a], body.chart[b]
    d = cb - ca
    comp = 1 if abs(d[0]) >= abs(d[1]) else 0
    return [2 * a, 2 * a + 1, 2 * b + comp]


def solve_cell(v, delta, density, resolution=(32, None), scale=1.0, phase=0.0, keep_field=False):
    """Minimise the normalised quadratic energy over admissible strains."""
    if not 0.0 < delta < 1.0:
        raise InvalidInput("delta must lie in (0, 1)")
    form = _as_form(density)
    v = np.asarray(v, dtype=float)
    body = cell_body(delta, resolution, scale, phase)
    qp = polar_to_cartesian(body.mesh.quad_points(QUAD3))
    bp = multivalued_part(v, qp)
    K, b, c = quadratic_system(body, form, bp)
    n = K.shape[0]
    pinned = _pin(body)
    free = np.setdiff1d(np.arange(n), pinned)
    u = np.zeros(n)
    if np.any(v != 0):
        Kf = K[free][:, free].tocsc()
        try:
            lu = splu(Kf)
        except RuntimeError as exc:
            raise SolverFailure(str(exc)) from exc
        u[free] = lu.solve(-b[free])
        if not np.all(np.isfinite(u)):
            raise SolverFailure("non-finite corrector")
    S = strain_operator(body)
    beta = bp + (S @ u).reshape(bp.shape)
    E = float(np.sum(body.wvol * form(beta)))
    L = np.log(1.0 / delta)
    res_vec = K @ u + b
    scale_b = max(np.linalg.norm(b[free]), 1e-300)
    residuals = {
        "galerkin": float(np.linalg.norm(res_vec[free]) / scale_b) if np.any(v != 0) else 0.0,
        "energy_identity": float(abs(E - (c + b @ u)) / max(E, 1e-300)) if np.any(v != 0) else 0.0,
    }
    out = CellResult(v, float(delta), E / L, None, int(body.mesh.n_tris), residuals)
    if keep_field:
        out.corrector = u.reshape(-1, 2)
        out.mesh = body.mesh
        out.body = body
    return out


def _solve_cell_args(args):
    v, delta, density, resolution = args
    return solve_cell(v, delta, density, resolution)


def solve_ladder(v, density, deltas=DEFAULT_LADDER, resolution=(32, None), workers=1):
    items = [(tuple(np.asarray(v, float)), d, density, resolution) for d in deltas]
    return parallel_map(_solve_cell_args, items, workers)


def extrapolate_izero(results):
    """Least-squares fit I_delta = I_0 + c / log(1/delta)."""
    if len(results) < 3 or len({r.delta for r in results}) < 3:
        raise InvalidInput("need at least three distinct ladder points")
    d = np.array([r.delta for r in results])
    vals = np.array([r.value_delta for r in results])
    x = 1.0 / np.log(1.0 / d)
    A = np.stack([np.ones_like(x), x], 1)
    (i0, c), *_ = np.linalg.lstsq(A, vals, rcond=None)
    resid = vals - A @ np.array([i0, c])
    order = np.argsort(-d)
    steps = np.diff(vals[order])
    monotone = bool(np.all(steps >= 0) or np.all(steps <= 0))
    return float(i0), {"slope": float(c), "residual": float(np.max(np.abs(resid))),
                       "monotone": monotone, "deltas": d.tolist(), "values": vals.tolist()}


def fit_izero_form(samples):
    """Symmetric M with izero(v) = v^T M v, from (v, value) pairs."""
    V = np.array([np.asarray(s[0], float) for s in samples])
    y = np.array([float(s[1]) for s in samples])
    if len(V) < 3 or np.linalg.matrix_rank(np.stack([V[:, 0] ** 2, 2 * V[:, 0] * V[:, 1], V[:, 1] ** 2], 1)) < 3:
        raise InvalidInput("samples do not determine a quadratic form")
    A = np.stack([V[:, 0] ** 2, 2 * V[:, 0] * V[:, 1], V[:, 1] ** 2], 1)
    (m11, m12, m22), *_ = np.linalg.lstsq(A, y, rcond=None)
    M = np.array([[m11, m12], [m12, m22]])
    if np.linalg.eigvalsh(M)[0] <= 0:
        raise InconsistentForm("fitted self-energy form is not positive definite")
    return M


def fit_singular_coefficients(v, density, delta=1e-6, radii=(3e-4, 3e-3), resolution=(24, None)):
    """Recover (a, c, d) of the potential w from the discrete cell minimiser.

    The corrector u is sampled at the mesh vertices on two rings and fitted
    by least squares against a log r + c cos 2theta + d sin 2theta plus a
    rigid motion (constant and infinitesimal rotation). Nodal values of P1
    solutions are far more accurate than their gradients.
    """
    res = solve_cell(v, delta, density, resolution, keep_field=True)
    pts = res.mesh.points
    radii_mesh = res.mesh.radii
    rows, rhs = [], []
    for rs in radii:
        ring = radii_mesh[np.argmin(np.abs(np.log(radii_mesh / rs)))]
        sel = np.abs(pts[:, 0] - ring) < 1e-12 * ring
        r, t = pts[sel, 0], pts[sel, 1]
        x, y = r * np.cos(t), r * np.sin(t)
        one = np.ones_like(r)
        for comp in range(2):
            # columns: a_comp, c_comp, d_comp for this component, then two
            # constants and one rotation shared by both components
            block = np.zeros((len(r), 9))
            block[:, 3 * comp] = np.log(r)
            block[:, 3 * comp + 1] = np.cos(2 * t)
            block[:, 3 * comp + 2] = np.sin(2 * t)
            block[:, 6 + comp] = one
            block[:, 8] = -y if comp == 0 else x
            rows.append(block)
            rhs.append(res.corrector[sel, comp])
    coef, *_ = np.linalg.lstsq(np.concatenate(rows), np.concatenate(rhs), rcond=None)
    a = coef[[0, 3]]
    c = coef[[1, 4]]
    d = coef[[2, 5]]
    return a, c, d


def _scaled_manifold(v, epsilon, R):
    return ModelManifold(tuple(epsilon * np.asarray(v, float)), R)


def cell_annulus_body(v, epsilon, delta, R, resolution=(16, None)):
    """Body of the scaled model manifold between radii delta*R and R."""
    if not epsilon * np.linalg.norm(v) <= delta * R:
        raise InvalidDomain("need epsilon*|v| <= delta*R")
    m = _scaled_manifold(v, epsilon, R)
    return model_body(m, delta * R, resolution[0], resolution[1]), m


def nonlinear_cell_energy(v, epsilon, delta, R, density, field, body=None, resolution=(16, None)):
    """(1/(eps^2 log(1/delta))) * nonlinear energy of `field` on the annulus."""
    if body is None:
        body, _ = cell_annulus_body(v, epsilon, delta, R, resolution)
    E = energy(body, field, density).total
    return E / (epsilon ** 2 * np.log(1.0 / delta))


def linearised_field(v, epsilon, body, density):
    """Vertex field with df = Q + eps * beta_v(Z) dZ on a scaled model body.

    Q - dZ = (eps/2pi) v dtheta cancels the multivalued part of beta_v, so
    the field is single valued: f = Z + eps * w(Z).
    """
    z = body.chart
    if not np.any(np.asarray(v) != 0):
        return z.copy()
    return z + epsilon * singular_strain(v, density).potential(z)


def near_core_optimal_field(v, epsilon, s, R, outer_trace, density, body=None, resolution=(16, None)):
    """Near-core linearised field blended to `outer_trace` across one dyadic ring.

    The body covers eps^s <= r <= R on the scaled model manifold unless one is
    given. Rings [R 2^-(k+1), R 2^-k] are tried for every k that stays outside
    the inner radius; the blend f = g + phi(r)(trace - g) uses the linear
    cutoff phi in r, and the ring giving the lowest total energy is kept.
    g is first shifted by the ring average of trace - g.
    """
    if not 0.0 < s < 1.0:
        raise InvalidInput("s must lie in (0, 1)")
    if body is None:
        body, _ = cell_annulus_body(v, epsilon, epsilon ** s / R, R, resolution)
    trace = np.asarray(outer_trace, float)
    g = linearised_field(v, epsilon, body, density)
    r = body_radius(body, body.mesh.points)
    r_in = r.min()
    best = None
    k = 0
    while R * 2.0 ** -(k + 1) >= r_in:
        hi, lo = R * 2.0 ** -k, R * 2.0 ** -(k + 1)
        phi = np.clip((r - lo) / (hi - lo), 0.0, 1.0)
        # w is fixed up to a constant; match the trace on average over the ring
        ring = (r >= lo) & (r <= hi)
        gk = g + np.mean(trace[ring] - g[ring], axis=0)
        f = gk + phi[:, None] * (trace - gk)
        E = energy(body, f, density).total
        if best is None or E < best[0]:
            best = (E, k, f)
        k += 1
    if best is None:
        raise InvalidDomain("no dyadic ring fits between the core and R")
    E, k, f = best
    E_g = energy(body, g, density).total
    dev = _pointwise_deviation(body, f, v, epsilon)
    return f, {"ring": k, "energy": E, "candidate_energy": E_g, "added": E - E_g, "pointwise_bound": dev}


def _pointwise_deviation(body, f, v, epsilon):
    """max over quadrature points of r |df Q^{-1} - I| / (eps |v|)."""
    nv = np.linalg.norm(v)
    if nv == 0:
        return 0.0
    df = body.mesh.differential(f)
    A = np.einsum("tij,tkjl->tkil", df, body.qinv)
    r = body_radius(body, body.mesh.quad_points(QUAD3))
    return float(np.max(r * np.linalg.norm(A - np.eye(2), axis=(-2, -1))) / (epsilon * nv))


def model_field(m, body):
    """The chart Z itself as a vertex field."""
    return body.chart.copy()


__all__ = ["SingularStrain", "singular_strain", "CellResult", "solve_cell", "solve_ladder",
           "extrapolate_izero", "fit_izero_form", "fit_singular_coefficients", "nonlinear_cell_energy",
           "near_core_optimal_field", "linearised_field"]
