"""Elastic energy densities W and their quadratic forms at the identity.

Two densities are shipped:

* ``dist2``: W(A) = dist^2(A, SO(2)).
* ``isotropic``: W(A) = mu * dist^2(A, SO(2)) + (lambda/2) (tr(R^T A) - 2)^2,
  where R is the rotation closest to A. For det A > 0, R^T A is the
  symmetric polar factor, so this is the usual isotropic law written in
  the stretch. Its Hessian at the identity is mu |sym A|^2 + (lambda/2) (tr A)^2.

Everything is vectorised over leading axes: an array of shape (..., 2, 2)
gives an array of shape (...).
"""
from dataclasses import dataclass

import numpy as np

KINDS = ("dist2", "isotropic")


class InvalidInput(ValueError):
    pass


def _entries(A):
    A = np.asarray(A, dtype=float)
    return A[..., 0, 0], A[..., 0, 1], A[..., 1, 0], A[..., 1, 1]


def _rotation_part(A):
    """Closest rotation R and t = max_R tr(R^T A) = s1 + sign(det) s2.

    Closed form of the 2x2 SVD: tr(R_theta^T A) = p cos(theta) + q sin(theta)
    with p = a + d, q = c - b, so the maximum is hypot(p, q).
    """
    a, b, c, d = _entries(A)
    p = a + d
    q = c - b
    t = np.hypot(p, q)
    safe = np.where(t > 0, t, 1.0)
    cs = np.where(t > 0, p / safe, 1.0)
    sn = np.where(t > 0, q / safe, 0.0)
    R = np.empty(np.shape(A), dtype=float)
    R[..., 0, 0] = cs
    R[..., 0, 1] = -sn
    R[..., 1, 0] = sn
    R[..., 1, 1] = cs
    return R, t


def dist_to_rotations(A):
    """Frobenius distance from A to SO(2)."""
    return np.sqrt(dist2_to_rotations(A))


def _split_invariants(A):
    """Anticonformal size r^2 + s^2 and h - 1, where t = 2h.

    |A|^2 + 2 - 2t = 2 (r^2 + s^2) + 2 (h - 1)^2 avoids the cancellation of
    the naive formula near the identity, where strains of 1e-6 would
    otherwise drown in rounding of |A|^2 ~ 2.
    """
    a, b, c, d = _entries(A)
    pc = 0.5 * ((a - 1.0) + (d - 1.0))
    q = 0.5 * (c - b)
    r = 0.5 * (a - d)
    s = 0.5 * (b + c)
    h = np.hypot(1.0 + pc, q)
    return r * r + s * s, (pc * (2.0 + pc) + q * q) / (h + 1.0)


def dist2_to_rotations(A):
    A = np.asarray(A, dtype=float)
    anti, hm1 = _split_invariants(A)
    return 2.0 * anti + 2.0 * hm1 * hm1


def closest_rotation(A):
    return _rotation_part(A)[0]


@dataclass(frozen=True)
class EnergyDensity:
    kind: str = "isotropic"
    lame_mu: float = 1.0
    lame_lambda: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown density kind {self.kind!r}")
        if not self.lame_mu > 0:
            raise InvalidInput("lame_mu must be positive")
        if not self.lame_lambda > -self.lame_mu:
            raise InvalidInput("lame_lambda must exceed -lame_mu")
        if self.kind == "isotropic" and abs(self.poisson_ratio - 0.5) < 1e-12:
            raise InvalidInput("incompressible limit nu = 1/2 is not supported")

    @property
    def mu(self):
        return 1.0 if self.kind == "dist2" else self.lame_mu

    @property
    def lam(self):
        return 0.0 if self.kind == "dist2" else self.lame_lambda

    @property
    def poisson_ratio(self):
        lam = 0.0 if self.kind == "dist2" else self.lame_lambda
        mu = 1.0 if self.kind == "dist2" else self.lame_mu
        return lam / (2.0 * (lam + mu))

    def bounds(self):
        """Constants (c1, c2) with c1 dist^2 <= W <= c2 dist^2."""
        if self.kind == "dist2":
            return 1.0, 1.0
        # (t - 2)^2 = (tr(P - I))^2 <= 2 |P - I|^2
        return self.mu + min(self.lam, 0.0), self.mu + max(self.lam, 0.0)

    def to_dict(self):
        return {"kind": self.kind, "lame_mu": self.lame_mu, "lame_lambda": self.lame_lambda}


def _check_finite(A):
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] != (2, 2):
        raise InvalidInput(f"expected (..., 2, 2) matrices, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInput("non-finite matrix entries")
    return A


def eval_density(w, A):
    A = _check_finite(A)
    return _density(w, A)


def _density(w, A):
    anti, hm1 = _split_invariants(A)
    d2 = 2.0 * anti + 2.0 * hm1 * hm1
    if w.kind == "dist2":
        return d2
    return w.mu * d2 + 2.0 * w.lam * hm1 * hm1


def density_and_stress(w, A):
    """W(A) and its derivative dW/dA (first Piola stress), no input checks."""
    A = np.asarray(A, dtype=float)
    R, _ = _rotation_part(A)
    anti, hm1 = _split_invariants(A)
    d2 = 2.0 * anti + 2.0 * hm1 * hm1
    if w.kind == "dist2":
        return d2, 2.0 * (A - R)
    W = w.mu * d2 + 2.0 * w.lam * hm1 * hm1
    P = 2.0 * w.mu * (A - R) + (2.0 * w.lam * hm1)[..., None, None] * R
    return W, P


@dataclass(frozen=True)
class QuadraticForm:
    """Isotropic quadratic form mu |sym A|^2 + (lambda/2) (tr A)^2."""

    mu: float
    lam: float

    @property
    def nu(self):
        return self.lam / (2.0 * (self.lam + self.mu))

    def matrix(self):
        """4x4 matrix C with form(A) = vec(A)^T C vec(A), vec row-major."""
        C = np.zeros((4, 4))
        # |sym A|^2 = a^2 + d^2 + (b + c)^2 / 2
        C[0, 0] = C[3, 3] = self.mu
        C[1, 1] = C[2, 2] = 0.5 * self.mu
        C[1, 2] = C[2, 1] = 0.5 * self.mu
        C[0, 0] += 0.5 * self.lam
        C[3, 3] += 0.5 * self.lam
        C[0, 3] = C[3, 0] = 0.5 * self.lam
        return C

    def tensor(self):
        return self.matrix().reshape(2, 2, 2, 2)

    def __call__(self, A):
        A = np.asarray(A, dtype=float)
        S = 0.5 * (A + np.swapaxes(A, -1, -2))
        tr = A[..., 0, 0] + A[..., 1, 1]
        return self.mu * np.sum(S * S, axis=(-2, -1)) + 0.5 * self.lam * tr * tr

    def stress(self, A):
        """Derivative of the form: 2 mu sym A + lambda tr(A) I."""
        A = np.asarray(A, dtype=float)
        S = A + np.swapaxes(A, -1, -2)
        tr = A[..., 0, 0] + A[..., 1, 1]
        out = self.mu * S
        out[..., 0, 0] += self.lam * tr
        out[..., 1, 1] += self.lam * tr
        return out

    def coercivity(self):
        """Largest c with form(A) >= c |A + A^T|^2."""
        # eigenvalues on symmetric matrices: deviatoric mu, trace mode mu + lambda
        return min(self.mu, self.mu + self.lam) / 4.0


def hessian_at_identity(w):
    return QuadraticForm(mu=w.mu, lam=w.lam)


def finite_difference_form(w, A, h=1e-4, base=None):
    """Half the second directional derivative of W at `base` (default I) along A."""
    base = np.eye(2) if base is None else np.asarray(base, dtype=float)
    A = np.asarray(A, dtype=float)
    wp = _density(w, base + h * A)
    wm = _density(w, base - h * A)
    w0 = _density(w, base)
    return 0.5 * (wp - 2.0 * w0 + wm) / h ** 2
