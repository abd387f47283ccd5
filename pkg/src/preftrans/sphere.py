"""Unit-sphere geometry: frames, projections, distances, finite differences.

Unit vectors are plain float ndarrays of shape (3,) (or (..., 3) where an
operation is documented as batched); ``normalize`` is the constructor that
guarantees unit norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, FrameUndefined

# Below this tangent-vector norm the direction is numerically meaningless
# and callers must use the p = 0 branch of the map instead.
EPS_P = 1e-9


def normalize(v):
    """Scale v (3-vector or (...,3) batch) to unit length.

    Raises DegenerateInput when the norm is below 1e-14.
    """
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < 1e-14):
        raise DegenerateInput("cannot normalize a (near-)zero vector")
    return v / n


def project_to_tangent(x, v):
    """Component of v orthogonal to the unit vector x. Batched over rows."""
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    dot = np.sum(x * v, axis=-1, keepdims=True)
    return v - dot * x


def geodesic_distance(x, y):
    """Great-circle distance in radians, in [0, pi]. Batched over rows.

    The dot product is clamped to [-1, 1] before arccos; roundoff at x = y
    or x = -y would otherwise push it outside the domain.
    """
    d = np.sum(np.asarray(x, float) * np.asarray(y, float), axis=-1)
    return np.arccos(np.clip(d, -1.0, 1.0))


def angular_gap(x, y):
    """Angle between unit vectors via the chord length. Batched over rows.

    arccos of the dot product cannot resolve angles below ~sqrt(eps); the
    chord form stays accurate down to machine precision for small angles.
    """
    chord = np.linalg.norm(np.asarray(y, float) - np.asarray(x, float), axis=-1)
    return 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))


@dataclass(frozen=True)
class TangentVector:
    """A vector attached to (and orthogonal to) a base point on the sphere."""

    base: np.ndarray
    vec: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, float))
        object.__setattr__(self, "vec", np.asarray(self.vec, float))
        if abs(np.linalg.norm(self.base) - 1.0) > 1e-12:
            raise DegenerateInput("base point of a TangentVector must be a unit vector")
        if abs(float(self.base @ self.vec)) > 1e-10 * max(1.0, float(np.linalg.norm(self.vec))):
            raise DegenerateInput("TangentVector.vec is not orthogonal to its base")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vec))


@dataclass(frozen=True)
class TangentFrame:
    """Orthonormal triple (x, p_hat, q_hat) with q_hat = x x p_hat."""

    x: np.ndarray
    p_hat: np.ndarray
    q_hat: np.ndarray


def tangent_frame(x, p, eps_p: float = EPS_P) -> TangentFrame:
    """Frame spanned by a nonzero tangent vector p at x.

    p may be a TangentVector (its base must equal x) or a raw 3-vector
    orthogonal to x. Raises FrameUndefined when ||p|| < eps_p: below that,
    callers must take the p = 0 branch of the map (y = x).
    """
    x = np.asarray(x, float)
    vec = p.vec if isinstance(p, TangentVector) else np.asarray(p, float)
    if isinstance(p, TangentVector) and np.linalg.norm(p.base - x) > 1e-12:
        raise DegenerateInput("TangentVector base does not match x")
    n = np.linalg.norm(vec)
    if n < eps_p:
        raise FrameUndefined(f"||p|| = {n:.3e} < {eps_p:.0e}; use the p = 0 branch")
    p_hat = vec / n
    q_hat = np.cross(x, p_hat)
    return TangentFrame(x=x, p_hat=p_hat, q_hat=q_hat)


def tangent_basis(x):
    """Deterministic orthonormal basis (t1, t2) of the tangent plane at x."""
    x = np.asarray(x, float)
    k = int(np.argmin(np.abs(x)))
    axis = np.zeros(3)
    axis[k] = 1.0
    t1 = normalize(axis - (axis @ x) * x)
    t2 = np.cross(x, t1)
    return t1, t2


def ambient_hessian_fd(f, x, h=1e-5):
    """Central-difference ambient derivatives of a scalar field near x.

    f must be evaluable at non-unit points in a neighborhood of the sphere
    (it is differentiated as the ambient formula it is given as). Returns
    (D2, D1): the 3x3 second-derivative matrix and the 3-gradient.
    """
    x = np.asarray(x, float)
    eye = np.eye(3)
    f0 = f(x)
    D1 = np.empty(3)
    D2 = np.empty((3, 3))
    for i in range(3):
        fp = f(x + h * eye[i])
        fm = f(x - h * eye[i])
        D1[i] = (fp - fm) / (2.0 * h)
        D2[i, i] = (fp - 2.0 * f0 + fm) / h**2
    for i in range(3):
        for j in range(i + 1, 3):
            fpp = f(x + h * eye[i] + h * eye[j])
            fpm = f(x + h * eye[i] - h * eye[j])
            fmp = f(x - h * eye[i] + h * eye[j])
            fmm = f(x - h * eye[i] - h * eye[j])
            D2[i, j] = D2[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h**2)
    return D2, D1


def sphere_hessian_fd(f, x, h=1e-5, frame=None):
    """Covariant Hessian of f restricted to the sphere, as a 2x2 matrix.

    Computed as the ambient second-derivative matrix corrected by
    -(Df . x) Id and restricted to an orthonormal tangent frame; the result
    does not depend on how f extends off the sphere. h must lie in
    [1e-6, 1e-3]. frame defaults to tangent_basis(x).
    """
    if not (1e-6 <= h <= 1e-3):
        raise ValueError(f"h = {h} outside [1e-6, 1e-3]")
    x = np.asarray(x, float)
    D2, D1 = ambient_hessian_fd(f, x, h)
    H = D2 - (D1 @ x) * np.eye(3)
    t1, t2 = frame if frame is not None else tangent_basis(x)
    T = np.column_stack([t1, t2])
    M = T.T @ H @ T
    return 0.5 * (M + M.T)


def sphere_gradient_fd(f, x, h=1e-5):
    """Tangent-projected central-difference gradient of f at x."""
    x = np.asarray(x, float)
    eye = np.eye(3)
    D1 = np.array([(f(x + h * eye[i]) - f(x - h * eye[i])) / (2.0 * h) for i in range(3)])
    return project_to_tangent(x, D1)


def rotation_from_z(target):
    """Rotation matrix taking (0,0,1) to the unit vector target."""
    z = np.array([0.0, 0.0, 1.0])
    t = normalize(target)
    c = float(z @ t)
    if c > 1.0 - 1e-14:
        return np.eye(3)
    if c < -1.0 + 1e-14:
        return np.diag([1.0, -1.0, -1.0])
    axis = np.cross(z, t)
    s = np.linalg.norm(axis)
    axis = axis / s
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def fibonacci_sphere(n):
    """n roughly-equidistributed points on the sphere, shape (n, 3)."""
    i = np.arange(n, dtype=float)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def random_unit(rng, n=None):
    """Uniform random unit vectors: shape (3,) or (n, 3)."""
    shape = (3,) if n is None else (n, 3)
    v = rng.normal(size=shape)
    return normalize(v)


def cap_points(center, radius, n, rng):
    """n points sampled uniformly (by area) in the closed geodesic cap."""
    z = rng.uniform(np.cos(radius), 1.0, size=n)
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    return pts @ rotation_from_z(center).T


def random_tangent(x, rng, scale=1.0):
    """Random tangent 3-vector at x with norm <= scale (uniform in the disc)."""
    t1, t2 = tangent_basis(x)
    r = scale * np.sqrt(rng.uniform(0.0, 1.0))
    ang = rng.uniform(0.0, 2.0 * np.pi)
    return r * (np.cos(ang) * t1 + np.sin(ang) * t2)


def orthogonal_tangent_pair(x, angle):
    """Unit tangent vectors (xi, eta) at x with eta perpendicular to xi."""
    t1, t2 = tangent_basis(x)
    xi = np.cos(angle) * t1 + np.sin(angle) * t2
    eta = -np.sin(angle) * t1 + np.cos(angle) * t2
    return xi, eta
