"""Reflector-surface recovery from transport potentials and its validation.

Each reflector is a radial graph over directions: the first over outgoing
source directions x, the second over directions y of light arriving at the
target. The radii come from the exponential change of variables

    u~(x) = (L^2 - l^2) / ((L - l (x.e)) ((L^2 - l^2) e^{u(x)} + 1))

applied to potentials in the optics gauge, where u(x) + v(y) equals the
cost including its additive normalization -2 log(L^2 - l^2) on matched
pairs. With the source at the origin, the empirically validated geometry
places the target at 2 l e_hat and makes the total optical path
source -> R1 -> R2 -> target constant and equal to 2 L (see path_length).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .cost import CostParams
from .errors import DegenerateMesh, InterpolationError, InvalidScene
from .sphere import normalize, tangent_basis


@dataclass(frozen=True)
class SceneConfig:
    """Optical layout derived from the cost parameters.

    The source sits at the origin; the target at separation * e_hat. The
    constant-path law fixes separation = 2 l and the total path 2 L for the
    change of variables above (both candidate placements with separation l
    fail the constancy test systematically).
    """

    params: CostParams

    def __post_init__(self):
        if not (0.0 < self.params.l < self.params.L):
            raise InvalidScene(f"need 0 < l < L, got l={self.params.l}, L={self.params.L}")

    @property
    def source(self) -> np.ndarray:
        return np.zeros(3)

    @property
    def separation(self) -> float:
        return 2.0 * self.params.l

    @property
    def target(self) -> np.ndarray:
        return self.separation * self.params.e_hat

    @property
    def path_constant(self) -> float:
        return 2.0 * self.params.L

    @property
    def potential_offset(self) -> float:
        """Per-potential additive constant restoring the cost normalization.

        The constancy law pairs the displayed radius formulas with
        potentials summing to cost + 2 * potential_offset on matched pairs.
        """
        return -float(np.log(self.params.L**2 - self.params.l**2))


@dataclass(frozen=True)
class ReflectorSurface:
    """Radial graph: one positive radius per unit direction."""

    directions: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.directions, float))
        r = np.atleast_1d(np.asarray(self.radii, float))
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "radii", r)
        if d.shape[0] != r.shape[0]:
            raise ValueError("directions and radii length mismatch")
        if np.any(np.abs(np.linalg.norm(d, axis=1) - 1.0) > 1e-10):
            raise ValueError("directions must be unit vectors")
        if not np.all(np.isfinite(r)) or np.any(r <= 0.0):
            raise ValueError("radii must be positive and finite")

    def radius_at(self, direction, tol: float = 1e-9) -> float:
        d2 = np.sum((self.directions - np.asarray(direction, float)) ** 2, axis=1)
        k = int(np.argmin(d2))
        if d2[k] > tol**2:
            raise InterpolationError(f"direction not sampled (nearest at distance {np.sqrt(d2[k]):.3e})")
        return float(self.radii[k])

    def vertices(self) -> np.ndarray:
        return self.directions * self.radii[:, None]


def to_optics_gauge(u, v, params: CostParams):
    """Shift transport potentials (u + v = cost on support) into the gauge
    where u + v includes the cost's additive normalization.

    Each potential shifts by the full per-potential offset; any split of
    the total works (the path law is invariant under u + kappa, v - kappa),
    the even one is canonical.
    """
    off = SceneConfig(params).potential_offset
    return np.asarray(u, float) + off, np.asarray(v, float) + off


def _radii(values, dots_e, L, l):
    M = L * L - l * l
    return M / ((L - l * dots_e) * (M * np.exp(np.asarray(values, float)) + 1.0))


def recover_r1(u_values, directions, scene: SceneConfig) -> ReflectorSurface:
    """First reflector radii from potential values on source directions.

    Radii are strictly decreasing in the potential value pointwise; the
    u -> -inf limit is (L^2 - l^2)/(L - l x.e) and the u -> +inf limit 0.
    """
    directions = np.atleast_2d(np.asarray(directions, float))
    L, l = scene.params.L, scene.params.l
    r = _radii(u_values, directions @ scene.params.e_hat, L, l)
    return ReflectorSurface(directions=directions, radii=r)


def recover_r2(v_values, directions, scene: SceneConfig) -> ReflectorSurface:
    """Second reflector radii from potential values on target directions."""
    directions = np.atleast_2d(np.asarray(directions, float))
    L, l = scene.params.L, scene.params.l
    r = _radii(v_values, directions @ scene.params.e_hat, L, l)
    return ReflectorSurface(directions=directions, radii=r)


def path_length(x, y, r1: ReflectorSurface, r2: ReflectorSurface, scene: SceneConfig) -> float:
    """Total optical path source -> R1(x) -> R2(y) -> target.

    R1 = u~ x from the origin and R2 = target - v~ y (light leaves R2 along
    y and passes through the target). On matched pairs of a solved instance
    this is constant and equals scene.path_constant.
    """
    ut = r1.radius_at(x)
    vt = r2.radius_at(y)
    P1 = ut * np.asarray(x, float)
    P2 = scene.target - vt * np.asarray(y, float)
    return float(ut + np.linalg.norm(P2 - P1) + vt)


def path_lengths(pairs, r1: ReflectorSurface, r2: ReflectorSurface, scene: SceneConfig):
    """path_length for an iterable of (x, y) pairs, as an array."""
    return np.array([path_length(x, y, r1, r2, scene) for x, y in pairs])


def reflection_residual(surface_radius, x, out_point, h: float = 1e-5) -> float:
    """Reflection-law diagnostic at a point of a radial-graph reflector.

    surface_radius is a callable direction -> radius (smooth); the incident
    ray arrives along x from the origin and should leave toward out_point.
    Returns the angle between the reflected direction and the actual
    outgoing direction, using finite-difference surface normals (noisy for
    interpolated graphs; tolerances of order 1e-3 rad are realistic).
    """
    x = np.asarray(x, float)

    def point(d):
        d = normalize(d)
        return surface_radius(d) * d

    t1, t2 = tangent_basis(x)
    g1 = (point(x + h * t1) - point(x - h * t1)) / (2.0 * h)
    g2 = (point(x + h * t2) - point(x - h * t2)) / (2.0 * h)
    n = normalize(np.cross(g1, g2))
    d_in = x
    d_ref = d_in - 2.0 * float(d_in @ n) * n
    d_out = normalize(np.asarray(out_point, float) - point(x))
    cosang = np.clip(abs(float(d_ref @ d_out)), -1.0, 1.0)
    return float(np.arccos(cosang))


def export_mesh(surface: ReflectorSurface, path) -> None:
    """Write the surface as an ASCII OBJ (v/f records), hull-triangulated.

    Three non-collinear samples produce a single triangle; four or more use
    the convex hull of the direction set (watertight for directions on the
    sphere). Raises DegenerateMesh when the samples span no surface.
    """
    d = surface.directions
    if d.shape[0] < 3:
        raise DegenerateMesh("need at least 3 direction samples")
    if d.shape[0] == 3:
        if np.linalg.norm(np.cross(d[1] - d[0], d[2] - d[0])) < 1e-12:
            raise DegenerateMesh("3 collinear direction samples")
        faces = np.array([[0, 1, 2]])
    else:
        try:
            faces = ConvexHull(d).simplices
        except QhullError as exc:
            raise DegenerateMesh(f"degenerate direction set: {exc}") from exc
    verts = surface.vertices()
    buf = io.StringIO()
    for v in verts:
        buf.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
    for f in faces:
        buf.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def load_mesh(path):
    """Read back an ASCII OBJ written by export_mesh: (vertices, faces)."""
    verts = []
    faces = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(c) for c in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(c.split("/")[0]) - 1 for c in parts[1:4]])
    return np.array(verts), np.array(faces, dtype=int)
