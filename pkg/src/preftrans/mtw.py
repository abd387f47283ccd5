"""Numerical checks of the regularity conditions A1, A2, Aw.

A1 (injectivity) is probed by pairwise separation of forward images, A2 by
the mixed-Hessian density factor |det D2_xy c| = |x.y| / |det grad R(p)|,
and Aw by the fourth-order curvature contraction assembled from the
f1..f11 coefficient stack of the spherical Hessian of the cost.

Sign convention: the raw contraction sum is reported; the Aw verdict
requires the sum to be <= 0 at every sampled configuration, so a positive
sample is a violation and is recorded as the counterexample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import CostParams, cost_between, deriv_stack
from .mapping import _solve_raw, forward_batch
from .parallel import parallel_map
from .sphere import EPS_P, TangentVector, normalize, tangent_basis, tangent_frame

SIGN_CONVENTION = "raw contraction sum; Aw requires sum <= 0 everywhere"


@dataclass(frozen=True)
class FStack:
    """Coefficients of the spherical Hessian of the cost in the x, p, q, e basis."""

    f1: float
    f2: float
    f3: float
    f4: float
    f5: float
    f6: float
    f7: float
    f8: float
    f9: float
    f10: float
    f11: float

    def as_array(self):
        return np.array([self.f1, self.f2, self.f3, self.f4, self.f5, self.f6,
                         self.f7, self.f8, self.f9, self.f10, self.f11])


@dataclass(frozen=True)
class CurvatureSample:
    """One curvature evaluation: base point, tangent data and the raw value."""

    x: np.ndarray
    p: TangentVector
    xi: TangentVector
    eta: TangentVector
    value: float | None = None

    def __post_init__(self):
        if abs(float(self.xi.vec @ self.eta.vec)) > 1e-10 * max(
            1.0, float(np.linalg.norm(self.xi.vec) * np.linalg.norm(self.eta.vec))
        ):
            raise ValueError("xi and eta must be orthogonal")

    def to_json_dict(self) -> dict:
        return {
            "x": [float(c) for c in self.x],
            "p": [float(c) for c in self.p.vec],
            "xi": [float(c) for c in self.xi.vec],
            "eta": [float(c) for c in self.eta.vec],
            "value": None if self.value is None else float(self.value),
        }


@dataclass(frozen=True)
class MtwReport:
    """Scan result over the reachable set D_gamma."""

    gamma: float
    grid: tuple
    sign_convention: str
    a2_min_abs: float
    csc_min: float
    csc_max: float
    aw_holds: bool
    counterexample: CurvatureSample | None
    antipode_counterexample: CurvatureSample | None
    a1_min_separation: float
    n_csc_violations: int

    def to_json_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "grid": list(self.grid),
            "sign_convention": self.sign_convention,
            "a2_min_abs": self.a2_min_abs,
            "csc_min": self.csc_min,
            "csc_max": self.csc_max,
            "aw_holds": self.aw_holds,
            "counterexample": None if self.counterexample is None else self.counterexample.to_json_dict(),
            "antipode_counterexample": (None if self.antipode_counterexample is None
                                        else self.antipode_counterexample.to_json_dict()),
            "a1_min_separation": self.a1_min_separation,
            "n_csc_violations": self.n_csc_violations,
        }


def _xi1_at(params: CostParams, x, pvec):
    """Solve the system at a concrete (x, p); p = 0 branch for tiny norms."""
    pn = float(np.linalg.norm(pvec))
    e = params.e_hat
    xe = float(np.asarray(x, float) @ e)
    if pn < EPS_P:
        return 1.0, 0.0, 0.0, xe, pn, xe, 0.0, 0.0
    frame = tangent_frame(x, pvec)
    ep = float(e @ frame.p_hat)
    eq = float(e @ frame.q_hat)
    s, yp, yq, ye, _ = _solve_raw(params, pn, xe, ep, eq)
    return float(s), float(yp), float(yq), float(ye), pn, xe, ep, eq


def f_stack(x, p, params: CostParams) -> FStack:
    """Assemble f1..f11 from the derivative stack and the solved image.

    For ||p|| below the p = 0 threshold the (y.p_hat)/||p|| style ratios are
    replaced by their limits (y.p_hat/||p|| -> -alpha beta^2, y.q_hat/||p|| -> 0).
    """
    x = np.asarray(x, float)
    pvec = p.vec if isinstance(p, TangentVector) else np.asarray(p, float)
    s, yp, yq, ye, pn, xe, _, _ = _xi1_at(params, x, pvec)
    if pn < EPS_P:
        a, al = params.a, params.alpha
        b = 1.0 - a * xe
        D0 = al * b * b
        return FStack(
            f1=-1.0 / D0**2, f2=1.0 / D0, f3=0.0, f4=-1.0, f5=0.0, f6=0.0,
            f7=a * al * b / D0**2, f8=-a / b, f9=0.0, f10=0.0, f11=-1.0 / D0,
        )
    st = deriv_stack(params, (s, xe, ye))
    r2 = yp / pn
    r3 = yq / pn
    return FStack(
        f1=s * s * st.F11,
        f2=s * r2 * st.F11,
        f3=s * r3 * st.F11,
        f4=r2 * r2 * st.F11,
        f5=r2 * r3 * st.F11,
        f6=r3 * r3 * st.F11,
        f7=s * st.F12,
        f8=r2 * st.F12,
        f9=r3 * st.F12,
        f10=st.F22,
        f11=-s * st.F1 - xe * st.F2,
    )


def _r23(params: CostParams, x, pvec):
    """(y.p_hat/||p||, y.q_hat/||p||) at a concrete tangent vector."""
    s, yp, yq, _, pn, xe, _, _ = _xi1_at(params, x, pvec)
    if pn < EPS_P:
        b = 1.0 - params.a * xe
        return -params.alpha * b * b, 0.0
    return yp / pn, yq / pn


def mixed_hessian_analytic(x, p, params: CostParams, h: float = 1e-5) -> float:
    """|det D2_xy c| via |x.y| / |det grad R(p)|.

    grad R(p) is the 2x2 tangent-coordinate Jacobian of the map
    p -> (y.p_hat/||p||) p + (y.q_hat/||p||) q, assembled from central
    differences of the solved components. Valid for ||p|| up to the domain
    bounds; below the p = 0 threshold the limit values are used.
    """
    x = np.asarray(x, float)
    pvec = p.vec if isinstance(p, TangentVector) else np.asarray(p, float)
    t1, t2 = tangent_basis(x)
    p2d = np.array([float(pvec @ t1), float(pvec @ t2)])

    def r23_of(c2d):
        return _r23(params, x, c2d[0] * t1 + c2d[1] * t2)

    r2, r3 = r23_of(p2d)
    dr2 = np.empty(2)
    dr3 = np.empty(2)
    for i, step in enumerate(np.eye(2)):
        rp2, rp3 = r23_of(p2d + h * step)
        rm2, rm3 = r23_of(p2d - h * step)
        dr2[i] = (rp2 - rm2) / (2.0 * h)
        dr3[i] = (rp3 - rm3) / (2.0 * h)
    p1c, p2c = p2d
    J = np.array([
        [r2 + p1c * dr2[0] - p2c * dr3[0], p1c * dr2[1] - r3 - p2c * dr3[1]],
        [p2c * dr2[0] + r3 + p1c * dr3[0], r2 + p2c * dr2[1] + p1c * dr3[1]],
    ])
    det_jr = float(np.linalg.det(J))
    s = _xi1_at(params, x, pvec)[0]
    return abs(s) / abs(det_jr)


def mixed_hessian_fd(x, y, params: CostParams, h: float = 1e-4) -> float:
    """|det| of cross second differences of the cost in tangent charts.

    Independent oracle for the analytic route: charts are the normalize
    retraction along orthonormal tangent bases at x and y.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    u1, u2 = tangent_basis(x)
    v1, v2 = tangent_basis(y)
    xs = [normalize(x + sx * h * u) for u in (u1, u2) for sx in (+1.0, -1.0)]
    ys = [normalize(y + sy * h * v) for v in (v1, v2) for sy in (+1.0, -1.0)]
    X = np.repeat(np.stack(xs), 4, axis=0)
    Y = np.tile(np.stack(ys), (4, 1))
    c = cost_between(params, X, Y).reshape(4, 4)
    M = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            blk = c[2 * i:2 * i + 2, 2 * j:2 * j + 2]
            M[i, j] = (blk[0, 0] - blk[0, 1] - blk[1, 0] + blk[1, 1]) / (4.0 * h * h)
    return abs(float(np.linalg.det(M)))


def _f_derivs_along(params: CostParams, x, pvec, xivec, h: float):
    """Fourth-order directional first/second derivatives of the f-stack.

    Each f-stack evaluation solves the map, so plain tight steps lose too
    many digits; the wide 5-point stencil keeps truncation at O(h^4).
    """
    f0 = f_stack(x, pvec, params).as_array()
    fp = f_stack(x, pvec + h * xivec, params).as_array()
    fm = f_stack(x, pvec - h * xivec, params).as_array()
    fp2 = f_stack(x, pvec + 2.0 * h * xivec, params).as_array()
    fm2 = f_stack(x, pvec - 2.0 * h * xivec, params).as_array()
    # grouped symmetrically so a sign flip of xi reuses identical arithmetic
    d1 = (8.0 * (fp - fm) - (fp2 - fm2)) / (12.0 * h)
    d2 = (16.0 * (fp + fm) - (fp2 + fm2) - 30.0 * f0) / (12.0 * h * h)
    return f0, d1, d2


def csc_value(x, pvec, xivec, etavec, params: CostParams, h: float = 1e-4) -> float:
    """Raw curvature contraction at (x, p) against orthogonal xi, eta."""
    x = np.asarray(x, float)
    pvec = np.asarray(pvec, float)
    xivec = np.asarray(xivec, float)
    etavec = np.asarray(etavec, float)
    q = np.cross(x, pvec)
    e = params.e_hat
    f0, d1, d2 = _f_derivs_along(params, x, pvec, xivec, h)
    # stack order: f1..f11 -> indices 0..10
    p_eta = float(pvec @ etavec)
    q_eta = float(q @ etavec)
    e_eta = float(e @ etavec)
    cross_term = float(etavec @ np.cross(x, xivec))
    xi2 = float(xivec @ xivec)
    eta2 = float(etavec @ etavec)
    return (
        d2[3] * p_eta**2
        + 2.0 * d2[4] * p_eta * q_eta
        + 4.0 * d1[4] * p_eta * cross_term
        + d2[5] * q_eta**2
        + 4.0 * d1[5] * q_eta * cross_term
        + 2.0 * f0[5] * xi2 * eta2
        + 2.0 * d2[7] * e_eta * p_eta
        + 2.0 * d2[8] * e_eta * q_eta
        + 4.0 * d1[8] * e_eta * cross_term
        + d2[9] * e_eta**2
        + d2[10] * eta2
    )


def csc_evaluate(sample: CurvatureSample, params: CostParams, h: float = 1e-4) -> float:
    """Curvature contraction for a packaged sample (value field is ignored)."""
    return csc_value(sample.x, sample.p.vec, sample.xi.vec, sample.eta.vec, params, h)


def csc_reduced_two_term(x, pvec, xivec, etavec, params: CostParams, h: float = 1e-4) -> float:
    """The two-term contraction valid at x = -e_hat (e.p = e.q = y.q = 0)."""
    _, _, d2 = _f_derivs_along(params, np.asarray(x, float), np.asarray(pvec, float),
                               np.asarray(xivec, float), h)
    p_eta = float(np.asarray(pvec, float) @ np.asarray(etavec, float))
    eta2 = float(np.asarray(etavec, float) @ np.asarray(etavec, float))
    return d2[3] * p_eta**2 + d2[10] * eta2


def f11_profile(a: float, n: int, p_max: float | None = None):
    """Closed-form f11 along x.e = -1 as a function of ||p||.

    Returns (p_norms, values) with n uniform samples on [0, p_max]. The
    default p_max stops where x.y would leave the admissible region (and
    stays inside the coefficient bound).
    """
    if not 0.0 < a < 1.0:
        raise ValueError("need 0 < a < 1")
    if n < 2:
        raise ValueError("need n >= 2")
    if p_max is None:
        xi2v = 1.0 + 2.0 * (a - 1.0) / (a + 1.0)
        k = (1.0 + a) / (1.0 - a)
        p_xi = np.sqrt((1.0 - xi2v) / (1.0 + xi2v)) / k
        p_max = min(p_xi, 0.999 * (1.0 - a) / (2.0 * a))
    pn = np.linspace(0.0, p_max, n)
    rho2 = ((1.0 + a) / (1.0 - a) * pn) ** 2
    s = (1.0 - rho2) / (1.0 + rho2)
    f11 = -((s + a) / (1.0 + a)) / ((2.0 / (1.0 - a)) * (1.0 + a * s) - 1.0 + s)
    return pn, f11


@dataclass(frozen=True)
class GridSpec:
    """Resolution of the mtw_scan grid."""

    n_x: int = 16
    n_dir: int = 16
    n_mag: int = 16
    n_pairs: int = 4


def _scan_one_x(args):
    params, gamma, spec, theta = args
    e = params.e_hat
    e_perp = tangent_basis(e)[0]
    x = np.cos(theta) * e + np.sin(theta) * e_perp
    x = x / np.linalg.norm(x)
    t1, t2 = tangent_basis(x)
    psis = np.linspace(0.0, 2.0 * np.pi, spec.n_dir, endpoint=False)
    mags = np.linspace(gamma / spec.n_mag, gamma, spec.n_mag)
    dirs = np.cos(psis)[:, None] * t1 + np.sin(psis)[:, None] * t2
    P = (mags[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    X = np.broadcast_to(x, P.shape)
    images = forward_batch(params, X, P)
    # A1: pairwise separation of images of distinct tangent vectors.
    d2 = np.sum((images[:, None, :] - images[None, :, :]) ** 2, axis=-1)
    iu = np.triu_indices(len(images), k=1)
    a1_min = float(np.sqrt(np.min(d2[iu]))) if len(iu[0]) else np.inf
    # A2 and Aw over the same grid.
    a2_min = np.inf
    csc_min = np.inf
    csc_max = -np.inf
    worst = None
    n_viol = 0
    pair_angles = np.pi * (np.arange(spec.n_pairs) + 0.5) / spec.n_pairs
    for pvec in P:
        a2_min = min(a2_min, mixed_hessian_analytic(x, pvec, params))
        for ang in pair_angles:
            xiv = np.cos(ang) * t1 + np.sin(ang) * t2
            etav = -np.sin(ang) * t1 + np.cos(ang) * t2
            val = csc_value(x, pvec, xiv, etav, params)
            csc_min = min(csc_min, val)
            if val > 0.0:
                n_viol += 1
            if val > csc_max:
                csc_max = val
                worst = (x, pvec, xiv, etav, val)
    return a1_min, a2_min, csc_min, csc_max, worst, n_viol


def _to_sample(worst) -> CurvatureSample | None:
    if worst is None or worst[4] <= 0.0:
        return None
    x, pvec, xiv, etav, val = worst
    return CurvatureSample(
        x=x,
        p=TangentVector(base=x, vec=pvec),
        xi=TangentVector(base=x, vec=xiv),
        eta=TangentVector(base=x, vec=etav),
        value=val,
    )


def mtw_scan(params: CostParams, gamma: float, grid_spec: GridSpec | None = None) -> MtwReport:
    """Grid scan of A1/A2/Aw over x, p_hat, ||p|| <= gamma and (xi, eta) pairs.

    Besides the globally worst violation, the worst violation with x within
    ~8 degrees of -e_hat is recorded separately (that neighborhood carries
    the closed-form obstruction)."""
    spec = grid_spec or GridSpec()
    thetas = np.linspace(0.0, np.pi, spec.n_x)
    results = parallel_map(_scan_one_x, [(params, gamma, spec, th) for th in thetas])
    a1_min = min(r[0] for r in results)
    a2_min = min(r[1] for r in results)
    csc_min = min(r[2] for r in results)
    csc_max = max(r[3] for r in results)
    n_viol = sum(r[5] for r in results)
    worst = max((r[4] for r in results if r[4] is not None),
                key=lambda w: w[4], default=None)
    near = [r[4] for r in results
            if r[4] is not None and float(r[4][0] @ params.e_hat) < -0.99]
    worst_near = max(near, key=lambda w: w[4], default=None)
    return MtwReport(
        gamma=gamma,
        grid=(spec.n_x, spec.n_dir, spec.n_mag, spec.n_pairs),
        sign_convention=SIGN_CONVENTION,
        a2_min_abs=float(a2_min),
        csc_min=float(csc_min),
        csc_max=float(csc_max),
        aw_holds=bool(csc_max <= 0.0),
        counterexample=_to_sample(worst),
        antipode_counterexample=_to_sample(worst_near),
        a1_min_separation=float(a1_min),
        n_csc_violations=int(n_viol),
    )
