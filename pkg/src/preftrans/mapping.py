"""Forward map (x, p) -> y, its inverse, and the domain-bound machinery.

The transport relation p = -grad_x c, the unit-norm constraint on y and the
frame identity for y.e_hat form a 4-equation system H(xi1, xi2) = 0 in

    xi1 = (x.y, y.p_hat, y.q_hat, y.e_hat)
    xi2 = (||p||, x.e_hat, e_hat.p_hat, e_hat.q_hat).

The system collapses to affine expressions y.p_hat = alpha1 + beta1 s and
y.q_hat = alpha2 + beta2 s plus a quadratic in s = x.y solved with the
positive root. A damped Newton iteration on H serves as the independent
oracle for the explicit algebra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cost as costmod
from .cost import CostParams, deriv_stack, in_omega, xi_star2
from .errors import (
    BeyondP1,
    GammaOutOfRange,
    NegativeDiscriminant,
    NoConvergence,
    OutsideOmega,
    SingularJacobian,
    YPHatZero,
)
from .sphere import EPS_P, TangentVector, geodesic_distance, project_to_tangent, tangent_frame

# Denominator floor for the affine-coefficient fraction.
DENOM_FLOOR = 1e-10
# Safety shrink applied to every computed p-bound.
BOUND_SHRINK = 1e-6


@dataclass(frozen=True)
class Xi1:
    """Solved-for quadruple (s, y.p_hat, y.q_hat, y.e_hat).

    For a solved state s^2 + yp^2 + yq^2 = 1 within 1e-10; intermediate
    Newton iterates may violate it, so it is not enforced here.
    """

    s: float
    yp: float
    yq: float
    ye: float

    def as_array(self):
        return np.array([self.s, self.yp, self.yq, self.ye])

    def constraint_residual(self) -> float:
        return abs(self.s**2 + self.yp**2 + self.yq**2 - 1.0)


@dataclass(frozen=True)
class Xi2:
    """Given quadruple (||p||, x.e_hat, e_hat.p_hat, e_hat.q_hat).

    Geometric configurations satisfy xe^2 + ep^2 + eq^2 = 1; scan points
    from the hypothesis cube may not, so only ranges are checked.
    """

    pn: float
    xe: float
    ep: float
    eq: float

    def __post_init__(self):
        if self.pn < 0:
            raise ValueError("||p|| must be nonnegative")

    def as_array(self):
        return np.array([self.pn, self.xe, self.ep, self.eq])


@dataclass(frozen=True)
class AuxCoeffs:
    """Affine coefficients of the explicit solve at one xi2 point."""

    alpha: float
    beta: float
    gamma1: float
    gamma2: float
    alpha1: float
    beta1: float
    alpha2: float
    beta2: float
    denom: float


def p1_local(params: CostParams, xe):
    """Coefficient-blowup bound (1 - a^2) / (2 a (1 - a xe)); inf at a = 0."""
    a = params.a
    if a <= 0.0:
        return np.full_like(np.asarray(xe, float), np.inf)
    return (1.0 - a * a) / (2.0 * a * (1.0 - a * np.asarray(xe, float)))


def _aux_arrays(params: CostParams, pn, xe, ep, eq):
    """Vectorized affine coefficients; no validation, returns denom too."""
    a = params.a
    al = params.alpha
    pn = np.asarray(pn, float)
    xe = np.asarray(xe, float)
    ep = np.asarray(ep, float)
    eq = np.asarray(eq, float)
    b = 1.0 - a * xe
    g1 = 1.0 + a * a * al * eq**2
    g2 = a * ep / b
    denom = 1.0 - pn * a * al * b * ep
    a1 = (pn * (g1 - al * b) + g2) / denom
    b1 = (pn * (a * al * b * xe - g1) - g2) / denom
    a2 = a * eq / b
    b2 = -a * eq / b
    return a1, b1, a2, b2, denom, b, g1, g2


def aux_coeffs(params: CostParams, xi2: Xi2) -> AuxCoeffs:
    """Validated coefficients for one configuration.

    Raises BeyondP1 when ||p|| reaches the blowup bound or the shared
    denominator drops below 1e-10.
    """
    lim = float(p1_local(params, xi2.xe))
    if xi2.pn >= lim:
        raise BeyondP1(f"||p|| = {xi2.pn:.6g} >= p1(x.e) = {lim:.6g}")
    a1, b1, a2, b2, denom, b, g1, g2 = _aux_arrays(params, xi2.pn, xi2.xe, xi2.ep, xi2.eq)
    if denom < DENOM_FLOOR:
        raise BeyondP1(f"affine denominator {denom:.3e} below {DENOM_FLOOR:.0e}")
    return AuxCoeffs(
        alpha=params.alpha, beta=float(b), gamma1=float(g1), gamma2=float(g2),
        alpha1=float(a1), beta1=float(b1), alpha2=float(a2), beta2=float(b2),
        denom=float(denom),
    )


def discriminant(params: CostParams, pn, xe, ep, eq):
    """Discriminant of the quadratic in s = x.y (vectorized, no raising)."""
    a1, b1, a2, b2, _, _, _, _ = _aux_arrays(params, pn, xe, ep, eq)
    Bh = a1 * b1 + a2 * b2
    A = 1.0 + b1**2 + b2**2
    C = a1**2 + a2**2 - 1.0
    return Bh**2 - A * C


def _solve_raw(params: CostParams, pn, xe, ep, eq):
    """Vectorized explicit solve; NaN where the discriminant is negative."""
    a1, b1, a2, b2, _, _, _, _ = _aux_arrays(params, pn, xe, ep, eq)
    Bh = a1 * b1 + a2 * b2
    A = 1.0 + b1**2 + b2**2
    C = a1**2 + a2**2 - 1.0
    disc = Bh**2 - A * C
    with np.errstate(invalid="ignore"):
        root = np.sqrt(np.where(disc >= 0.0, disc, np.nan))
    s = (-Bh + root) / A
    yp = a1 + b1 * s
    yq = a2 + b2 * s
    ye = s * xe + yp * ep + yq * eq
    return s, yp, yq, ye, disc


def solve_xi1(params: CostParams, xi2: Xi2) -> Xi1:
    """Explicit solve at one configuration, with the full error contract."""
    if xi2.pn < EPS_P:
        return Xi1(s=1.0, yp=0.0, yq=0.0, ye=xi2.xe)
    aux_coeffs(params, xi2)  # raises BeyondP1 on blowup
    s, yp, yq, ye, disc = _solve_raw(params, xi2.pn, xi2.xe, xi2.ep, xi2.eq)
    if not np.isfinite(s):
        raise NegativeDiscriminant(f"discriminant = {float(disc):.6g} at ||p|| = {xi2.pn:.6g}")
    return Xi1(s=float(s), yp=float(yp), yq=float(yq), ye=float(ye))


def residual_H(xi1: Xi1, xi2: Xi2, params: CostParams):
    """The four system equations evaluated at (xi1, xi2); zero at a solution."""
    args = (xi1.s, xi2.xe, xi1.ye)
    if not bool(in_omega(params, args)):
        raise OutsideOmega(f"(s, xe, ye) = {args} outside the cost region")
    st = deriv_stack(params, args)
    return np.array([
        xi2.pn + st.F1 * xi1.yp + st.F2 * xi2.ep,
        st.F1 * xi1.yq + st.F2 * xi2.eq,
        xi1.s**2 + xi1.yp**2 + xi1.yq**2 - 1.0,
        xi1.s * xi2.xe + xi1.yp * xi2.ep + xi1.yq * xi2.eq - xi1.ye,
    ])


def jacobian_xi1(xi1: Xi1, xi2: Xi2, params: CostParams):
    """4x4 Jacobian of the system in the solved-for variables xi1."""
    st = deriv_stack(params, (xi1.s, xi2.xe, xi1.ye))
    return np.array([
        [st.F11 * xi1.yp + st.F12 * xi2.ep, st.F1, 0.0, st.F13 * xi1.yp + st.F23 * xi2.ep],
        [st.F11 * xi1.yq + st.F12 * xi2.eq, 0.0, st.F1, st.F13 * xi1.yq + st.F23 * xi2.eq],
        [2.0 * xi1.s, 2.0 * xi1.yp, 2.0 * xi1.yq, 0.0],
        [xi2.xe, xi2.ep, xi2.eq, -1.0],
    ])


def _geometry_xi2(params: CostParams, x, p_vec):
    frame = tangent_frame(x, p_vec)
    e = params.e_hat
    return frame, Xi2(
        pn=float(np.linalg.norm(p_vec)),
        xe=float(x @ e),
        ep=float(e @ frame.p_hat),
        eq=float(e @ frame.q_hat),
    )


def _p_vec(x, p):
    if isinstance(p, TangentVector):
        if np.linalg.norm(p.base - np.asarray(x, float)) > 1e-12:
            raise ValueError("TangentVector base does not match x")
        return p.vec
    return np.asarray(p, float)


def _assemble_y(x, frame, xi1: Xi1):
    y = xi1.s * np.asarray(x, float) + xi1.yp * frame.p_hat + xi1.yq * frame.q_hat
    return y / np.linalg.norm(y)


def forward_explicit(x, p, params: CostParams):
    """Map a tangent vector p at x to the target direction y.

    Returns x itself for ||p|| below the p = 0 threshold (the limit point of
    the map). Raises BeyondP1 / NegativeDiscriminant past the domain bounds.
    """
    x = np.asarray(x, float)
    vec = _p_vec(x, p)
    if np.linalg.norm(vec) < EPS_P:
        return x.copy()
    frame, xi2 = _geometry_xi2(params, x, vec)
    xi1 = solve_xi1(params, xi2)
    return _assemble_y(x, frame, xi1)


def forward_batch(params: CostParams, X, P):
    """Vectorized explicit forward map over rows of X (points) and P (tangents).

    Rows with ||p|| < EPS_P map to x; rows past the domain produce NaN.
    """
    X = np.asarray(X, float)
    P = np.asarray(P, float)
    pn = np.linalg.norm(P, axis=-1)
    small = pn < EPS_P
    safe_pn = np.where(small, 1.0, pn)
    p_hat = P / safe_pn[..., None]
    q_hat = np.cross(X, p_hat)
    e = params.e_hat
    xe = X @ e
    ep = p_hat @ e
    eq = q_hat @ e
    s, yp, yq, _, _ = _solve_raw(params, pn, xe, ep, eq)
    Y = s[..., None] * X + yp[..., None] * p_hat + yq[..., None] * q_hat
    Y = Y / np.linalg.norm(Y, axis=-1, keepdims=True)
    return np.where(small[..., None], X, Y)


def forward_newton(x, p, params: CostParams, init: Xi1 | None = None,
                   tol: float = 1e-12, max_iter: int = 50):
    """Damped Newton solve of the 4-equation system; oracle for the algebra.

    The default initial state is the p = 0 branch (1, 0, 0, x.e_hat).
    """
    x = np.asarray(x, float)
    vec = _p_vec(x, p)
    if np.linalg.norm(vec) < EPS_P:
        return x.copy()
    frame, xi2 = _geometry_xi2(params, x, vec)
    state = init.as_array() if init is not None else np.array([1.0, 0.0, 0.0, xi2.xe])

    def res(v):
        return residual_H(Xi1(*v), xi2, params)

    def newton_step(v, r):
        J = jacobian_xi1(Xi1(*v), xi2, params)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(str(exc)) from exc
        if not np.all(np.isfinite(step)):
            raise SingularJacobian("non-finite Newton step")
        return step

    def polish(v, r):
        # a couple of undamped steps push the residual from the stopping
        # tolerance to machine level, which the angular agreement needs
        for _ in range(2):
            try:
                cand = v + newton_step(v, r)
                rc = res(cand)
            except (OutsideOmega, SingularJacobian):
                break
            if np.linalg.norm(rc) < np.linalg.norm(r):
                v, r = cand, rc
            else:
                break
        return v

    r = res(state)
    for _ in range(max_iter):
        nrm = np.linalg.norm(r)
        if nrm < tol:
            return _assemble_y(x, frame, Xi1(*polish(state, r)))
        step = newton_step(state, r)
        lam = 1.0
        for _ in range(30):
            cand = state + lam * step
            try:
                rc = res(cand)
            except OutsideOmega:
                lam *= 0.5
                continue
            if np.linalg.norm(rc) < nrm:
                state, r = cand, rc
                break
            lam *= 0.5
        else:
            raise NoConvergence(f"damping stalled at ||H|| = {nrm:.3e}")
    if np.linalg.norm(r) < tol:
        return _assemble_y(x, frame, Xi1(*polish(state, r)))
    raise NoConvergence(f"no convergence in {max_iter} iterations, ||H|| = {np.linalg.norm(r):.3e}")


def inverse_map(x, y, params: CostParams) -> TangentVector:
    """Tangent vector p with forward_explicit(x, p) = y.

    Realizes p = -grad_x c: the frame direction comes from the tangent part
    of F1 y + F2 e_hat, and ||p||, e.p_hat, e.q_hat follow from the system
    rows solved for the given variables.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if geodesic_distance(x, y) < 1e-9:
        return TangentVector(base=x, vec=np.zeros(3))
    s, t, u = costmod.dots(params, x, y)
    if not bool(in_omega(params, (s, t, u))):
        raise OutsideOmega(f"(s, t, u) = ({s:.6g}, {t:.6g}, {u:.6g}) outside the cost region")
    st = deriv_stack(params, (s, t, u))
    y_t = project_to_tangent(x, y)
    e_t = project_to_tangent(x, params.e_hat)
    w = st.F1 * y_t + st.F2 * e_t
    wn = float(np.linalg.norm(w))
    if wn < 1e-14:
        raise YPHatZero("gradient direction vanished although y != x")
    p_hat = -w / wn
    yp = float(y_t @ p_hat)
    if abs(yp) < 1e-12:
        raise YPHatZero(f"y.p_hat = {yp:.3e} with y != x")
    q_hat = np.cross(x, p_hat)
    ep = float(params.e_hat @ p_hat)
    pn = -(st.F1 * yp + st.F2 * ep)
    if pn <= 0.0:
        # Positive root branch excludes this configuration.
        raise YPHatZero(f"recovered ||p|| = {pn:.3e} is not positive")
    return TangentVector(base=x, vec=pn * p_hat)


def inverse_batch(params: CostParams, X, Y):
    """Vectorized inverse map: rows of tangent vectors p = -grad_x c."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    s, t, u = costmod.dots(params, X, Y)
    st = deriv_stack(params, (s, t, u))
    grad = st.F1[..., None] * Y + st.F2[..., None] * params.e_hat
    return -project_to_tangent(X, grad)


# ----------------------------------------------------------------------
# Domain bounds


@dataclass(frozen=True)
class DomainBounds:
    """p-magnitude and x.y bounds delimiting where the theory applies."""

    a: float
    grid_n: int
    p1: float
    p2: float | None
    p3: float | None
    p_tilde: float
    p_tilde1: float
    p_tilde2: float
    p_star: float
    xi_star1: float
    xi_star2: float
    xi_star: float

    def __post_init__(self):
        if not (self.p_star <= self.p_tilde1 + 1e-12):
            raise ValueError("p_star must not exceed p_tilde1")

    @property
    def support_ball_radius(self) -> float:
        """Geodesic radius arccos(xi_star)/2 confining transported measures."""
        return float(np.arccos(np.clip(self.xi_star, -1.0, 1.0)) / 2.0)

    def to_json_dict(self) -> dict:
        return {
            "a": self.a, "grid_n": self.grid_n, "p1": self.p1,
            "p2": self.p2, "p3": self.p3, "p_tilde": self.p_tilde,
            "p_tilde1": self.p_tilde1, "p_tilde2": self.p_tilde2,
            "p_star": self.p_star, "xi_star1": self.xi_star1,
            "xi_star2": self.xi_star2, "xi_star": self.xi_star,
            "support_ball_radius": self.support_ball_radius,
        }


_BOUNDS_CACHE: dict[tuple, DomainBounds] = {}


def _cube_grid(grid_n):
    g = np.linspace(-1.0, 1.0, grid_n)
    XE, EP, EQ = np.meshgrid(g, g, g, indexing="ij")
    return XE.ravel(), EP.ravel(), EQ.ravel()


def _bisect_vec(fun, lo, hi, iters=40):
    """Vectorized bisection for sign changes of fun between lo and hi."""
    flo = fun(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        take_left = np.sign(fm) == np.sign(flo)
        lo = np.where(take_left, mid, lo)
        flo = np.where(take_left, fm, flo)
        hi = np.where(take_left, hi, mid)
    return 0.5 * (lo + hi)


def domain_bounds(params: CostParams, grid_n: int = 64, use_cache: bool = True) -> DomainBounds:
    """Scan the hypothesis cube [-1,1]^3 for the p and x.y bounds.

    grid_n >= 32 points per axis; scans are conservative (bounds are safety
    margins) and every p-bound is shrunk by a relative 1e-6 afterwards.
    """
    if grid_n < 32:
        raise ValueError("grid_n must be at least 32")
    a = params.a
    if a <= 0.0:
        raise ValueError("domain bounds require a > 0 (anisotropic cost)")
    key = (round(a, 12), grid_n)
    if use_cache and key in _BOUNDS_CACHE:
        return _BOUNDS_CACHE[key]

    xe, ep, eq = _cube_grid(grid_n)
    p1loc = p1_local(params, xe)
    p1 = float(np.min(p1loc))
    n_steps = 4 * grid_n

    # p2: first sign change of the discriminant along each cell's p-scan.
    taus = np.linspace(1e-9, 1.0 - 1e-9, n_steps)
    prev_tau = np.full(xe.shape, taus[0])
    hit_lo = np.full(xe.shape, np.nan)
    hit_hi = np.full(xe.shape, np.nan)
    alive = np.ones(xe.shape, bool)
    for tk in taus:
        d = discriminant(params, tk * p1loc, xe, ep, eq)
        neg = alive & (d < 0.0)
        hit_lo[neg] = prev_tau[neg]
        hit_hi[neg] = tk
        alive &= ~neg
        prev_tau = np.where(alive, tk, prev_tau)
    found = ~np.isnan(hit_lo)
    if np.any(found):
        idx = np.nonzero(found)[0]
        xef, epf, eqf, p1f = xe[idx], ep[idx], eq[idx], p1loc[idx]

        def disc_at(tau):
            return discriminant(params, tau * p1f, xef, epf, eqf)

        tz = _bisect_vec(disc_at, hit_lo[idx], hit_hi[idx])
        p2 = float(np.min(tz * p1f))
    else:
        p2 = None
    p_tilde = min(p1, p2) if p2 is not None else p1

    def s_min_at(pn_values, cap):
        """Min of s over the cube for each pn in pn_values (pn <= cap)."""
        out = np.empty(len(pn_values))
        yp_sign_change = np.inf
        prev_yp = None
        prev_pn = 0.0
        for k, pn in enumerate(pn_values):
            s, yp, _, _, _ = _solve_raw(params, pn, xe, ep, eq)
            out[k] = np.nanmin(s)
            if prev_yp is not None:
                crossed = (prev_yp < -1e-9) & (yp > 1e-9)
                if np.any(crossed):
                    yp_sign_change = min(yp_sign_change, prev_pn)
            prev_yp, prev_pn = yp, pn
        return out, yp_sign_change

    # xi_tilde: smallest reachable s with ||p|| up to p_tilde.
    pn_grid = np.linspace(p_tilde / n_steps, p_tilde, n_steps)
    smins, yp_cross = s_min_at(pn_grid, p_tilde)
    xi_tilde = float(np.min(smins))

    # p3: first genuine sign change of y.p_hat along solved paths, if any.
    # (With the corrected affine coefficients the yp = 0 locus starts at the
    # trivial s = 1 point and solved paths stay strictly negative in tests;
    # a crossing would show up here.)
    p3 = None if not np.isfinite(yp_cross) else float(yp_cross)
    p_tilde1 = min(p_tilde, p3) if p3 is not None else p_tilde

    if p_tilde1 < p_tilde:
        pn_grid1 = np.linspace(p_tilde1 / n_steps, p_tilde1, n_steps)
        smins1, _ = s_min_at(pn_grid1, p_tilde1)
    else:
        pn_grid1, smins1 = pn_grid, smins
    running = np.minimum.accumulate(smins1)
    xi1 = float(running[-1])
    xi2v = xi_star2(a)
    xi = max(xi1, xi2v)

    # p_tilde2: largest pn whose running min of s stays at or above xi_star.
    ok = running >= xi
    if ok.all():
        p_tilde2 = float(pn_grid1[-1])
    elif not ok.any():
        p_tilde2 = 0.0
    else:
        k = int(np.argmax(~ok))
        lo = pn_grid1[k - 1] if k > 0 else pn_grid1[0] / n_steps

        def smin_minus_xi(pn):
            s, _, _, _, _ = _solve_raw(params, float(pn), xe, ep, eq)
            return np.array(np.nanmin(s) - xi)

        tz = _bisect_vec(smin_minus_xi, np.array(lo), np.array(pn_grid1[k]))
        p_tilde2 = float(tz)
    p_star = min(p_tilde1, p_tilde2)

    shrink = 1.0 - BOUND_SHRINK
    bounds = DomainBounds(
        a=a, grid_n=grid_n, p1=p1,
        p2=None if p2 is None else p2 * shrink,
        p3=None if p3 is None else p3 * shrink,
        p_tilde=p_tilde * shrink, p_tilde1=p_tilde1 * shrink,
        p_tilde2=p_tilde2 * shrink, p_star=p_star * shrink,
        xi_star1=xi1, xi_star2=xi2v, xi_star=xi,
    )
    if use_cache:
        _BOUNDS_CACHE[key] = bounds
    return bounds


# ----------------------------------------------------------------------
# Reachable-set tables


@dataclass(frozen=True)
class DGammaTable:
    """Geodesic reach radii arccos(s(gamma, ...)) over (x angle, p_hat angle)."""

    gamma: float
    x_theta: np.ndarray      # polar angle of x against e_hat, [0, pi]
    phat_angle: np.ndarray   # direction of p_hat in the tangent plane
    radius: np.ndarray       # shape (len(x_theta), len(phat_angle))

    def rows(self):
        """Iterate (x_theta, x_phi, phat_angle, radius_rad) CSV rows."""
        for i, th in enumerate(self.x_theta):
            for j, ps in enumerate(self.phat_angle):
                yield float(th), 0.0, float(ps), float(self.radius[i, j])


def reach_dots(params: CostParams, gamma, theta, psi):
    """s(gamma) for x at polar angle theta and p_hat at tangent angle psi.

    By symmetry about e_hat only (x.e, e.p_hat, e.q_hat) matter:
    (cos th, sin th cos psi, -sin th sin psi). Broadcasts over inputs.
    """
    theta = np.asarray(theta, float)
    psi = np.asarray(psi, float)
    xe = np.cos(theta)
    ep = np.sin(theta) * np.cos(psi)
    eq = -np.sin(theta) * np.sin(psi)
    s, _, _, _, _ = _solve_raw(params, gamma, xe, ep, eq)
    return s


def build_d_gamma(params: CostParams, gamma: float, grid_n: int = 64,
                  bounds: DomainBounds | None = None) -> DGammaTable:
    """Table of reach radii bounding V_x for tangent magnitude gamma.

    Requires 0 < gamma < p_star. Radii are arccos of the solved x.y.
    """
    if bounds is None:
        bounds = domain_bounds(params, grid_n=max(32, grid_n))
    if not (0.0 < gamma < bounds.p_star):
        raise GammaOutOfRange(f"gamma = {gamma:.6g} not in (0, {bounds.p_star:.6g})")
    theta = np.linspace(0.0, np.pi, grid_n)
    psi = np.linspace(0.0, 2.0 * np.pi, grid_n, endpoint=False)
    TH, PS = np.meshgrid(theta, psi, indexing="ij")
    s = reach_dots(params, gamma, TH, PS)
    radius = np.arccos(np.clip(s, -1.0, 1.0))
    return DGammaTable(gamma=gamma, x_theta=theta, phat_angle=psi, radius=radius)
