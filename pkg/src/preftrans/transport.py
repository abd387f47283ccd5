"""Desk-scale Kantorovich solvers restricted to the support-ball regime.

The exact route hands the transportation LP to the HiGHS simplex (vertex
solutions; equality duals double as Kantorovich potentials). The entropic
route is a log-domain Sinkhorn with an epsilon schedule. Both run on a
dense cost matrix assembled from the preferential-direction cost, so every
point pair must stay inside the cost's admissible region; the support-ball
check guarantees that for measures confined to radius arccos(xi_star)/2.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import logsumexp

from .cost import CostParams, cost_between
from .errors import Infeasible, MeshTooCoarse, NoConvergence, OutsideOmega
from .mapping import DomainBounds, domain_bounds, forward_explicit
from .mtw import mixed_hessian_analytic
from .sphere import geodesic_distance, sphere_gradient_fd, sphere_hessian_fd

# Closed-ball slack for the support check: a point constructed to sit exactly
# on the boundary must pass despite arccos roundoff.
BALL_SLACK = 1e-12
# Entries below this are dropped when sparsifying a plan.
PLAN_PRUNE = 1e-15


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted atoms on the sphere; weights normalized, atoms distinct."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, float))
        w = np.atleast_1d(np.asarray(self.weights, float))
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        if pts.shape[0] != w.shape[0]:
            raise ValueError("points and weights length mismatch")
        if np.any(np.abs(np.linalg.norm(pts, axis=1) - 1.0) > 1e-10):
            raise ValueError("measure atoms must be unit vectors")
        if np.any(w < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        np.fill_diagonal(d2, np.inf)
        if d2.min() < (1e-10) ** 2:
            raise ValueError("duplicate atoms closer than 1e-10")

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class TransportPlan:
    """Sparse coupling with row marginals = source, column marginals = target."""

    entries: sparse.coo_matrix
    source: DiscreteMeasure
    target: DiscreteMeasure

    def marginal_residuals(self):
        dense_row = np.asarray(self.entries.sum(axis=1)).ravel()
        dense_col = np.asarray(self.entries.sum(axis=0)).ravel()
        return (np.max(np.abs(dense_row - self.source.weights)),
                np.max(np.abs(dense_col - self.target.weights)))

    def objective(self, cost_matrix) -> float:
        m = self.entries
        return float(np.sum(m.data * np.asarray(cost_matrix)[m.row, m.col]))

    def toarray(self):
        return self.entries.toarray()


@dataclass(frozen=True)
class Potentials:
    """Dual pair with u_i + v_j <= c_ij (tight on the plan support)."""

    u: np.ndarray
    v: np.ndarray


def _as_plan(dense, mu, nu) -> TransportPlan:
    dense = np.where(np.asarray(dense) > PLAN_PRUNE, dense, 0.0)
    return TransportPlan(entries=sparse.coo_matrix(dense), source=mu, target=nu)


def cost_matrix(params: CostParams, mu: DiscreteMeasure, nu: DiscreteMeasure,
                cost=None) -> np.ndarray:
    """Dense pairwise cost; raises OutsideOmega when any pair leaves the region."""
    fn = cost if cost is not None else lambda X, Y: cost_between(params, X, Y)
    X = np.repeat(mu.points, nu.n, axis=0)
    Y = np.tile(nu.points, (mu.n, 1))
    return np.asarray(fn(X, Y)).reshape(mu.n, nu.n)


def support_ball_check(mu: DiscreteMeasure, nu: DiscreteMeasure, x0, params: CostParams,
                       bounds: DomainBounds | None = None) -> bool:
    """True iff every atom of both measures lies in the closed ball of
    geodesic radius arccos(xi_star)/2 about x0."""
    if bounds is None:
        bounds = domain_bounds(params)
    r = bounds.support_ball_radius
    x0 = np.asarray(x0, float)
    for m in (mu, nu):
        if np.any(geodesic_distance(m.points, x0) > r + BALL_SLACK):
            return False
    return True


def solve_lp(mu: DiscreteMeasure, nu: DiscreteMeasure, params: CostParams,
             cost=None, cost_mat=None):
    """Exact optimal plan and dual potentials via the HiGHS simplex.

    Dual feasibility u_i + v_j <= c_ij and complementary slackness hold to
    solver tolerance; primal and dual objectives agree (strong duality).
    """
    C = cost_mat if cost_mat is not None else cost_matrix(params, mu, nu, cost)
    n, m = mu.n, nu.n
    if abs(mu.weights.sum() - nu.weights.sum()) > 1e-9:
        raise Infeasible("total source and target mass differ")
    A = sparse.vstack([
        sparse.kron(sparse.eye(n), np.ones((1, m))),
        sparse.kron(np.ones((1, n)), sparse.eye(m)),
    ]).tocsr()
    b = np.concatenate([mu.weights, nu.weights])
    res = linprog(C.ravel(), A_eq=A, b_eq=b, bounds=(0.0, None), method="highs")
    if res.status != 0:
        raise Infeasible(f"LP solver failed: {res.message}")
    duals = res.eqlin.marginals
    plan = _as_plan(res.x.reshape(n, m), mu, nu)
    return plan, Potentials(u=duals[:n].copy(), v=duals[n:].copy())


def _round_to_polytope(pi, a, b):
    """Project an approximate coupling onto exact marginals.

    Row/column clamp-scaling followed by a rank-one mass correction; the
    objective moves by at most max|C| times the L1 marginal error.
    """
    row = pi.sum(axis=1)
    x = np.minimum(a / np.where(row > 0, row, 1.0), 1.0)
    pi = pi * x[:, None]
    col = pi.sum(axis=0)
    y = np.minimum(b / np.where(col > 0, col, 1.0), 1.0)
    pi = pi * y[None, :]
    err_a = a - pi.sum(axis=1)
    err_b = b - pi.sum(axis=0)
    mass = err_a.sum()
    if mass > 0:
        pi = pi + np.outer(err_a, err_b) / mass
    return pi


def solve_sinkhorn(mu: DiscreteMeasure, nu: DiscreteMeasure, params: CostParams,
                   epsilon: float, max_iter: int = 20000, tol: float = 1e-9,
                   cost=None, cost_mat=None, eps_start: float = 1e-1,
                   eps_factor: float = 0.5):
    """Log-domain Sinkhorn with a geometric epsilon schedule.

    Returns (plan, potentials, info); info carries convergence diagnostics.
    The dual iterate defines pi_ij = exp((f_i + g_j - C_ij)/eps); the
    returned plan is that iterate rounded onto exact marginals (clamp
    scaling plus a rank-one correction), so its marginal violation sits at
    roundoff even when the dual tail stalls on a degenerate instance.
    Raises NoConvergence (carrying the best iterate) only when the dual
    marginal residual stays above a hard 1e-3 ceiling.
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    C = cost_mat if cost_mat is not None else cost_matrix(params, mu, nu, cost)
    a = mu.weights
    b = nu.weights
    log_a = np.log(a)
    log_b = np.log(b)
    f = np.zeros(mu.n)
    g = np.zeros(nu.n)

    eps_list = []
    e = max(eps_start, epsilon)
    while e > epsilon:
        eps_list.append(e)
        e *= eps_factor
    eps_list.append(epsilon)

    total_iters = 0
    dual_residual = np.inf
    for eps in eps_list:
        target = tol if eps == epsilon else 1e-3
        budget = max_iter if eps == epsilon else max(200, max_iter // 10)
        best = np.inf
        since_best = 0
        for _ in range(budget):
            f = eps * (log_a - logsumexp((g[None, :] - C) / eps, axis=1))
            g = eps * (log_b - logsumexp((f[:, None] - C) / eps, axis=0))
            total_iters += 1
            log_pi = (f[:, None] + g[None, :] - C) / eps
            row = np.exp(logsumexp(log_pi, axis=1))
            col = np.exp(logsumexp(log_pi, axis=0))
            dual_residual = max(np.max(np.abs(row - a)), np.max(np.abs(col - b)))
            if dual_residual < target:
                break
            # degenerate instances stall the dual tail; stop once progress
            # is immeasurable and let the rounding restore feasibility
            if dual_residual < 0.999 * best:
                best = dual_residual
                since_best = 0
            else:
                since_best += 1
                if since_best > 1000:
                    break

    pi = _round_to_polytope(np.exp((f[:, None] + g[None, :] - C) / epsilon), a, b)
    plan = _as_plan(pi, mu, nu)
    pots = Potentials(u=f, v=g)
    plan_residual = max(plan.marginal_residuals())
    info = {
        "converged": bool(plan_residual < tol),
        "marginal_residual": float(plan_residual),
        "dual_residual": float(dual_residual),
        "iterations": int(total_iters),
        "epsilon_final": float(epsilon),
        "epsilon_schedule": [float(e) for e in eps_list],
    }
    if dual_residual > 1e-3:
        raise NoConvergence(
            f"dual marginal residual {dual_residual:.3e} after {total_iters} iterations",
            plan=plan, potentials=pots, info=info,
        )
    return plan, pots, info


def c_transform(params: CostParams, u, X, Y, cost=None, cost_mat=None):
    """Pointwise sup over the atoms X of (-c(x, y) - u(x)) for each y in Y."""
    if cost_mat is None:
        fn = cost if cost is not None else lambda A, B: cost_between(params, A, B)
        X = np.atleast_2d(np.asarray(X, float))
        Y = np.atleast_2d(np.asarray(Y, float))
        XX = np.repeat(X, len(Y), axis=0)
        YY = np.tile(Y, (len(X), 1))
        cost_mat = np.asarray(fn(XX, YY)).reshape(len(X), len(Y))
    u = np.asarray(u, float)
    return np.max(-cost_mat - u[:, None], axis=0)


@dataclass(frozen=True)
class GeneralizedSolutionReport:
    """Contact-set and pushforward diagnostics of a solved instance."""

    contact: np.ndarray                 # boolean (n, m) contact-set mask
    support_violations: list            # (i, j, mass, gap) outside the contact set
    pushforward_residual: float         # worst column-marginal mismatch
    max_support_gap: float              # worst contact gap on the support

    @property
    def ok(self) -> bool:
        return len(self.support_violations) == 0


def generalized_solution_check(plan: TransportPlan, potentials: Potentials,
                               params: CostParams, tol: float = 1e-7,
                               cost=None, cost_mat=None) -> GeneralizedSolutionReport:
    """Verify plan support sits in the contact set of the potentials.

    The contact set is computed in the gradient-relation gauge u~ = -u,
    where u~(x) + u~^c(y) = -c(x, y) marks contact; on the plan support this
    coincides with tightness of u + v <= c (complementary slackness).
    Column sums over the contact images realize the pushforward check on
    singleton Borel sets.
    """
    C = cost_mat if cost_mat is not None else cost_matrix(params, plan.source, plan.target, cost)
    u_tilde = -np.asarray(potentials.u, float)
    uc = c_transform(params, u_tilde, plan.source.points, plan.target.points, cost_mat=C)
    gap = u_tilde[:, None] + uc[None, :] + C
    contact = np.abs(gap) <= tol
    violations = []
    m = plan.entries
    for i, j, w in zip(m.row, m.col, m.data):
        if w > PLAN_PRUNE and not contact[i, j]:
            violations.append((int(i), int(j), float(w), float(gap[i, j])))
    col = np.asarray(m.sum(axis=0)).ravel()
    push = float(np.max(np.abs(col - plan.target.weights)))
    sup_mask = plan.toarray() > PLAN_PRUNE
    max_gap = float(np.max(np.abs(gap[sup_mask]))) if sup_mask.any() else 0.0
    return GeneralizedSolutionReport(
        contact=contact,
        support_violations=violations,
        pushforward_residual=push,
        max_support_gap=max_gap,
    )


def pde_residual(u, points, params: CostParams, f, g, h: float = 1e-4):
    """Pointwise Monge-Ampere residual of a potential (diagnostic only).

    u is a scalar field evaluable in an ambient neighborhood of each mesh
    point; f and g are density callables on the sphere. At each point the
    residual is |det(Hess u + Hess_x c)| - |det D2_xy c| f(x)/g(T x), where
    T x is the forward image of the spherical gradient of u. The p = 0
    branch of the forward map guards the y = x limit.
    """
    points = np.atleast_2d(np.asarray(points, float))
    if points.shape[0] == 0:
        raise MeshTooCoarse("empty mesh")
    if not (1e-6 <= h <= 1e-3):
        raise MeshTooCoarse(f"step h = {h} outside [1e-6, 1e-3]")
    out = np.empty(points.shape[0])
    for k, x in enumerate(points):
        p = sphere_gradient_fd(u, x, h=h)
        y = forward_explicit(x, p, params)

        def total(z, y=y):
            return u(z) + _cost_ambient(params, z, y)

        lhs = abs(float(np.linalg.det(sphere_hessian_fd(total, x, h=h))))
        rhs = mixed_hessian_analytic(x, p, params) * float(f(x)) / float(g(y))
        out[k] = lhs - rhs
    return out


def _cost_ambient(params: CostParams, z, y):
    """Cost with the ambient dot-product formula (no renormalization of z)."""
    a = params.a
    s = float(np.asarray(z, float) @ np.asarray(y, float))
    t = float(np.asarray(z, float) @ params.e_hat)
    uu = float(np.asarray(y, float) @ params.e_hat)
    arg = 1.0 - (1.0 - a * a) * (1.0 - s) / (2.0 * (1.0 - a * t) * (1.0 - a * uu))
    if arg <= 1e-14:
        raise OutsideOmega("ambient stencil point left the cost region")
    return np.log(arg)


# ----------------------------------------------------------------------
# File formats


def measure_to_csv(m: DiscreteMeasure) -> str:
    buf = io.StringIO()
    buf.write("x,y,z,weight\n")
    for p, w in zip(m.points, m.weights):
        buf.write(f"{float(p[0])!r},{float(p[1])!r},{float(p[2])!r},{float(w)!r}\n")
    return buf.getvalue()


def measure_from_csv(text: str) -> DiscreteMeasure:
    rows = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if rows and rows[0].lower().startswith("x,"):
        rows = rows[1:]
    vals = np.array([[float(c) for c in ln.split(",")] for ln in rows])
    return DiscreteMeasure(points=vals[:, :3], weights=vals[:, 3])


def measure_to_json_dict(m: DiscreteMeasure) -> dict:
    return {"points": m.points.tolist(), "weights": m.weights.tolist()}


def measure_from_json_dict(d: dict) -> DiscreteMeasure:
    return DiscreteMeasure(points=np.asarray(d["points"], float),
                           weights=np.asarray(d["weights"], float))


def plan_to_csv(plan: TransportPlan, header: str | None = None) -> str:
    """Sparse (i, j, mass) rows sorted row-major for byte-stable output."""
    m = plan.entries
    order = np.lexsort((m.col, m.row))
    buf = io.StringIO()
    if header:
        buf.write(header if header.endswith("\n") else header + "\n")
    buf.write("i,j,mass\n")
    for k in order:
        buf.write(f"{int(m.row[k])},{int(m.col[k])},{float(m.data[k])!r}\n")
    return buf.getvalue()


def plan_from_csv(text: str, mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportPlan:
    rows = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith(("#", "i,"))]
    i = []
    j = []
    w = []
    for ln in rows:
        a, b, c = ln.split(",")
        i.append(int(a))
        j.append(int(b))
        w.append(float(c))
    dense = np.zeros((mu.n, nu.n))
    dense[i, j] = w
    return _as_plan(dense, mu, nu)
