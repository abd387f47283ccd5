"""Anisotropic point-to-point cost on the sphere and its derivative stack.

The cost is a function of the three dot products s = x.y, t = x.e_hat,
u = y.e_hat:

    c = log(1 - (1 - a^2)(1 - s) / (2 (1 - a t)(1 - a u))),   a = l / L.

All evaluators broadcast over numpy arrays of (s, t, u).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import OutsideOmega
from .sphere import TangentVector, project_to_tangent

# Log arguments below this floor count as outside Omega; the region boundary
# is exactly where the argument reaches 0, so the floor separates "outside"
# from roundoff sitting on the boundary.
LOG_ARG_FLOOR = 1e-14

# Range of a for which the quadratic obstructing the inverse solve has no
# real roots; outside it the library still evaluates but flags the params.
A_SAFE_LOW = 1.0 / 3.0
A_SAFE_HIGH = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class CostParams:
    """Geometry of the optical setup defining the cost.

    L is the per-reflector optical path constant and l the source-target
    separation parameter entering the cost; a = l / L. l = 0 (a = 0) is
    accepted as the isotropic degenerate case used for baselines.
    """

    L: float
    l: float
    e_hat: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "l", float(self.l))
        e = np.asarray(self.e_hat, float)
        n = np.linalg.norm(e)
        if not np.isfinite(n) or abs(n - 1.0) > 1e-12:
            raise ValueError("e_hat must be a unit vector")
        object.__setattr__(self, "e_hat", e / n)
        if self.L <= 0 or self.l < 0 or self.l >= self.L:
            raise ValueError(f"need 0 <= l < L, got L={self.L}, l={self.l}")
        if self.a_warning:
            warnings.warn(
                f"a = {self.a:.4f} outside ({A_SAFE_LOW:.4f}, {A_SAFE_HIGH:.4f}); "
                "inverse-solve guarantees do not apply",
                stacklevel=2,
            )

    @property
    def a(self) -> float:
        return self.l / self.L

    @property
    def alpha(self) -> float:
        return 2.0 / (1.0 - self.a**2)

    @property
    def a_warning(self) -> bool:
        """True when a falls outside the root-free range (1/3, 1/sqrt 2)."""
        return not (A_SAFE_LOW < self.a < A_SAFE_HIGH)

    def to_json_dict(self) -> dict:
        return {"L": self.L, "l": self.l, "e_hat": [float(c) for c in self.e_hat]}

    @classmethod
    def from_json_dict(cls, d: dict) -> "CostParams":
        return cls(L=d["L"], l=d["l"], e_hat=np.asarray(d["e_hat"], float))

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CostParams":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class CostArgs:
    """Dot-product triple (s, t, u) = (x.y, x.e, y.e), each in [-1, 1]."""

    s: float
    t: float
    u: float

    def __post_init__(self):
        for name in ("s", "t", "u"):
            v = getattr(self, name)
            if not -1.0 - 1e-12 <= v <= 1.0 + 1e-12:
                raise ValueError(f"{name} = {v} outside [-1, 1]")


@dataclass(frozen=True)
class DerivStack:
    """First and second partials of the cost with respect to (s, t, u).

    On Omega all fields are finite and F1 > 0 (shared positive denominator).
    """

    F1: np.ndarray
    F2: np.ndarray
    F11: np.ndarray
    F12: np.ndarray
    F13: np.ndarray
    F22: np.ndarray
    F23: np.ndarray


def xi_star2(a: float) -> float:
    """Lower x.y threshold 1 + 2(a-1)/(a+1) below which the region closes."""
    return 1.0 + 2.0 * (a - 1.0) / (a + 1.0)


def _unpack(args):
    if isinstance(args, CostArgs):
        return args.s, args.t, args.u
    s, t, u = args
    return np.asarray(s, float), np.asarray(t, float), np.asarray(u, float)


def log_argument(params: CostParams, s, t, u):
    """Argument of the log in the cost; positive exactly on the open region."""
    a = params.a
    s = np.asarray(s, float)
    return 1.0 - (1.0 - a * a) * (1.0 - s) / (2.0 * (1.0 - a * np.asarray(t, float)) * (1.0 - a * np.asarray(u, float)))


def in_omega(params: CostParams, args) -> np.ndarray:
    """True where s exceeds both the log-argument boundary and xi_star2."""
    s, t, u = _unpack(args)
    cond_boundary = s > 1.0 - (2.0 / (1.0 - params.a**2)) * (1.0 - params.a * t) * (1.0 - params.a * u)
    return cond_boundary & (s > xi_star2(params.a))


def _require_omega(params, s, t, u):
    arg = log_argument(params, s, t, u)
    bad = (arg <= LOG_ARG_FLOOR) | (s <= xi_star2(params.a))
    if np.any(bad):
        n = int(np.count_nonzero(bad))
        raise OutsideOmega(f"{n} point(s) outside the cost region (min log-arg {np.min(arg):.3e})")
    return arg


def eval_cost(params: CostParams, args):
    """Cost value; <= 0 everywhere on the region, = 0 exactly at s = 1."""
    s, t, u = _unpack(args)
    arg = _require_omega(params, s, t, u)
    return np.log(arg)


def deriv_stack(params: CostParams, args) -> DerivStack:
    """Closed-form derivative stack F1..F23 with alpha = 2/(1-a^2)."""
    s, t, u = _unpack(args)
    _require_omega(params, s, t, u)
    a = params.a
    al = params.alpha
    bx = 1.0 - a * t
    by = 1.0 - a * u
    D = al * bx * by - 1.0 + s
    F1 = 1.0 / D
    F2 = -a * (1.0 - s) / (bx * D)
    F11 = -1.0 / D**2
    F12 = a * al * by / D**2
    F13 = a * al * bx / D**2
    F22 = F2 * (a / bx + a * al * by / D)
    F23 = F2 * (a * al * bx / D)
    return DerivStack(F1=F1, F2=F2, F11=F11, F12=F12, F13=F13, F22=F22, F23=F23)


def dots(params: CostParams, x, y):
    """Dot-product triple (s, t, u) for concrete points. Batched over rows."""
    e = params.e_hat
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    return np.sum(x * y, axis=-1), x @ e, y @ e


def cost_between(params: CostParams, x, y):
    """Cost at concrete sphere points (batched over rows)."""
    s, t, u = dots(params, x, y)
    return eval_cost(params, (s, t, u))


def grad_x_cost(params: CostParams, x, y) -> TangentVector:
    """Spherical gradient of the cost in its first argument.

    Equals the tangent projection at x of F1 y + F2 e_hat; the transport
    relation is p = -grad_x_cost(x, y).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    s, t, u = dots(params, x, y)
    st = deriv_stack(params, (s, t, u))
    ambient = st.F1 * y + st.F2 * params.e_hat
    return TangentVector(base=x, vec=project_to_tangent(x, ambient))


# Isotropic baselines kept behind the same call shape for regression tests.

def baseline_log_cost(x, y):
    """-log(1 - x.y); singular at x = y."""
    s = np.sum(np.asarray(x, float) * np.asarray(y, float), axis=-1)
    return -np.log(1.0 - s)


def baseline_half_geodesic_sq(x, y):
    """Half squared great-circle distance."""
    s = np.sum(np.asarray(x, float) * np.asarray(y, float), axis=-1)
    return 0.5 * np.arccos(np.clip(s, -1.0, 1.0)) ** 2
