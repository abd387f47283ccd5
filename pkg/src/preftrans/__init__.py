"""Spherical optimal transport with a preferential-direction cost.

Subpackages cover the cost and its derivative stack (cost), the explicit
forward/inverse tangent map and domain bounds (mapping), numerical checks
of the regularity conditions (mtw), desk-scale Kantorovich solvers
(transport), reflector recovery (optics) and a deterministic CLI (cli).
"""

__version__ = "0.1.0"

from .cost import CostParams
from .mapping import DomainBounds, domain_bounds, forward_explicit, forward_newton, inverse_map
from .mtw import MtwReport, f11_profile, mtw_scan
from .optics import ReflectorSurface, SceneConfig
from .sphere import TangentFrame, TangentVector, geodesic_distance, normalize
from .transport import DiscreteMeasure, Potentials, TransportPlan, solve_lp, solve_sinkhorn

__all__ = [
    "__version__",
    "CostParams",
    "DiscreteMeasure",
    "DomainBounds",
    "MtwReport",
    "Potentials",
    "ReflectorSurface",
    "SceneConfig",
    "TangentFrame",
    "TangentVector",
    "TransportPlan",
    "domain_bounds",
    "f11_profile",
    "forward_explicit",
    "forward_newton",
    "geodesic_distance",
    "inverse_map",
    "mtw_scan",
    "normalize",
    "solve_lp",
    "solve_sinkhorn",
]
