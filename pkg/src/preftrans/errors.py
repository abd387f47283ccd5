"""Exception types shared across the package."""


class PrefTransError(Exception):
    """Base class for all package errors."""


class DegenerateInput(PrefTransError):
    """Input vector too close to zero to carry a direction."""


class FrameUndefined(PrefTransError):
    """Tangent vector too small to define a (p-hat, q-hat) frame."""


class OutsideOmega(PrefTransError):
    """Dot-product triple left the region where the cost is defined."""


class NegativeDiscriminant(PrefTransError):
    """Quadratic for x.y has no real root at this tangent magnitude."""


class BeyondP1(PrefTransError):
    """Tangent magnitude beyond the coefficient-blowup bound p1."""


class SingularJacobian(PrefTransError):
    """Newton linearization is singular."""


class NoConvergence(PrefTransError):
    """Iteration exhausted its budget.

    For the entropic solver the best iterate is attached as
    ``plan``, ``potentials`` and ``info`` attributes.
    """

    def __init__(self, message, plan=None, potentials=None, info=None):
        super().__init__(message)
        self.plan = plan
        self.potentials = potentials
        self.info = info


class YPHatZero(PrefTransError):
    """y.p_hat vanished with y != x; inverse formulas are singular here."""


class GammaOutOfRange(PrefTransError):
    """gamma must lie strictly inside (0, p_star)."""


class Infeasible(PrefTransError):
    """Transport problem has mismatched total mass."""


class InvalidScene(PrefTransError):
    """Optical scene parameters are inconsistent (requires 0 < l < L)."""


class InterpolationError(PrefTransError):
    """Requested direction is not represented on the surface."""


class DegenerateMesh(PrefTransError):
    """Direction samples do not span a surface."""


class MeshTooCoarse(PrefTransError):
    """Mesh/step combination cannot support finite differences."""
