"""Exception hierarchy. Everything derives from ``LatticeSchauderError``."""


class LatticeSchauderError(Exception):
    pass


class LatticeMismatchError(LatticeSchauderError, ValueError):
    """Two objects live on different lattices."""


class InvariantError(LatticeSchauderError, ValueError):
    """A data invariant (symmetry, bounds, shape) is violated."""


class PreconditionError(LatticeSchauderError, ValueError):
    """An operation was called outside its documented precondition."""


class EnvelopeError(LatticeSchauderError):
    """A state left, or cannot be given, a valid comparison envelope."""


class IntegratorInstabilityError(EnvelopeError):
    """The explicit integrator drove the state out of its envelope."""


class SizeGuardError(LatticeSchauderError, ValueError):
    """A dense computation was requested above the feasibility guard."""


class HypothesisError(LatticeSchauderError, ValueError):
    """Hypotheses of a bound calculator fail on the supplied samples."""


class QuadratureError(LatticeSchauderError, ValueError):
    """A quadrature request is too coarse or incompatible."""
