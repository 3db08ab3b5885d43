"""Exception hierarchy shared by all modules."""


class OpKernError(Exception):
    """Base class for everything raised deliberately by this package."""


class InvalidKernel(OpKernError):
    """Malformed kernel data: non-finite entries, bad shapes as data,
    or block asymmetry beyond the repairable tolerance."""


class ShapeError(OpKernError):
    """Operands disagree on label set or operator dimension."""


class LabelError(OpKernError):
    """A label is not a member of the table's label set."""


class NotStrictContraction(OpKernError):
    """The contraction parameter has operator norm >= 1."""


class NotPositiveDefinite(OpKernError):
    """A kernel required to be positive semidefinite is not.

    Attributes
    ----------
    min_eig : smallest eigenvalue of the flattened matrix, if known.
    """

    def __init__(self, message, min_eig=None):
        super().__init__(message)
        self.min_eig = min_eig


class NotEquivalent(OpKernError):
    """The two signed decompositions do not agree.

    Attributes
    ----------
    residual : worst absolute violation of the defining identity.
    relative : the same violation divided by the system scale.
    """

    def __init__(self, message, residual=None, relative=None):
        super().__init__(message)
        self.residual = residual
        self.relative = relative


class GramMismatch(OpKernError):
    """Stacked initial/final columns have different Gram matrices,
    so no partial isometry can map one family onto the other."""


class NotInvertible(OpKernError):
    """The rank condition behind the transfer function fails at a label."""

    def __init__(self, message, label=None, sigma_min=None):
        super().__init__(message)
        self.label = label
        self.sigma_min = sigma_min


class NotDominated(OpKernError):
    """Radon-Nikodym derivative requested for a pair without L <= K."""


class SpectrumOutOfRange(OpKernError):
    """A derivative operator has eigenvalues outside [0, 1] beyond tolerance."""


class SingularL(OpKernError):
    """The noise/conditioning Gram matrix is numerically singular."""


class SingularSystem(OpKernError):
    """A linear system required to be invertible is numerically singular."""


class InternalInvariantViolation(OpKernError):
    """A property that is guaranteed by construction failed numerically;
    indicates a bug or catastrophic conditioning, not a user error."""
