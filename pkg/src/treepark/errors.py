"""Exception hierarchy shared by all treepark modules."""


class TreeparkError(Exception):
    """Base class for every error raised by the package."""


class InvalidDistribution(TreeparkError, ValueError):
    """A probability vector is malformed (wrong shape, does not sum to one)."""


class NegativeProbability(InvalidDistribution):
    pass


class NonCriticalOffspring(InvalidDistribution):
    """The offspring law does not have mean 1."""


class DegenerateModel(TreeparkError, ValueError):
    """Offspring is delta_1, or every arrival law on the support is delta_1."""


class InvalidT(TreeparkError, ValueError):
    pass


class SizeCapExceeded(TreeparkError):
    def __init__(self, cap: int):
        super().__init__(f"tree exceeded size cap of {cap} vertices")
        self.cap = cap


class UnreachableSize(TreeparkError, ValueError):
    pass


class InvalidExcursion(TreeparkError, ValueError):
    pass


class LengthMismatch(TreeparkError, ValueError):
    pass


class NoConvergence(TreeparkError):
    def __init__(self, iterations: int, distance: float):
        super().__init__(
            f"no convergence after {iterations} iterations (last distance {distance:.3e})"
        )
        self.iterations = iterations
        self.distance = distance


class InsufficientSupport(TreeparkError, ValueError):
    pass


class NotSubcritical(TreeparkError, ValueError):
    pass


class NotSupercritical(TreeparkError, ValueError):
    pass


class DegenerateStep(TreeparkError):
    """A Newton-Puiseux step has a vanishing linear coefficient."""


class NewtonDiverged(TreeparkError):
    pass


class ConfigError(TreeparkError, ValueError):
    pass
