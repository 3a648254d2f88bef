"""Exception types shared across the toolkit."""


class SkewstabError(Exception):
    pass


class DomainError(SkewstabError, ValueError):
    """A point lies outside every represented branch of a map."""


class BranchRangeError(SkewstabError, ValueError):
    """A value lies outside the image of the requested branch."""


class FiberRangeError(SkewstabError, ValueError):
    """A fiber map produced a value outside [0, 1]."""


class H3Error(SkewstabError):
    """No iterate up to the search depth makes the skew product contract."""


class FixedPointError(SkewstabError):
    """Fixed-point iteration did not reach the requested residual.

    The best iterate is kept on ``result`` so callers can still inspect it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ConfigError(SkewstabError, ValueError):
    pass


class DecayError(SkewstabError):
    """Iterates of a zero-mass measure did not decay (no spectral gap observed)."""
