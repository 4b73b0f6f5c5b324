"""Exception types shared across the package."""


class IcsError(Exception):
    """Base class for all library errors."""


class AppendBeyondComplete(IcsError):
    """A bit was appended to a transcript that already has length n0."""


class DepthExceeded(IcsError):
    """An edge was applied past the last layer of the graph."""


class LengthMismatch(IcsError, ValueError):
    pass


class BudgetExceeded(IcsError):
    """An exhaustive enumeration would exceed its configured budget."""


class ConstructionFailed(IcsError):
    """No verified ECC was found within the retry budget."""


class MalformedMessage(IcsError):
    pass


class BudgetViolation(IcsError):
    """An adversary strategy tried to flip more bits than its budget allows."""


class MixedConfigs(IcsError):
    """Records from different session configs were aggregated together."""


class BudgetTooSmall(IcsError):
    """The tree-intersection round budget cannot fit the fingerprint search."""


class EmptyWeights(IcsError):
    pass
