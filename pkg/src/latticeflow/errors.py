class InvalidSpecError(ValueError):
    """Malformed box, distribution, scale or configuration."""


class LatticeRangeError(IndexError):
    """A coordinate, plane or reflection falls outside the window."""


class ResourceError(MemoryError):
    """A requested window or rung exceeds the configured budget."""


class InconsistencyError(RuntimeError):
    """An input violates an internal consistency requirement (e.g. a non-maximal flow)."""


class ContractError(ValueError):
    """An operation was called on an input that breaks its precondition."""


class PreconditionError(RuntimeError):
    """A configuration-dependent precondition does not hold for this realization."""


class InfiniteClusterError(PreconditionError):
    """The open cluster reaches the window boundary, so it is not finite at this scale."""


class MismatchError(ValueError):
    """Tunnel exits of two boxes do not agree under the unit shift."""
