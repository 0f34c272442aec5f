"""Exception types raised by the calibration library."""


class RigidCalError(Exception):
    """Base class for all library errors."""


class DegenerateInput(RigidCalError):
    """Input geometry does not constrain the requested quantity (rank deficiency)."""


class NotAtRest(RigidCalError):
    """A rest-state precondition failed on the given window."""


class CoverageGap(RigidCalError):
    """A sample falls outside the time span covered by a state history."""


class NoOverlap(RigidCalError):
    """Two time series share no usable common time span."""


class IllConditioned(RigidCalError):
    """A least-squares system is numerically unsolvable in some direction."""


class InsufficientExcitation(RigidCalError):
    """No motion segment passed the excitation (observability) gate."""


class NoConvergence(RigidCalError):
    """Iterative alignment failed to settle (residual oscillation)."""


class TooSparse(RigidCalError):
    """A point cloud has too few points for the requested operation."""


class FrameMismatch(RigidCalError):
    """Frame tags of rigid transforms do not chain."""


class NoPlanes(RigidCalError):
    """Verification is inconclusive because no plane features are available."""


class ConfigError(RigidCalError):
    """A configuration document is invalid or references missing files."""
