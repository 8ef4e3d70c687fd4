"""Coordinate-to-head neural surrogates for 2-D transient groundwater flow
with data-only, soft-constraint, and hard-constraint-projection training."""

from . import diffcore, flowsim, hcp, labcli, randfield, tgtrain

__all__ = ["diffcore", "flowsim", "hcp", "labcli", "randfield", "tgtrain"]
__version__ = "0.1.0"
