"""Exception types shared across the package."""

from __future__ import annotations


class BeaconSchedError(Exception):
    """Base class for all package errors."""


class MalformedLoopError(BeaconSchedError):
    """Loop has a zero step or an otherwise unusable control structure."""


class UnresolvedBoundError(BeaconSchedError):
    """A Param bound has no value in the supplied parameter map."""


class DegenerateFitError(BeaconSchedError):
    """Regression design matrix is rank deficient.

    ``collinear_terms`` names the feature columns at which elimination
    found no usable pivot; callers can drop those terms or add training
    diversity.
    """

    def __init__(self, msg: str, collinear_terms: tuple[str, ...] = ()):
        super().__init__(msg)
        self.collinear_terms = tuple(collinear_terms)


class UndefinedRatioError(BeaconSchedError):
    """Std/mean ratio is undefined because a loop's mean misses are zero."""


class UndefinedMpkiError(BeaconSchedError):
    """MPKI window contained zero retired instructions."""


class ProtocolError(BeaconSchedError):
    """Beacon message violated the channel protocol (e.g. unknown loop id)."""


class UnsupportedProgramError(BeaconSchedError):
    """Program shape falls outside the supported synthetic IR family."""


class SchemaError(BeaconSchedError):
    """A structured text input (program, model, config) failed validation."""


class ConfigError(BeaconSchedError):
    """Harness configuration is unusable (missing grids, bad matrix, ...)."""


class CapacityViolationError(BeaconSchedError):
    """A socket ledger exceeded LLC capacity while under capacity-safe policy."""
