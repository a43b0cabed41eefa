"""Exception types shared across the package."""

from __future__ import annotations


class InputError(Exception):
    """Bad user-supplied input (config, file contents, CLI arguments).

    The CLI maps this class to exit code 1; everything else is an
    internal error and exits 2.
    """


class MalformedRecordError(InputError):
    """A raw event record could not be parsed.

    Carries the 1-based record position so the offending line can be
    located in the source file.
    """

    def __init__(self, position: int, reason: str):
        self.position = position
        self.reason = reason
        super().__init__(f"record {position}: {reason}")


class LedgerOrderError(InputError):
    """Event stream handed to the ledger builder was not sorted."""


class OracleLookupError(Exception):
    """The reference balance source failed to answer a probe.

    Distinct from a balance mismatch: a mismatch fails validation, a
    lookup failure aborts it.
    """


class DependencyError(InputError):
    """A pipeline stage was started before its upstream outputs exist."""


class UnidentifiableFitError(ValueError):
    """Fit inputs carry no signal for one or more model parameters."""
