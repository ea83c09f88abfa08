# SPDX-License-Identifier: Apache-2.0
# DATABUY ERRORS - EXCEPTION HIERARCHY

"""
Exceptions raised by databuy.

Every error derives from DatabuyError and from the builtin a caller would
otherwise expect (ValueError, RuntimeError), so either can be caught.
"""


class DatabuyError(Exception):
    """Base class for all databuy errors."""


class InvalidParameterError(DatabuyError, ValueError):
    """A model, policy or sample parameter is outside its allowed range."""


class InvalidScheduleError(DatabuyError, ValueError):
    """A sampling schedule or continuous policy is malformed."""


class InfeasiblePolicyError(DatabuyError, ValueError):
    """A policy cannot be rendered within the budget, even after maximal saving."""


class ModelRestrictionError(DatabuyError, ValueError):
    """An operation was asked for outside the model it is defined for."""


class ConvergenceError(DatabuyError, RuntimeError):
    """An iterative method did not converge within its iteration limit."""


class ConfigError(DatabuyError, ValueError):
    """An experiment configuration is invalid or uses an unsupported schema."""


class ArchiveError(DatabuyError, ValueError):
    """A results archive is corrupt or was written by an incompatible version."""
