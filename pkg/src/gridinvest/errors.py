"""Exception types raised across the package."""


class GridInvestError(Exception):
    """Base class for all package errors."""


class ScenarioError(GridInvestError, ValueError):
    """A scenario file or object violates a type invariant.

    ``line`` is the 1-based line in the source file when known.
    """

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class HorizonError(GridInvestError, KeyError):
    """A (year, quarter) outside the scenario's demand series was requested."""

    def __str__(self):
        return str(self.args[0]) if self.args else "horizon bounds exceeded"


class ActionBoundsError(GridInvestError, ValueError):
    """Investment outside [0, max_build]."""


class UndefinedLCOEError(GridInvestError, ZeroDivisionError):
    """LCOE requested for a technology or system with no generation."""


class EpisodeLifecycleError(GridInvestError, RuntimeError):
    """``step`` called on a finished episode (or before ``reset``)."""


class CheckpointError(GridInvestError, ValueError):
    """Malformed, truncated or incompatible checkpoint stream."""


class CheckpointVersionError(CheckpointError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    """Checkpoint dimensions or config hash do not match the current run."""
