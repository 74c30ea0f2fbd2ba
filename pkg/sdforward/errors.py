"""Exception hierarchy shared by every sdforward module.

Library code raises these; only the CLI catches them and maps ``exit_code``
to the process exit status.
"""

from sdforward.config import config


class ForwardingError(Exception):
    """Base class for all sdforward errors."""

    exit_code = config.EXIT_CODES["error"]

    def to_record(self) -> dict:
        """Machine-readable error record printed by the CLI."""
        return {"error": type(self).__name__, "message": str(self)}


# ── Linear algebra ────────────────────────────────────────────────────────


class SingularMatrix(ForwardingError):
    exit_code = config.EXIT_CODES["infeasible"]


class NotPositiveDefinite(ForwardingError):
    exit_code = config.EXIT_CODES["infeasible"]


class NotNegativeDefinite(ForwardingError):
    exit_code = config.EXIT_CODES["infeasible"]


class DimensionMismatch(ForwardingError):
    exit_code = config.EXIT_CODES["validation"]


# ── Design ────────────────────────────────────────────────────────────────


class InfeasibleDesign(ForwardingError):
    exit_code = config.EXIT_CODES["infeasible"]


class SmallGainViolated(InfeasibleDesign):
    pass


# ── Simulation ────────────────────────────────────────────────────────────


class InvalidPerturbation(ForwardingError):
    exit_code = config.EXIT_CODES["validation"]


class Divergence(ForwardingError):
    """State norm crossed the overflow guard."""

    exit_code = config.EXIT_CODES["divergence"]

    def __init__(self, time: float, norm: float):
        super().__init__(f"state norm {norm:.3e} exceeded the overflow guard at t={time:.6g}")
        self.time = time
        self.norm = norm

    def to_record(self) -> dict:
        record = super().to_record()
        record["time"] = self.time
        return record


class NoStabilizingRate(ForwardingError):
    exit_code = config.EXIT_CODES["divergence"]


class WindowNotCovered(ForwardingError):
    """An input-history query reached outside the recorded window."""

    exit_code = config.EXIT_CODES["validation"]

    def __init__(self, requested: tuple, recorded: tuple):
        super().__init__(
            f"window [{requested[0]:.6g}, {requested[1]:.6g}] not covered by "
            f"history [{recorded[0]:.6g}, {recorded[1]:.6g}]"
        )
        self.requested = requested
        self.recorded = recorded


# ── Scenario documents ────────────────────────────────────────────────────


class ParseError(ForwardingError):
    exit_code = config.EXIT_CODES["validation"]

    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line

    def to_record(self) -> dict:
        record = super().to_record()
        record["line"] = self.line
        return record


class ValidationError(ParseError):
    pass
