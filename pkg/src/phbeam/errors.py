"""Exception hierarchy shared by all phbeam modules."""


class PhBeamError(Exception):
    """Base class for all package errors."""


class DomainError(PhBeamError, ValueError):
    """Input outside the domain of a pointwise function (e.g. non-finite)."""


class DimensionError(PhBeamError, ValueError):
    """Arrays whose lengths do not match the grid they are used with."""


class ConfigError(PhBeamError, ValueError):
    """Invalid configuration.

    ``issues`` holds ``(key, line, reason)`` triples; ``line`` is ``None`` when
    the problem is not tied to a single line (e.g. a missing key).
    """

    def __init__(self, issues):
        if isinstance(issues, str):
            issues = [(None, None, issues)]
        self.issues = list(issues)
        super().__init__("; ".join(_fmt(i) for i in self.issues))


def _fmt(issue):
    key, line, reason = issue
    where = []
    if key is not None:
        where.append(str(key))
    if line is not None:
        where.append(f"line {line}")
    return f"{' @ '.join(where)}: {reason}" if where else reason


class StateError(PhBeamError, ValueError):
    """A beam state violates the boundary constraints of the system."""


class StepFailure(PhBeamError, RuntimeError):
    """A time step could not be completed (Newton divergence, NaN, ...)."""

    def __init__(self, message, t=None):
        self.t = t
        if t is not None:
            message = f"{message} (t = {t:.17g})"
        super().__init__(message)
