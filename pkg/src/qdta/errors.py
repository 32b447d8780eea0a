class StructuralError(ValueError):
    """Inputs whose shape or references don't line up (lengths, link ids, endpoints)."""


class ConfigError(ValueError):
    """Invalid run configuration (interval length, worker count, strategy params)."""


class SolverError(RuntimeError):
    """Numerical failure inside an assignment (non-finite potential, etc.)."""

    def __init__(self, message, interval=None):
        super().__init__(message if interval is None else f"interval {interval}: {message}")
        self.interval = interval


class Unreachable(LookupError):
    """No path connects the requested origin and destination."""

    def __init__(self, origin, destination):
        super().__init__(f"no path from {origin} to {destination}")
        self.origin = origin
        self.destination = destination
