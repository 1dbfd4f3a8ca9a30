"""combctl error kinds"""


class CombctlError(Exception):
    """base class for every error raised by combctl"""


class ConfigError(CombctlError, ValueError):
    """invalid configuration value; key_path names the offending key"""

    def __init__(self, key_path: str, message: str):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}")


class UnknownKeyError(ConfigError):
    pass


class UnitSuffixError(ConfigError):
    pass


class UnboundLevelError(CombctlError, ValueError):
    pass


class GridTruncationError(CombctlError, ValueError):
    pass


class GridMismatchError(CombctlError, ValueError):
    pass


class EmptyWindowError(CombctlError, ValueError):
    pass


class DegenerateDesignError(CombctlError, ValueError):
    pass


class AliasingError(CombctlError, ValueError):
    pass


class AreaError(CombctlError, ValueError):
    """requested area cannot be reached; best_scale is the closest field scale found"""

    def __init__(self, message: str, best_scale: float | None = None):
        self.best_scale = best_scale
        super().__init__(message)


class ScheduleError(CombctlError, ValueError):
    pass


class PulseTruncationError(CombctlError):
    pass


class ContinuumLeakageError(CombctlError):
    pass


class PropagationError(CombctlError):
    """numerical failure during propagation"""

    def __init__(self, message: str, pair_index: int | None = None, step: int | None = None):
        self.pair_index = pair_index
        self.step = step
        where = []
        if pair_index is not None:
            where.append(f"pair {pair_index}")
        if step is not None:
            where.append(f"step {step}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
