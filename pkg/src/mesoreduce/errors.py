"""Exception types shared by the engines and the CLI (exit codes attached)."""


class MesoError(Exception):
    exit_code = 1


class ConfigError(MesoError):
    """Scenario file could not be parsed or validated."""

    exit_code = 2

    def __init__(self, message, violations=()):
        self.violations = list(violations)
        if self.violations:
            message = message + "\n" + "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(message)


class NumericalInstability(MesoError):
    """A step was refused or blew up; ``suggested_dt`` if one is known."""

    exit_code = 3

    def __init__(self, message, suggested_dt=None):
        self.suggested_dt = suggested_dt
        if suggested_dt is not None:
            message = f"{message} (suggested dt <= {suggested_dt:.6g})"
        super().__init__(message)


class InvariantBreach(MesoError):
    exit_code = 4
