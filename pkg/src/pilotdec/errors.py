"""Exception types shared across the package."""


class PilotDecError(Exception):
    """Base class for every error raised by pilotdec."""


class InvalidConfig(PilotDecError, ValueError):
    """A configuration value is out of range or inconsistent."""


# CLI-facing alias; unknown keys and bad values both map to exit code 2.
ConfigError = InvalidConfig


class InvalidUtterance(PilotDecError, ValueError):
    pass


class ShapeError(PilotDecError, ValueError):
    pass


class InvalidToken(PilotDecError, ValueError):
    pass


class InvalidState(PilotDecError, ValueError):
    pass


class TooLarge(PilotDecError, ValueError):
    """Brute-force enumeration would exceed its size guard."""


class NoReference(PilotDecError):
    """No pilot reference (or an empty one) is available for a decision."""


class InvalidReference(PilotDecError, ValueError):
    """WER reference sequence is empty."""
