"""Exception types shared across the simulator."""


class MfctError(Exception):
    """Base class for all simulator errors."""


class InvalidMatrix(MfctError, ValueError):
    pass


class InvalidParameter(MfctError, ValueError):
    pass


class DeadNode(MfctError):
    pass


class EmptyRegion(MfctError):
    pass


class InvalidTopology(MfctError, ValueError):
    pass


class UnknownFog(MfctError, KeyError):
    pass


class EmptyMerge(MfctError, ValueError):
    pass


class ParseError(MfctError):
    pass


class ConfigError(MfctError, ValueError):
    """Invalid configuration value; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")
