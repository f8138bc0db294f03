class PoseNASError(Exception):
    """Base class for errors raised by this package."""


class ParseError(PoseNASError):
    pass


class SchemaError(PoseNASError):
    pass


class ProtocolError(PoseNASError):
    pass


class ConfigError(PoseNASError):
    pass


class ProjectionError(PoseNASError):
    pass


class MissingArtifactError(PoseNASError):
    pass


class NumericError(PoseNASError):
    """A loss or metric became non-finite."""


class TestLeakError(PoseNASError):
    """Test-split data reached a training routine."""

    __test__ = False
