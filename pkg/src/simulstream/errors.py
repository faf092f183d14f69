"""Exception hierarchy shared by every module.

Each error class carries the CLI exit code it maps to.
"""


class SimulStreamError(Exception):
    exit_code = 1


class ConfigError(SimulStreamError, ValueError):
    exit_code = 1


class DataError(SimulStreamError):
    exit_code = 2


class SchemaError(DataError):
    pass


class IntegrityError(DataError):
    pass


class ProtocolViolation(SimulStreamError):
    exit_code = 3


class UndefinedMetricError(SimulStreamError, ValueError):
    pass
