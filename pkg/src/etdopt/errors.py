"""Exception types raised across the package."""


class EtdoptError(Exception):
    """Base class for all package errors."""


class InvalidProblemError(EtdoptError, ValueError):
    pass


class InfeasibleError(EtdoptError):
    pass


class OracleUnsupportedError(EtdoptError):
    pass


class IncompatibleGraphError(EtdoptError, ValueError):
    pass


class DivergenceError(EtdoptError, ArithmeticError):
    pass


class ConfigError(EtdoptError, ValueError):
    pass


class ScenarioError(EtdoptError):
    pass
