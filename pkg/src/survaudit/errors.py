class SurvauditError(Exception):
    exit_code = 1


class ConfigError(SurvauditError):
    exit_code = 2


class DataValidationError(SurvauditError, ValueError):
    exit_code = 3


class NumericalError(SurvauditError, ArithmeticError):
    exit_code = 4
