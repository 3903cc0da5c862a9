class PrivFeatError(Exception):
    pass


class NonFiniteFeatures(PrivFeatError):
    def __init__(self, row: int, message: str = None):
        self.row = row
        super().__init__(message or "non-finite value in feature row {0}".format(row))


class FeatureFormatError(PrivFeatError):
    def __init__(self, message: str, line: int = None, offset: int = None):
        self.line = line
        self.offset = offset
        where = ""
        if line is not None:
            where = " (line {0})".format(line)
        elif offset is not None:
            where = " (byte offset {0})".format(offset)
        super().__init__(message + where)


class FeatureIOError(PrivFeatError, OSError):
    def __init__(self, path, reason):
        self.path = str(path)
        super().__init__("{0}: {1}".format(self.path, reason))


class DimensionMismatch(PrivFeatError):
    pass


class PrivacyDomainError(PrivFeatError):
    pass


class CalibrationError(PrivFeatError):
    def __init__(self, message, bracket=None, bracket_epsilons=None):
        self.bracket = bracket
        self.bracket_epsilons = bracket_epsilons
        super().__init__(message)


class ConfigurationError(PrivFeatError):
    pass


class ContractViolation(PrivFeatError):
    pass


class MissingLabels(PrivFeatError):
    pass


class NumericalError(PrivFeatError, FloatingPointError):
    pass


class TrainingDiverged(PrivFeatError):
    def __init__(self, message, step=None, loss=None):
        self.step = step
        self.loss = loss
        super().__init__(message)


class OracleError(PrivFeatError):
    pass
