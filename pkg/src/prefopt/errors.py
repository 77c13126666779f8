"""Exception hierarchy.

Every error carries a short machine-readable ``code`` that the CLI prints as
``ERROR <code>: <message>``.
"""


class PrefoptError(Exception):
    code = "GEN000"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class DimensionError(PrefoptError, ValueError):
    code = "DIM001"


class DomainError(PrefoptError, ValueError):
    code = "DOM001"


class NumericalError(PrefoptError, FloatingPointError):
    code = "NUM001"


class UsageError(PrefoptError, RuntimeError):
    code = "USE001"


class DataValidationError(PrefoptError, ValueError):
    code = "DAT001"

    def __init__(self, message, problems=None, code=None):
        super().__init__(message, code=code)
        self.problems = list(problems or [])


class CheckpointError(PrefoptError, IOError):
    code = "CKP001"


class GenerationError(PrefoptError, ValueError):
    code = "GEN001"


class ConfigError(PrefoptError, ValueError):
    code = "CFG002"


class UndefinedMetricError(PrefoptError, ValueError):
    code = "MET001"
