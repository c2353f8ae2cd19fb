"""Exceptions raised across the package.

Data-level errors also subclass ValueError, so code that already catches
ValueError around dataset handling keeps working.
"""


class AuditError(Exception):
    """Base class for every error raised on purpose by this package."""


class ConfigError(AuditError):
    """Bad configuration or command-line usage."""


class DatasetFormatError(AuditError, ValueError):
    def __init__(self, message, path=None, line_number=None):
        self.path = path
        self.line_number = line_number
        location = ''
        if path is not None:
            location = f'{path}:{line_number} | ' if line_number is not None else f'{path} | '
        super().__init__(location + message)


class ValidationError(AuditError, ValueError):
    def __init__(self, message, qid=None):
        self.qid = qid
        super().__init__(f'qid={qid} | {message}' if qid is not None else message)


class NameBankError(AuditError, ValueError):
    pass


class UnsatisfiableSampleError(AuditError, ValueError):
    def __init__(self, message, stype=None):
        self.stype = stype
        super().__init__(message)


class PlanApplicationError(AuditError, ValueError):
    def __init__(self, message, qid=None):
        self.qid = qid
        super().__init__(f'qid={qid} | {message}' if qid is not None else message)


class PerturbationBudgetError(AuditError):
    def __init__(self, message, failures=()):
        self.failures = tuple(failures)
        super().__init__(message)


class AlignmentError(AuditError, ValueError):
    pass


class AuditSheetError(AuditError, ValueError):
    pass


class MaskingError(AuditError, ValueError):
    pass


class EvaluationError(AuditError, ValueError):
    pass
