"""Exception hierarchy.

The CLI maps ``ConfigError`` to exit code 1, ``DataError`` to exit code 2 and
anything else to exit code 3.
"""


class AuditError(Exception):
    pass


class ConfigError(AuditError):
    pass


class DataError(AuditError):
    pass


class CohortParseError(DataError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class TaxonomyError(DataError):
    pass


class DuplicateRowError(CohortParseError):
    pass


class UnknownPersonError(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class RateLookupError(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class EstimationError(DataError):
    pass


class DomainError(AuditError, ValueError):
    pass


class ContractError(AuditError, ValueError):
    pass


class DegenerateInputError(DomainError):
    pass
