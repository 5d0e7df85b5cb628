"""Audit risk assessment instruments for bias from race-dependent arrest rates."""

__version__ = "0.1.0"

from .cohort import Cohort, OffenseEvent, Person, Demographics, load_taxonomy, parse_cohort
from .errors import AuditError, ConfigError, DataError

__all__ = ["Cohort", "OffenseEvent", "Person", "Demographics", "load_taxonomy", "parse_cohort",
           "AuditError", "ConfigError", "DataError", "__version__"]
