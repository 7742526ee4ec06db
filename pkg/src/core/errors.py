#!/usr/bin/env python3
# Error hierarchy shared by every module

class CPSCError(Exception):
    """Base class for all toolkit errors"""


class DomainError(CPSCError, ValueError):
    """Input outside the mathematical domain of an operation"""


class NumericalError(CPSCError, RuntimeError):
    """Integrator, root finding or linear algebra failure"""


class ConfigError(CPSCError, ValueError):
    """Configuration schema or invariant violation"""


class AdmissibilityError(ConfigError):
    """Weight parameter not below the first Fredholm weight of some summand"""

    def __init__(self, message, summand=None, delta=None, bound=None):
        super().__init__(message)
        self.summand = summand
        self.delta = delta
        self.bound = bound


class TrustRegionError(NumericalError):
    """End-modification coefficients outside the trusted parameter range"""


class DivergenceError(NumericalError):
    """Contraction iteration failed to contract"""

    def __init__(self, message, ratios=None, report=None):
        super().__init__(message)
        self.ratios = list(ratios or [])
        self.report = report


EXIT_SUCCESS = 0
EXIT_NUMERICAL = 2
EXIT_CONFIG = 3


def exit_code_for(error):
    """Map an exception to the CLI exit code"""
    if isinstance(error, (ConfigError, DomainError)):
        return EXIT_CONFIG
    if isinstance(error, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_NUMERICAL
