"""
Custom exceptions for ergolab
"""


class ErgolabError(Exception):
    """Base exception for all ergolab errors"""
    pass


class InvalidInputError(ErgolabError):
    """Raised when an operation is called outside its contract"""
    pass


class BranchError(ErgolabError):
    """Raised when a branch descriptor is malformed or root finding fails"""
    def __init__(self, message, branch=None, point=None):
        super().__init__(message)
        self.branch = branch
        self.point = point


class PotentialError(ErgolabError):
    """Raised when a potential cannot be built for a map"""
    pass


class SpectralError(ErgolabError):
    """Raised when power iteration does not converge"""
    def __init__(self, message, rayleigh_quotient=None, iterations=None):
        super().__init__(message)
        self.rayleigh_quotient = rayleigh_quotient
        self.iterations = iterations


class MeasureError(ErgolabError):
    """Raised for invalid fiber images or linear program failures"""
    pass


class TransferError(ErgolabError):
    """Raised when the leafwise transfer operator cannot be applied"""
    pass


class ClassSViolation(ErgolabError):
    """Raised when G(x, y0) = y0 fails beyond tolerance"""
    def __init__(self, message, max_deviation=None):
        super().__init__(message)
        self.max_deviation = max_deviation


class HypothesisViolation(ErgolabError):
    """Raised when a theorem hypothesis does not hold for a configured system"""
    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class StabilityError(ErgolabError):
    """Raised when a stability sweep cannot be completed"""
    def __init__(self, message, delta=None):
        super().__init__(message)
        self.delta = delta


class ConfigurationError(ErgolabError):
    """Raised when configuration is invalid"""
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class BuilderNotFoundError(ErgolabError):
    """Raised when a config references an unknown builder"""
    pass
