"""
Base exceptions shared by every kernel app
"""


class FederationError(Exception):
    """Base exception for all kernel errors"""
    pass


class ConfigError(FederationError):
    """Exception for invalid or inconsistent experiment configuration"""
    pass


class DimensionMismatchError(FederationError):
    """Exception for parameter vectors of incompatible dimension"""
    pass
