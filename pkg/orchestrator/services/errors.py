"""
Orchestration errors
"""
from core.exceptions import FederationError


class OrchestrationError(FederationError):
    """Base exception for orchestration errors"""
    pass


class QuorumNotMetError(OrchestrationError):
    """Exception for a round that stayed below quorum after its retry"""
    pass
