"""Diagrammatic loss expansion, closed forms and gradient-flow simulation for
CP tensor decompositions of the identity tensor."""

from cpgf.config import ModelConfig, Scenario
from cpgf.errors import (
    BlowUpError,
    ConvergenceError,
    CpgfError,
    DomainError,
    GridMismatchError,
    ResourceLimitError,
    UnsupportedCaseError,
)

__all__ = [
    "ModelConfig",
    "Scenario",
    "CpgfError",
    "DomainError",
    "GridMismatchError",
    "ResourceLimitError",
    "UnsupportedCaseError",
    "BlowUpError",
    "ConvergenceError",
]

__version__ = "0.1.0"
