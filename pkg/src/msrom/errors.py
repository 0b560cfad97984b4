"""Exception types shared across the package."""

from __future__ import annotations


class MsromError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MsromError):
    """Invalid mesh/experiment configuration."""


class DataError(MsromError):
    """Invalid input data (permeability rasters, cache files, archives)."""


class StepError(MsromError):
    """Newton failed to converge inside an implicit step."""

    def __init__(self, message: str, iterations: int, residual_norm: float,
                 step_index: int | None = None):
        super().__init__(message)
        self.iterations = iterations
        self.residual_norm = residual_norm
        self.step_index = step_index


class EigenSolveError(MsromError):
    """Local spectral solve failed."""

    def __init__(self, message: str, block_index: int):
        super().__init__(message)
        self.block_index = block_index


class SaddleSolveError(MsromError):
    """Constrained-minimization saddle system is singular."""

    def __init__(self, message: str, block_index: int, n_constraints: int):
        super().__init__(message)
        self.block_index = block_index
        self.n_constraints = n_constraints
