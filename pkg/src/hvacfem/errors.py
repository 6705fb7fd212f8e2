"""Exception hierarchy shared by all hvacfem modules."""


class HvacFemError(Exception):
    """Base class for all package errors."""


class GeometryError(HvacFemError):
    """Invalid geometric input (self-intersecting or non-rectilinear polygon, ...)."""


class ContainmentError(GeometryError):
    """A region polygon or sensor is not contained in the domain."""


class DomainError(HvacFemError):
    """An argument is outside its admissible set (e.g. theta outside [0,1])."""


class AssemblyError(HvacFemError):
    """Mismatched meshes/spaces handed to the assembler."""


class SolverError(HvacFemError):
    """Sparse factorization or linear solve failed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConvergenceError(HvacFemError):
    """Nonlinear iteration exhausted without meeting tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class ParameterError(HvacFemError):
    """Physically inadmissible comfort/material parameters."""


class NumericalError(HvacFemError):
    """A fixed-point or auxiliary numerical procedure failed."""


class DataError(HvacFemError):
    """Missing or inconsistent measurement data."""


class ScenarioError(HvacFemError):
    """Scenario file failed validation; carries the full violation list."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])
