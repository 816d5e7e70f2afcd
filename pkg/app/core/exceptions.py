"""Domain errors raised by the services.

Every error carries an ``exit_code`` that the CLI layer returns to the shell:
1 for validation problems, 2 for I/O and planner/denoiser port failures.
"""

import json
from typing import Optional


class CotDiffError(Exception):
    """Base class for every error raised by the scene-layout services."""

    exit_code = 1


# Scene plan parsing and revision

class PlanError(CotDiffError):
    pass


class NoJsonFound(PlanError):
    def __init__(
        self,
        message: str = "No JSON object found in document",
        decode_error: Optional[json.JSONDecodeError] = None,
    ):
        self.decode_error = decode_error
        if decode_error is not None:
            message = (
                f"{message}; invalid JSON at line {decode_error.lineno} column {decode_error.colno}: "
                f"{decode_error.msg}"
            )
        super().__init__(message)


class MissingKey(PlanError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"Missing required key '{key}'")


class TypeMismatch(PlanError):
    def __init__(self, field: str, expected: str):
        self.field = field
        self.expected = expected
        super().__init__(f"Field '{field}' must be {expected}")


class InvalidPlan(PlanError):
    pass


class UnknownEntity(PlanError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Entity '{name}' is not part of the plan")


# Geometry

class BehindCamera(CotDiffError):
    def __init__(self, depth: float):
        self.depth = depth
        super().__init__(f"Point at camera depth {depth:.6f} m is behind the near plane")


class NonPositiveDepth(CotDiffError):
    def __init__(self, depth: float):
        self.depth = depth
        super().__init__(f"Depth must be positive, got {depth}")


class InvalidRange(CotDiffError):
    def __init__(self, near: float, far: float):
        super().__init__(f"Invalid depth range near={near} far={far}")


class IndivisibleDims(CotDiffError):
    pass


class LengthMismatch(CotDiffError):
    pass


class ShapeMismatch(CotDiffError):
    pass


class MaskAuditFailed(CotDiffError):
    pass


class EmptySelection(CotDiffError):
    def __init__(self, message: str = "Mask selects no finite-depth pixel"):
        super().__init__(message)


class InvalidStep(CotDiffError):
    pass


# Planner protocol

class NoVerdictFound(CotDiffError):
    def __init__(self, message: str = "No JSON object with key 'isaligned' in planner response"):
        super().__init__(message)


class MalformedLayout(CotDiffError):
    pass


class PlannerError(CotDiffError):
    """The planner endpoint could not produce a usable response."""

    exit_code = 2


class PortFailure(CotDiffError):
    """A planner or denoiser port failed; ``step`` is -1 for the initial planning call."""

    exit_code = 2

    def __init__(self, step: int, cause: Exception):
        self.step = step
        self.cause = cause
        super().__init__(f"Port failure at step {step}: {cause}")


# Metrics and benchmark

class UnknownRelation(CotDiffError):
    def __init__(self, relation: str):
        self.relation = relation
        super().__init__(f"Unknown relation '{relation}'")


class ExhaustedCombinations(CotDiffError):
    def __init__(self, requested: int, available: int, kind: Optional[str] = None):
        label = f" for {kind}" if kind else ""
        super().__init__(f"Requested {requested} prompts{label} but only {available} distinct combinations exist")
