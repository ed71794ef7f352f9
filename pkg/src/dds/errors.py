"""Error types raised by the kernel.

Every error carries a stable ``code`` string so that the HTTP layer and the
CLI can map failures without string-matching messages.
"""

from __future__ import annotations


class DdsError(Exception):
    """Base class for all kernel errors."""

    code = "Error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)

    def to_doc(self) -> dict:
        return {"error": self.code, "message": str(self)}


class UnknownItem(DdsError):
    code = "UnknownItem"


class NameTaken(DdsError):
    code = "NameTaken"


class StorageFailure(DdsError):
    code = "StorageFailure"


class RangeOutOfBounds(DdsError):
    code = "RangeOutOfBounds"


class NoSuchView(DdsError):
    code = "NoSuchView"


class UnknownAgent(DdsError):
    code = "UnknownAgent"


class StaleJob(DdsError):
    code = "StaleJob"


class IllegalTransition(DdsError):
    code = "IllegalTransition"


class UnknownActivity(DdsError):
    code = "UnknownActivity"


class SchemaViolation(DdsError):
    """Outcome failed validation. ``violations`` is a list of violation docs."""

    code = "SchemaViolation"

    def __init__(self, violations, message: str = ""):
        self.violations = list(violations)
        detail = "; ".join(f"{v['code']} at '{v['path']}'" for v in self.violations)
        super().__init__(message or detail or "schema violation")

    def to_doc(self) -> dict:
        doc = super().to_doc()
        doc["violations"] = self.violations
        return doc


class InvalidDefinition(DdsError):
    """Workflow definition failed validation. ``defects`` lists the problems."""

    code = "InvalidDefinition"

    def __init__(self, defects=(), message: str = ""):
        self.defects = list(defects)
        detail = "; ".join(f"{d['code']} at '{d['activity-id']}'" for d in self.defects)
        super().__init__(message or detail or "invalid definition")

    def to_doc(self) -> dict:
        doc = super().to_doc()
        doc["defects"] = self.defects
        return doc


class ScriptError(DdsError):
    code = "ScriptError"


class ParseError(DdsError):
    code = "ParseError"

    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} (at {position})")


class UnknownPath(DdsError):
    code = "UnknownPath"


class TypeMismatch(DdsError):
    code = "TypeMismatch"


class DivisionByZero(DdsError):
    code = "DivisionByZero"


class ConstraintViolation(DdsError):
    """Collection constraint failed. ``reason`` is one of the checker codes."""

    code = "ConstraintViolation"

    def __init__(self, reason: str, message: str = ""):
        self.reason = reason
        super().__init__(message or reason)

    def to_doc(self) -> dict:
        doc = super().to_doc()
        doc["reason"] = self.reason
        return doc


class ImmutableProperty(DdsError):
    code = "ImmutableProperty"


class UnknownTarget(DdsError):
    code = "UnknownTarget"


class NoSuchVersion(DdsError):
    code = "NoSuchVersion"


class CycleError(DdsError):
    code = "CycleError"

    def __init__(self, path):
        self.path = list(path)
        super().__init__(" -> ".join(self.path))


class MissingDependency(DdsError):
    code = "MissingDependency"

    def __init__(self, name: str, version: str):
        self.name = name
        self.version = version
        super().__init__(f"{name}@{version}")


class ConflictingVersion(DdsError):
    code = "ConflictingVersion"


class UnknownModule(DdsError):
    code = "UnknownModule"


class AuthError(DdsError):
    code = "AuthError"
