"""Shared error machinery.

Every operational failure raised by the core modules derives from
ServiceError and carries a stable machine-readable code; the HTTP layer maps
codes onto status codes and the {code, message, field?} error body.
"""

from __future__ import annotations

from typing import Optional


class ServiceError(Exception):
    """Base class for expected, typed failures."""

    code = "error"

    def __init__(self, message: str = "", field: Optional[str] = None):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.field = field

    def to_body(self) -> dict:
        body = {"code": self.code, "message": self.message}
        if self.field is not None:
            body["field"] = self.field
        return body


class ValidationError(ServiceError):
    """Input failed validation; carries per-field reasons."""

    code = "invalid_request"

    def __init__(self, errors: list[dict]):
        super().__init__("; ".join(e["message"] for e in errors))
        self.errors = errors

    def to_body(self) -> dict:
        return {"code": self.code, "message": self.message, "errors": self.errors}
