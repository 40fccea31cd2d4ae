"""Engine errors carry a stable machine-readable code plus a human message."""

from __future__ import annotations


class EngineError(Exception):
    """Raised by every module for contract violations and lookup failures.

    The ``code`` is part of the external contract (API bodies, CLI output);
    the message is free text for humans and may change.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


def not_found(what: str) -> EngineError:
    return EngineError("NOT_FOUND", what)
