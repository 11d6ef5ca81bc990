"""Structured runtime failures.

Every fault the evaluator can hit becomes one of these; the host process
never sees a raw exception.  FailureObjects carry no host-specific data --
no addresses, no timestamps -- so logs containing them stay portable.
"""

from __future__ import annotations

from dataclasses import dataclass

LOGIC_ERROR = "LogicError"
EFFECT_ERROR = "EffectError"
OVERFLOW = "Overflow"
MATCH_NON_EXHAUSTIVE = "MatchNonExhaustive"
OUT_OF_MEMORY = "OutOfMemory"
TIMEOUT = "Timeout"

FAILURE_KINDS = frozenset(
    [LOGIC_ERROR, EFFECT_ERROR, OVERFLOW, MATCH_NON_EXHAUSTIVE, OUT_OF_MEMORY, TIMEOUT]
)


@dataclass(frozen=True)
class FailureObject:
    kind: str
    message: str
    origin: tuple[str, int]  # (function name, statement index)
    cause: "FailureObject | None" = None

    def __post_init__(self) -> None:
        if self.kind not in FAILURE_KINDS:
            raise ValueError(f"unknown failure kind {self.kind!r}")


class RuntimeFailure(Exception):
    """Internal carrier; always caught at the task boundary."""

    def __init__(self, failure: FailureObject) -> None:
        super().__init__(f"{failure.kind}: {failure.message}")
        self.failure = failure


def failure_to_plain(f: FailureObject) -> dict:
    out: dict[str, object] = {
        "kind": f.kind,
        "message": f.message,
        "origin": {"function": f.origin[0], "statement": f.origin[1]},
    }
    if f.cause is not None:
        out["cause"] = failure_to_plain(f.cause)
    return out


def failure_from_plain(obj: dict) -> FailureObject:
    cause = obj.get("cause")
    return FailureObject(
        kind=obj["kind"],
        message=obj["message"],
        origin=(obj["origin"]["function"], obj["origin"]["statement"]),
        cause=failure_from_plain(cause) if isinstance(cause, dict) else None,
    )
