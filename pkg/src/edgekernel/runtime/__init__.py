"""Deterministic evaluator: task machine, scheduling policy, failure model."""

from .failures import (
    EFFECT_ERROR,
    FAILURE_KINDS,
    LOGIC_ERROR,
    MATCH_NON_EXHAUSTIVE,
    OUT_OF_MEMORY,
    OVERFLOW,
    TIMEOUT,
    FailureObject,
    RuntimeFailure,
    failure_from_plain,
    failure_to_plain,
)
from .interp import (
    EVENT_KINDS,
    EV_API_ENTER,
    EV_API_EXIT,
    EV_EFFECT_REQUEST,
    EV_EFFECT_RESPONSE,
    EV_SCHEDULE_CHOICE,
    EV_SNAPSHOT_MARK,
    EV_SPAWN,
    EV_YIELD,
    EventSink,
    InvocationError,
    InvocationResult,
    RESPONSE_PENDING,
    Runtime,
    lower_program,
)
from .scheduler import (
    BLOCKED,
    DONE,
    MODE_FREE,
    MODE_RECORD,
    MODE_REPLAY,
    READY,
    TASK_API,
    TASK_EFFECT,
    TASK_SCRIPT,
    Frame,
    SchedulerConfig,
    Task,
    choose,
)

__all__ = [
    "BLOCKED",
    "DONE",
    "EFFECT_ERROR",
    "EVENT_KINDS",
    "EV_API_ENTER",
    "EV_API_EXIT",
    "EV_EFFECT_REQUEST",
    "EV_EFFECT_RESPONSE",
    "EV_SCHEDULE_CHOICE",
    "EV_SNAPSHOT_MARK",
    "EV_SPAWN",
    "EV_YIELD",
    "EventSink",
    "FAILURE_KINDS",
    "FailureObject",
    "Frame",
    "InvocationError",
    "InvocationResult",
    "LOGIC_ERROR",
    "MATCH_NON_EXHAUSTIVE",
    "MODE_FREE",
    "MODE_RECORD",
    "MODE_REPLAY",
    "OUT_OF_MEMORY",
    "OVERFLOW",
    "READY",
    "RESPONSE_PENDING",
    "Runtime",
    "RuntimeFailure",
    "SchedulerConfig",
    "TASK_API",
    "TASK_EFFECT",
    "TASK_SCRIPT",
    "TIMEOUT",
    "Task",
    "choose",
    "failure_from_plain",
    "failure_to_plain",
    "lower_program",
]
