"""Task bookkeeping and the scheduling choice policy.

Choices are a pure function of (seed, step index, ready set), so a free-mode
run is reproducible from its seed alone and a recorded run replays from its
logged choices.  Wall-clock never participates.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

TASK_API = "api"
TASK_EFFECT = "effect"
TASK_SCRIPT = "script"

READY = "ready"
BLOCKED = "blocked"
DONE = "done"

MODE_RECORD = "record"
MODE_REPLAY = "replay"
MODE_FREE = "free"


@dataclass(frozen=True)
class SchedulerConfig:
    workers: int = 1
    mode: str = MODE_FREE
    seed: int = 0

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.mode not in (MODE_RECORD, MODE_REPLAY, MODE_FREE):
            raise ValueError(f"unknown scheduler mode {self.mode!r}")


def choose(seed: int, step: int, ready_ids: list[int]) -> int:
    """Deterministic pick from a ready set; uniform-ish via a digest."""
    ordered = sorted(ready_ids)
    key = f"{seed}:{step}:{','.join(str(i) for i in ordered)}".encode("ascii")
    n = int.from_bytes(hashlib.sha256(key).digest()[:8], "big")
    return ordered[n % len(ordered)]


@dataclass
class Frame:
    fn: str
    cursor: list[int]
    env: dict[str, int]  # name -> rooted ValueHandle
    bind_target: str | None  # binding in the caller frame for the return value


@dataclass
class Task:
    id: int
    parent: int | None
    kind: str  # TASK_API | TASK_EFFECT | TASK_SCRIPT
    correlation: str
    state: str = READY
    children: list[int] = field(default_factory=list)
    # api tasks
    frames: list[Frame] = field(default_factory=list)
    api_name: str | None = None
    pending_child: int | None = None
    pending_bind: str | None = None
    # effect tasks
    capability: str | None = None
    operation: str | None = None
    arg_handles: list[int] = field(default_factory=list)
    request_issued: bool = False
    origin: tuple[str, int] | None = None  # (function, statement) of the submitting Task::run
    # script tasks (test scaffolding): a generator driven one step per turn
    script: object | None = None
    # completion
    outcome: str | None = None  # "success" | "failure" | "unwind"
    result_handle: int | None = None
    failure: object | None = None

    def done(self) -> bool:
        return self.state == DONE
