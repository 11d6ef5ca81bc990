"""Replay logs and logical snapshots.

A `.ektrace` file is line-oriented canonical text: a header record, one
record per event with dense sequence numbers, and a trailing whole-file
digest.  A `.eksnap` file is a heap snapshot section followed by a
continuation record (task frames, cursors, and named bindings), so a run
can be reinflated on a different machine and driven forward by the rest of
its log.

Replay never touches live handlers: every effect response, schedule choice,
and boundary crossing is served from (and checked against) the log.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from . import heap as heapmod
from .bapi import CapabilityRegistry, decode_canonical
from .lang.ast import Program, program_hash
from .runtime.failures import failure_from_plain, failure_to_plain
from .runtime.interp import (
    EV_API_ENTER,
    EV_API_EXIT,
    EV_EFFECT_RESPONSE,
    EV_SCHEDULE_CHOICE,
    EV_SNAPSHOT_MARK,
    EVENT_KINDS,
    EventSink,
    InvocationResult,
    RESPONSE_PENDING,
    Runtime,
)
from .runtime.scheduler import (
    MODE_RECORD,
    MODE_REPLAY,
    TASK_API,
    TASK_SCRIPT,
    Frame,
    SchedulerConfig,
    Task,
)

TRACE_FORMAT = "EKTRACE1"
CONTINUATION_FORMAT = "EKCONT1"


class TraceError(Exception):
    pass


class LogCorrupt(TraceError):
    """The file is not a well-formed log: bad digest, gap in sequence
    numbers, unparseable line."""


class ReplayDivergence(TraceError):
    """Re-execution disagreed with the log.  `seq` is the first divergent
    event (-1 when the header itself disagrees)."""

    def __init__(self, seq: int, message: str) -> None:
        super().__init__(f"seq {seq}: {message}" if seq >= 0 else message)
        self.seq = seq


class SnapshotIncompatible(TraceError):
    """The snapshot was taken from a different program or format."""


def _canonical_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    kind: str
    correlation: str
    payload: dict

    def line(self) -> str:
        return _canonical_line(
            {"corr": self.correlation, "kind": self.kind, "payload": self.payload, "seq": self.seq}
        )


@dataclass
class ReplayLog:
    header: dict
    events: list[TraceEvent]
    snapshots: dict[int, bytes] = field(default_factory=dict)


def make_header(program: Program, node_id: str, workers: int, seed: int) -> dict:
    return {
        "format": TRACE_FORMAT,
        "node": node_id,
        "program": program_hash(program),
        "seed": seed,
        "workers": workers,
    }


def render_trace(header: dict, events: list[TraceEvent]) -> str:
    body = _canonical_line(header) + "\n"
    for e in events:
        body += e.line() + "\n"
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    return body + _canonical_line({"digest": digest}) + "\n"


def parse_trace(text: str) -> ReplayLog:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 2:
        raise LogCorrupt("log needs a header and a digest line")
    body = "".join(line + "\n" for line in lines[:-1])
    try:
        trailer = json.loads(lines[-1])
    except ValueError as exc:
        raise LogCorrupt(f"digest line unparseable: {exc}") from None
    if not isinstance(trailer, dict) or set(trailer) != {"digest"}:
        raise LogCorrupt("last line is not a digest record")
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != trailer["digest"]:
        raise LogCorrupt("digest mismatch")
    try:
        header = json.loads(lines[0])
    except ValueError as exc:
        raise LogCorrupt(f"header unparseable: {exc}") from None
    if not isinstance(header, dict) or header.get("format") != TRACE_FORMAT:
        raise LogCorrupt("missing or unknown format marker in header")
    for key in ("node", "program", "seed", "workers"):
        if key not in header:
            raise LogCorrupt(f"header missing {key!r}")
    events: list[TraceEvent] = []
    for i, line in enumerate(lines[1:-1]):
        try:
            obj = json.loads(line)
        except ValueError as exc:
            raise LogCorrupt(f"event line {i} unparseable: {exc}") from None
        if not isinstance(obj, dict) or set(obj) != {"corr", "kind", "payload", "seq"}:
            raise LogCorrupt(f"event line {i} has wrong fields")
        if obj["seq"] != i:
            raise LogCorrupt(f"sequence numbers not dense at line {i}")
        if obj["kind"] not in EVENT_KINDS:
            raise LogCorrupt(f"unknown event kind {obj['kind']!r}")
        if not isinstance(obj["payload"], dict):
            raise LogCorrupt(f"event {i} payload is not a record")
        events.append(TraceEvent(obj["seq"], obj["kind"], obj["corr"], obj["payload"]))
    return ReplayLog(header, events)


# ----------------------------------------------------------------------
# Recording


class RecordSink(EventSink):
    def __init__(self, seed: int = 0) -> None:
        super().__init__(seed)
        self.events: list[TraceEvent] = []

    def emit(self, kind: str, correlation: str, payload: dict) -> int:
        seq = super().emit(kind, correlation, payload)
        self.events.append(TraceEvent(seq, kind, correlation, payload))
        return seq


@dataclass
class RecordedRun:
    text: str
    log: ReplayLog
    results: list[InvocationResult]


def record(
    program: Program,
    invocations: list[tuple[str, list[object]]],
    registry: CapabilityRegistry | None = None,
    workers: int = 1,
    seed: int = 0,
    node_id: str = "local",
    gc_config: heapmod.GcConfig | None = None,
    snapshot_turns: set[int] | frozenset[int] = frozenset(),
) -> RecordedRun:
    """Run the invocations under a recording sink and render the log.
    Snapshot marks (if requested) also capture a resumable .eksnap blob."""
    sink = RecordSink(seed=seed)
    snapshots: dict[int, bytes] = {}

    def hook(rt: Runtime, seq: int) -> None:
        snapshots[seq] = capture_snapshot(rt, seq)

    runtime = Runtime(
        program,
        registry=registry,
        sink=sink,
        config=SchedulerConfig(workers=workers, mode=MODE_RECORD, seed=seed),
        gc_config=gc_config,
        node_id=node_id,
        snapshot_turns=snapshot_turns,
        snapshot_hook=hook,
    )
    results = [runtime.evaluate(api, args) for api, args in invocations]
    header = make_header(program, node_id, workers, seed)
    text = render_trace(header, sink.events)
    log = ReplayLog(header, list(sink.events), snapshots)
    return RecordedRun(text, log, results)


# ----------------------------------------------------------------------
# Replay


class ReplaySink(EventSink):
    """Serves schedule choices and effect responses from the log and checks
    every emission against it.  Recorded SnapshotMark lines are advisory and
    skipped: a replaying run does not re-take snapshots."""

    def __init__(self, events: list[TraceEvent], position: int = 0) -> None:
        super().__init__(seed=0)
        self.events = events
        self.position = position

    def _skip_marks(self) -> None:
        while (
            self.position < len(self.events)
            and self.events[self.position].kind == EV_SNAPSHOT_MARK
        ):
            self.position += 1

    def peek(self) -> TraceEvent | None:
        self._skip_marks()
        if self.position >= len(self.events):
            return None
        return self.events[self.position]

    def finished(self) -> bool:
        return self.peek() is None

    def emit(self, kind: str, correlation: str, payload: dict) -> int:
        expected = self.peek()
        if expected is None:
            raise ReplayDivergence(
                len(self.events), f"execution produced {kind} beyond the end of the log"
            )
        if expected.kind != kind:
            raise ReplayDivergence(
                expected.seq, f"log has {expected.kind}, execution produced {kind}"
            )
        if expected.correlation != correlation:
            raise ReplayDivergence(expected.seq, "correlation id mismatch")
        if expected.payload != payload:
            raise ReplayDivergence(
                expected.seq,
                f"{kind} payload mismatch: log {_canonical_line(expected.payload)}"
                f" vs execution {_canonical_line(payload)}",
            )
        self.position += 1
        return expected.seq

    def schedule_choice(self, ready_ids: list[int], correlation_of) -> int:
        expected = self.peek()
        if expected is None:
            raise ReplayDivergence(len(self.events), "schedule choice beyond the end of the log")
        if expected.kind != EV_SCHEDULE_CHOICE:
            raise ReplayDivergence(
                expected.seq, f"log has {expected.kind} where execution needs a schedule choice"
            )
        pick = expected.payload.get("task")
        if pick not in ready_ids:
            raise ReplayDivergence(
                expected.seq, f"logged pick {pick!r} is not in the ready set {sorted(ready_ids)}"
            )
        self.emit(EV_SCHEDULE_CHOICE, correlation_of(pick), {"task": pick})
        return pick

    def effect_response_override(self, task_id: int) -> object | None:
        expected = self.peek()
        if (
            expected is not None
            and expected.kind == EV_EFFECT_RESPONSE
            and expected.payload.get("task") == task_id
        ):
            return dict(expected.payload)
        return RESPONSE_PENDING


@dataclass
class ReplayReport:
    results: list[InvocationResult]
    events_replayed: int


def _drive_from_log(runtime: Runtime, sink: ReplaySink) -> ReplayReport:
    results: list[InvocationResult] = []
    # a resumed snapshot can land mid-invocation, with the ApiEnter behind us
    roots = [t.id for t in runtime.tasks.values() if t.kind == TASK_API and t.parent is None]
    if len(roots) > 1:
        raise TraceError("snapshot holds more than one open invocation")
    active_root: int | None = roots[0] if roots else None
    start = sink.position
    while True:
        nxt = sink.peek()
        if nxt is None:
            break
        if nxt.kind == EV_API_ENTER:
            if active_root is not None:
                raise ReplayDivergence(nxt.seq, "invocation begins before the previous one exits")
            args = [decode_canonical(s) for s in nxt.payload["args"]]
            extra = {
                k: v for k, v in nxt.payload.items() if k not in ("api", "args", "invocation")
            }
            active_root = runtime.begin_invocation(
                nxt.payload["api"], args, correlation=nxt.correlation, enter_extra=extra
            )
            continue
        if nxt.kind == EV_API_EXIT:
            if active_root is None or not runtime.tasks[active_root].done():
                raise ReplayDivergence(nxt.seq, "log exits an invocation that is still running")
            results.append(runtime.finish_invocation(active_root))
            active_root = None
            continue
        if nxt.kind == EV_EFFECT_RESPONSE and not runtime.pump():
            delivered = runtime.deliver_effect_response(nxt.payload["task"], dict(nxt.payload))
            if not delivered:
                raise ReplayDivergence(
                    nxt.seq, f"response for task {nxt.payload.get('task')!r} which is not waiting"
                )
            continue
        if nxt.kind != EV_EFFECT_RESPONSE and not runtime.pump():
            raise ReplayDivergence(nxt.seq, "execution stalled before this event")
    if active_root is not None:
        raise ReplayDivergence(len(sink.events), "log ends inside an invocation")
    return ReplayReport(results, sink.position - start)


def _check_program(program: Program, recorded_hash: str) -> None:
    if program_hash(program) != recorded_hash:
        raise ReplayDivergence(
            -1,
            f"program hash mismatch: log recorded {recorded_hash}, "
            f"replaying {program_hash(program)}",
        )


def replay(program: Program, log: ReplayLog | str, node_id: str | None = None) -> ReplayReport:
    """Re-execute a recorded run with zero live handlers.  Every response is
    served from the log and every emission is checked against it."""
    if isinstance(log, str):
        log = parse_trace(log)
    _check_program(program, log.header["program"])
    sink = ReplaySink(log.events)
    runtime = Runtime(
        program,
        registry=CapabilityRegistry(),
        sink=sink,
        config=SchedulerConfig(
            workers=log.header["workers"], mode=MODE_REPLAY, seed=log.header["seed"]
        ),
        node_id=node_id if node_id is not None else log.header["node"],
    )
    return _drive_from_log(runtime, sink)


# ----------------------------------------------------------------------
# Snapshots: heap section + continuation record


def _frame_to_plain(frame: Frame, names: dict[int, str]) -> dict:
    return {
        "fn": frame.fn,
        "cursor": list(frame.cursor),
        "bind_target": frame.bind_target,
        "env": {name: names[h] for name, h in frame.env.items()},
    }


def capture_snapshot(runtime: Runtime, mark_seq: int) -> bytes:
    """Serialize the logical state of a quiescent runtime: every value
    reachable from task frames plus each task's continuation."""
    roots: dict[str, int] = {}
    names: dict[int, str] = {}

    def name_handle(key: str, h: int) -> str:
        if h in names:
            return names[h]
        roots[key] = h
        names[h] = key
        return key

    tasks_plain = []
    for tid in sorted(runtime.tasks):
        task = runtime.tasks[tid]
        if task.kind == TASK_SCRIPT and not task.done():
            raise TraceError("live script tasks are not snapshottable")
        frames = []
        for fi, frame in enumerate(task.frames):
            for var, h in frame.env.items():
                name_handle(f"t{tid}.f{fi}.{var}", h)
            frames.append(_frame_to_plain(frame, names))
        args = [name_handle(f"t{tid}.a{i}", h) for i, h in enumerate(task.arg_handles)]
        result = (
            name_handle(f"t{tid}.r", task.result_handle)
            if task.result_handle is not None
            else None
        )
        tasks_plain.append(
            {
                "id": task.id,
                "parent": task.parent,
                "kind": task.kind,
                "correlation": task.correlation,
                "state": task.state,
                "children": list(task.children),
                "api_name": task.api_name,
                "pending_child": task.pending_child,
                "pending_bind": task.pending_bind,
                "capability": task.capability,
                "operation": task.operation,
                "request_issued": task.request_issued,
                "origin": list(task.origin) if task.origin else None,
                "outcome": task.outcome,
                "failure": failure_to_plain(task.failure) if task.failure else None,
                "frames": frames,
                "args": args,
                "result": result,
            }
        )
    heap_bytes = heapmod.snapshot(runtime.heap, roots)
    continuation = {
        "format": CONTINUATION_FORMAT,
        "gc": {
            "nursery": runtime.heap.config.nursery_bytes,
            "limit": runtime.heap.config.heap_limit_bytes,
        },
        "invocations": runtime.invocations,
        "next_task_id": runtime.next_task_id,
        "node": runtime.node_id,
        "program": runtime.program_hash,
        "seq": mark_seq,
        "steps": runtime.sink.steps,
        "tasks": tasks_plain,
        "turns": runtime.turns,
    }
    return heap_bytes + _canonical_line(continuation).encode("utf-8")


def _split_snapshot(blob: bytes) -> tuple[int, dict]:
    """Locate the heap/continuation boundary and parse the continuation."""
    probe = heapmod.Heap(_PROBE_CONFIG)  # throwaway: find where the heap section ends
    try:
        _, consumed = heapmod.restore_prefix(probe, blob)
    except heapmod.SnapshotFormatError as exc:
        raise SnapshotIncompatible(f"heap section unreadable: {exc}") from None
    try:
        continuation = json.loads(blob[consumed:].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise SnapshotIncompatible(f"continuation section unreadable: {exc}") from None
    if not isinstance(continuation, dict) or continuation.get("format") != CONTINUATION_FORMAT:
        raise SnapshotIncompatible("missing continuation format marker")
    return consumed, continuation


_PROBE_CONFIG = heapmod.GcConfig(heap_limit_bytes=1 << 40, old_gen_decrement_budget=None)


def inflate_snapshot(program: Program, blob: bytes, sink: EventSink, config: SchedulerConfig) -> Runtime:
    """Rebuild a Runtime from a snapshot; the caller supplies the sink that
    will drive it onward."""
    _, continuation = _split_snapshot(blob)
    if continuation["program"] != program_hash(program):
        raise SnapshotIncompatible(
            f"snapshot from program {continuation['program']}, "
            f"resuming {program_hash(program)}"
        )
    runtime = Runtime(
        program,
        registry=CapabilityRegistry(),
        sink=sink,
        config=config,
        gc_config=heapmod.GcConfig(
            nursery_bytes=continuation["gc"]["nursery"],
            heap_limit_bytes=continuation["gc"]["limit"],
        ),
        node_id=continuation["node"],
    )
    roots, _ = heapmod.restore_prefix(runtime.heap, blob)
    for h in roots.values():
        runtime.heap.add_root(h)  # blanket hold while tasks re-root their views
    try:
        for tp in continuation["tasks"]:
            task = Task(
                id=tp["id"],
                parent=tp["parent"],
                kind=tp["kind"],
                correlation=tp["correlation"],
                state=tp["state"],
                children=list(tp["children"]),
                api_name=tp["api_name"],
                pending_child=tp["pending_child"],
                pending_bind=tp["pending_bind"],
                capability=tp["capability"],
                operation=tp["operation"],
                request_issued=tp["request_issued"],
                origin=tuple(tp["origin"]) if tp["origin"] else None,
                outcome=tp["outcome"],
                failure=failure_from_plain(tp["failure"]) if tp["failure"] else None,
            )
            for fp in tp["frames"]:
                env = {}
                for var, key in fp["env"].items():
                    env[var] = roots[key]
                    runtime.heap.add_root(roots[key])
                task.frames.append(
                    Frame(fn=fp["fn"], cursor=list(fp["cursor"]), env=env, bind_target=fp["bind_target"])
                )
            for key in tp["args"]:
                task.arg_handles.append(roots[key])
                runtime.heap.add_root(roots[key])
            if tp["result"] is not None:
                task.result_handle = roots[tp["result"]]
                runtime.heap.add_root(roots[tp["result"]])
            runtime.tasks[task.id] = task
    finally:
        for h in roots.values():
            runtime.heap.drop_root(h)
    runtime.invocations = continuation["invocations"]
    runtime.next_task_id = continuation["next_task_id"]
    runtime.turns = continuation["turns"]
    sink.steps = continuation["steps"]
    return runtime


def snapshot_at(run: RecordedRun, mark_seq: int) -> bytes:
    try:
        return run.log.snapshots[mark_seq]
    except KeyError:
        raise TraceError(f"no snapshot captured at seq {mark_seq}") from None


def resume_from(program: Program, blob: bytes, log: ReplayLog | str) -> ReplayReport:
    """Inflate a snapshot and replay the rest of its log (zero handlers).
    The final results match a full replay of the same log."""
    if isinstance(log, str):
        log = parse_trace(log)
    _check_program(program, log.header["program"])
    probe_cont = _continuation_of(blob)
    mark_seq = probe_cont["seq"]
    if not (0 <= mark_seq < len(log.events)) or log.events[mark_seq].kind != EV_SNAPSHOT_MARK:
        raise SnapshotIncompatible(f"log has no snapshot mark at seq {mark_seq}")
    sink = ReplaySink(log.events, position=mark_seq + 1)
    config = SchedulerConfig(
        workers=log.header["workers"], mode=MODE_REPLAY, seed=log.header["seed"]
    )
    runtime = inflate_snapshot(program, blob, sink, config)
    report = _drive_from_log(runtime, sink)
    return report


def _continuation_of(blob: bytes) -> dict:
    return _split_snapshot(blob)[1]
