"""Tree-walking evaluator with a cooperative task machine.

Execution model:

* every api invocation is one root task; `Task::run` spawns an effect child
  and blocks the caller until the response arrives;
* suspension can only happen between statements: at load time each body is
  rewritten so that effect submissions and action calls appear only as the
  whole right-hand side of a `let` (or a bare expression statement) -- the
  resulting frame stack (function, statement cursor, bindings) is plain data
  and therefore snapshottable;
* pure function calls never suspend (the validator bars effects inside
  them), so they evaluate atomically inside a single statement;
* scheduling decisions flow through an EventSink, which also sees every
  boundary crossing; record, replay, and free modes differ only in the sink.

Every fault becomes a FailureObject; the host process never observes a raw
exception from program execution.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .. import bapi
from ..bapi import (
    CapabilityNotAvailable,
    CapabilityRegistry,
    DEFERRED,
    EnumVal,
    ValidationError,
    conforms,
    decode_canonical,
    encode_canonical,
    from_plain,
    to_plain,
)
from ..heap import INT64_MAX, INT64_MIN, GcConfig, Heap, HeapError, OutOfMemory
from ..lang.ast import (
    BinOp,
    Call,
    Construct,
    Expr,
    ExprStmt,
    FieldAccess,
    FunctionDecl,
    Let,
    Literal,
    LiteralPattern,
    Match,
    MatchArm,
    Program,
    Return,
    Stmt,
    TaskRun,
    VariantPattern,
    VarRef,
    WildcardPattern,
    Yield,
    program_hash,
)
from ..lang.validate import normalize_variant
from . import failures as flt
from .failures import FailureObject, RuntimeFailure, failure_from_plain, failure_to_plain
from .scheduler import (
    BLOCKED,
    DONE,
    READY,
    TASK_API,
    TASK_EFFECT,
    TASK_SCRIPT,
    Frame,
    SchedulerConfig,
    Task,
    choose,
)

MAX_FRAMES = 4096

EV_EFFECT_REQUEST = "EffectRequest"
EV_EFFECT_RESPONSE = "EffectResponse"
EV_SPAWN = "Spawn"
EV_SCHEDULE_CHOICE = "ScheduleChoice"
EV_YIELD = "Yield"
EV_API_ENTER = "ApiEnter"
EV_API_EXIT = "ApiExit"
EV_SNAPSHOT_MARK = "SnapshotMark"

EVENT_KINDS = (
    EV_EFFECT_REQUEST,
    EV_EFFECT_RESPONSE,
    EV_SPAWN,
    EV_SCHEDULE_CHOICE,
    EV_YIELD,
    EV_API_ENTER,
    EV_API_EXIT,
    EV_SNAPSHOT_MARK,
)


class _ResponsePending:
    """Sentinel from effect_response_override: the logged response arrives
    later, keep the task blocked for driver delivery."""

    __slots__ = ()

    def __repr__(self) -> str:  # pragma: no cover
        return "RESPONSE_PENDING"


RESPONSE_PENDING = _ResponsePending()


class EventSink:
    """Free-mode sink: applies the choice policy, records nothing."""

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self.next_seq = 0
        self.steps = 0

    def emit(self, kind: str, correlation: str, payload: dict) -> int:
        seq = self.next_seq
        self.next_seq += 1
        return seq

    def schedule_choice(self, ready_ids: list[int], correlation_of) -> int:
        pick = choose(self.seed, self.steps, ready_ids)
        self.steps += 1
        self.emit(EV_SCHEDULE_CHOICE, correlation_of(pick), {"task": pick})
        return pick

    def effect_response_override(self, task_id: int) -> object | None:
        """Replay sinks peek the log: a payload dict settles the effect now,
        RESPONSE_PENDING keeps it blocked for later delivery.  Live sinks
        return None so the registered handler runs."""
        return None


class InvocationError(Exception):
    """Boundary misuse: unknown api, malformed arguments.  A caller error,
    not a program failure."""


# ----------------------------------------------------------------------
# Load-time lowering


def _suspendable(e: Expr, action_names: frozenset[str]) -> bool:
    return isinstance(e, TaskRun) or (isinstance(e, Call) and e.name in action_names)


class _Lowerer:
    def __init__(self, action_names: frozenset[str]) -> None:
        self.action_names = action_names
        self.counter = 0

    def fresh(self) -> str:
        name = f"$t{self.counter}"
        self.counter += 1
        return name

    def body(self, stmts: tuple[Stmt, ...]) -> tuple[Stmt, ...]:
        out: list[Stmt] = []
        for stmt in stmts:
            out.extend(self.stmt(stmt))
        return tuple(out)

    def stmt(self, stmt: Stmt) -> list[Stmt]:
        if isinstance(stmt, Let):
            prelude, expr = self.expr(stmt.expr, keep_root=True)
            return prelude + [Let(stmt.name, expr, span=stmt.span)]
        if isinstance(stmt, Return):
            prelude, expr = self.expr(stmt.expr, keep_root=False)
            return prelude + [Return(expr, span=stmt.span)]
        if isinstance(stmt, Yield):
            prelude, expr = self.expr(stmt.expr, keep_root=False)
            return prelude + [Yield(expr, span=stmt.span)]
        if isinstance(stmt, ExprStmt):
            prelude, expr = self.expr(stmt.expr, keep_root=True)
            return prelude + [ExprStmt(expr, span=stmt.span)]
        if isinstance(stmt, Match):
            prelude, subject = self.expr(stmt.subject, keep_root=False)
            arms = tuple(
                MatchArm(arm.pattern, self.body(arm.body), span=arm.span) for arm in stmt.arms
            )
            return prelude + [Match(subject, arms, span=stmt.span)]
        raise TypeError(f"unknown statement {stmt!r}")

    def expr(self, e: Expr, keep_root: bool) -> tuple[list[Stmt], Expr]:
        prelude: list[Stmt] = []

        def walk(node: Expr, at_root: bool) -> Expr:
            if isinstance(node, TaskRun):
                rebuilt = TaskRun(
                    node.capability,
                    node.operation,
                    tuple(walk(a, False) for a in node.args),
                    span=node.span,
                )
                if at_root and keep_root:
                    return rebuilt
                name = self.fresh()
                prelude.append(Let(name, rebuilt, span=node.span))
                return VarRef(name, span=node.span)
            if isinstance(node, Call):
                rebuilt = Call(node.name, tuple(walk(a, False) for a in node.args), span=node.span)
                if node.name in self.action_names and not (at_root and keep_root):
                    name = self.fresh()
                    prelude.append(Let(name, rebuilt, span=node.span))
                    return VarRef(name, span=node.span)
                return rebuilt
            if isinstance(node, Construct):
                return Construct(
                    node.type_name,
                    node.variant,
                    tuple((n, walk(a, False)) for n, a in node.args),
                    span=node.span,
                )
            if isinstance(node, FieldAccess):
                return FieldAccess(walk(node.subject, False), node.name, span=node.span)
            if isinstance(node, BinOp):
                lhs = walk(node.lhs, False)
                rhs = walk(node.rhs, False)
                return BinOp(node.op, lhs, rhs, span=node.span)
            return node

        return prelude, walk(e, True)


def lower_program(p: Program) -> Program:
    """Hoist suspension points to statement roots in action/api bodies."""
    action_names = frozenset(d.name for d in p.functions if d.kind == "action")
    functions = []
    for decl in p.functions:
        if decl.kind == "action":
            lw = _Lowerer(action_names)
            decl = FunctionDecl(
                decl.name, decl.kind, decl.params, decl.return_type, lw.body(decl.body), decl.span
            )
        functions.append(decl)
    apis = []
    for decl in p.apis:
        lw = _Lowerer(action_names)
        apis.append(
            FunctionDecl(
                decl.name, decl.kind, decl.params, decl.return_type, lw.body(decl.body), decl.span
            )
        )
    return Program(tuple(functions), tuple(apis), p.imports)


# ----------------------------------------------------------------------
# Cursor navigation


def stmt_at(body: tuple[Stmt, ...], cursor: list[int]) -> Stmt | None:
    """cursor = [i] or [i, arm, j, ...]: statement at the path, None if the
    index has run off the end of its block."""
    stmts = body
    k = 0
    while True:
        i = cursor[k]
        if i >= len(stmts):
            return None
        stmt = stmts[i]
        if k + 1 >= len(cursor):
            return stmt
        arm_idx = cursor[k + 1]
        assert isinstance(stmt, Match)
        stmts = stmt.arms[arm_idx].body
        k += 2


def advance_cursor(body: tuple[Stmt, ...], cursor: list[int]) -> bool:
    """Move to the next statement, popping out of finished match arms.
    Returns False when the whole body is finished."""
    cursor[-1] += 1
    while stmt_at(body, cursor) is None:
        if len(cursor) == 1:
            return False
        del cursor[-2:]
        cursor[-1] += 1
    return True


# ----------------------------------------------------------------------
# The runtime


@dataclass(frozen=True)
class InvocationResult:
    value: object  # plain APIResult-shaped EnumVal
    encoded: str


class _UnwindSignal(Exception):
    def __init__(self, handle: int) -> None:
        self.handle = handle


class Runtime:
    def __init__(
        self,
        program: Program,
        registry: CapabilityRegistry | None = None,
        sink: EventSink | None = None,
        config: SchedulerConfig | None = None,
        gc_config: GcConfig | None = None,
        node_id: str = "local",
        snapshot_turns: frozenset[int] | set[int] = frozenset(),
        snapshot_hook=None,
    ) -> None:
        self.source_program = program
        self.program = lower_program(program)
        self.program_hash = program_hash(program)
        self.decls = {d.name: d for d in self.program.declarations()}
        self.registry = registry or CapabilityRegistry()
        self.config = config or SchedulerConfig()
        self.sink = sink or EventSink(seed=self.config.seed)
        self.heap = Heap(gc_config or GcConfig())
        self.node_id = node_id
        self.tasks: dict[int, Task] = {}
        self.next_task_id = 0
        self.invocations = 0
        self.turns = 0
        self.snapshot_turns = frozenset(snapshot_turns)
        self.snapshot_hook = snapshot_hook

    # -- invocation lifecycle -------------------------------------------

    def mint_correlation(self, api_name: str, encoded_args: list[str]) -> str:
        key = ":".join(
            [self.node_id, self.program_hash, api_name, str(self.invocations), str(self.config.seed)]
            + encoded_args
        )
        return hashlib.sha256(key.encode("utf-8")).hexdigest()[:32]

    def begin_invocation(
        self,
        api_name: str,
        args: list[object],
        correlation: str | None = None,
        enter_extra: dict | None = None,
    ) -> int:
        decl = self.decls.get(api_name)
        if decl is None or decl.kind != "api":
            raise InvocationError(f"no api named {api_name!r}")
        if len(args) != len(decl.params):
            raise InvocationError(
                f"api {api_name!r} takes {len(decl.params)} arguments, got {len(args)}"
            )
        for plain, (pname, ptype) in zip(args, decl.params):
            try:
                conforms(plain, ptype)
            except ValidationError as exc:
                raise InvocationError(f"argument {pname!r}: {exc}") from None
        encoded_args = [encode_canonical(a) for a in args]
        if correlation is None:
            correlation = self.mint_correlation(api_name, encoded_args)
        mark = len(self.heap.temp_roots)
        handles = []
        for plain in args:
            h = from_plain(self.heap, plain)
            self.heap.temp_roots.append(h)
            handles.append(h)
        task = self._new_task(TASK_API, parent=None, correlation=correlation)
        task.api_name = api_name
        env: dict[str, int] = {}
        frame = Frame(fn=api_name, cursor=[0], env=env, bind_target=None)
        task.frames.append(frame)
        for (pname, _), h in zip(decl.params, handles):
            self._bind(frame, pname, h)
        del self.heap.temp_roots[mark:]
        payload = {"api": api_name, "args": encoded_args, "invocation": self.invocations}
        if enter_extra:
            payload.update(enter_extra)
        self.invocations += 1
        self.sink.emit(EV_API_ENTER, correlation, payload)
        return task.id

    def finish_invocation(self, task_id: int) -> InvocationResult:
        task = self.tasks[task_id]
        assert task.done(), "invocation still running"
        if task.outcome == "failure":
            plain: object = EnumVal("APIResult", "Error", failure_to_plain(task.failure))
        else:
            plain = to_plain(self.heap, task.result_handle)
            if not (isinstance(plain, EnumVal) and plain.enum_name == "APIResult" and plain.variant in ("Success", "Error")):
                failure = FailureObject(
                    flt.LOGIC_ERROR,
                    "api produced a non-APIResult value",
                    (task.api_name or "?", 0),
                )
                plain = EnumVal("APIResult", "Error", failure_to_plain(failure))
        encoded = encode_canonical(plain)
        self.sink.emit(EV_API_EXIT, task.correlation, {"api": task.api_name, "result": encoded})
        self._release_task_tree(task_id)
        return InvocationResult(plain, encoded)

    def evaluate(self, api_name: str, args: list[object], correlation: str | None = None) -> InvocationResult:
        """Run one api invocation to completion (no deferred effects)."""
        tid = self.begin_invocation(api_name, args, correlation)
        self.pump()
        task = self.tasks[tid]
        if not task.done():
            raise AssertionError("invocation stalled: deferred effects without a driver")
        return self.finish_invocation(tid)

    # -- task plumbing ---------------------------------------------------

    def _new_task(self, kind: str, parent: int | None, correlation: str) -> Task:
        task = Task(id=self.next_task_id, parent=parent, kind=kind, correlation=correlation)
        self.next_task_id += 1
        self.tasks[task.id] = task
        if parent is not None:
            self.tasks[parent].children.append(task.id)
        return task

    def spawn_effect_child(
        self,
        parent: Task,
        capability: str,
        operation: str,
        arg_handles: list[int],
        origin: tuple[str, int],
    ) -> Task:
        child = self._new_task(TASK_EFFECT, parent.id, parent.correlation)
        child.capability = capability
        child.operation = operation
        child.origin = origin
        for h in arg_handles:
            self.heap.add_root(h)
        child.arg_handles = list(arg_handles)
        self.sink.emit(
            EV_SPAWN, child.correlation, {"task": child.id, "parent": parent.id, "kind": TASK_EFFECT}
        )
        return child

    def spawn_script_child(self, parent_id: int, script) -> Task:
        """Test scaffolding: attach a cooperative child driven one step per
        turn.  Scripts participate in structured join and cancellation but
        never touch the effect boundary."""
        parent = self.tasks[parent_id]
        child = self._new_task(TASK_SCRIPT, parent.id, parent.correlation)
        child.script = script
        self.sink.emit(
            EV_SPAWN, child.correlation, {"task": child.id, "parent": parent.id, "kind": TASK_SCRIPT}
        )
        return child

    def _bind(self, frame: Frame, name: str, handle: int) -> None:
        old = frame.env.get(name)
        self.heap.add_root(handle)
        if old is not None:
            self.heap.drop_root(old)
        frame.env[name] = handle

    def _pop_frame(self, task: Task) -> Frame:
        frame = task.frames.pop()
        for h in frame.env.values():
            self.heap.drop_root(h)
        return frame

    def _complete(self, task: Task, outcome: str, handle: int | None, failure: FailureObject | None) -> None:
        while task.frames:
            self._pop_frame(task)
        for h in task.arg_handles:
            self.heap.drop_root(h)
        task.arg_handles = []
        if handle is not None:
            self.heap.add_root(handle)
        task.state = DONE
        task.outcome = outcome
        task.result_handle = handle
        task.failure = failure
        if outcome in ("failure", "unwind"):
            self._cancel_descendants(task)
        parent_id = task.parent
        if parent_id is not None:
            parent = self.tasks[parent_id]
            if parent.state == BLOCKED and (
                parent.pending_child == task.id or self._join_satisfied(parent)
            ):
                parent.state = READY

    def _join_satisfied(self, parent: Task) -> bool:
        return all(self.tasks[c].done() for c in parent.children)

    def _cancel_descendants(self, task: Task) -> None:
        for child_id in task.children:
            child = self.tasks[child_id]
            if child.done():
                continue
            self._cancel_descendants(child)
            if child.kind == TASK_EFFECT and child.request_issued:
                self.sink.emit(
                    EV_EFFECT_RESPONSE,
                    child.correlation,
                    {"task": child.id, "status": "cancelled"},
                )
            for h in child.arg_handles:
                self.heap.drop_root(h)
            child.arg_handles = []
            while child.frames:
                self._pop_frame(child)
            child.state = DONE
            child.outcome = "failure"
            child.failure = FailureObject(
                flt.EFFECT_ERROR, "cancelled by unwind", (task.api_name or "?", 0)
            )

    def _release_task_tree(self, root_id: int) -> None:
        # Called once the invocation result has been copied out; drops result
        # roots so the heap returns to its pre-invocation live set.
        stack = [root_id]
        while stack:
            tid = stack.pop()
            task = self.tasks.pop(tid, None)
            if task is None:
                continue
            if task.result_handle is not None and self.heap.contains(task.result_handle):
                self.heap.drop_root(task.result_handle)
                task.result_handle = None
            stack.extend(task.children)

    def live_tasks(self) -> list[Task]:
        return [t for t in self.tasks.values() if not t.done()]

    def deferred_tasks(self) -> list[Task]:
        return [
            t
            for t in self.tasks.values()
            if t.kind == TASK_EFFECT and t.state == BLOCKED and t.request_issued and not t.done()
        ]

    # -- the drive loop ---------------------------------------------------

    def quiescent(self) -> bool:
        """True when no task is mid-effect: every live task sits at a
        statement boundary, so logical state is fully snapshottable."""
        return not any(
            t.kind == TASK_EFFECT and t.request_issued and not t.done()
            for t in self.tasks.values()
        )

    def pump(self) -> bool:
        """Run turns until no task is ready.  Returns True if anything ran."""
        progressed = False
        while True:
            ready = sorted(t.id for t in self.tasks.values() if t.state == READY)
            if not ready:
                return progressed
            if self.turns in self.snapshot_turns and self.quiescent():
                seq = self.sink.emit(
                    EV_SNAPSHOT_MARK,
                    self.tasks[ready[0]].correlation,
                    {"turn": self.turns},
                )
                if self.snapshot_hook is not None:
                    self.snapshot_hook(self, seq)
            batch: list[int] = []
            remaining = list(ready)
            for _ in range(min(self.config.workers, len(remaining))):
                pick = self.sink.schedule_choice(
                    remaining, lambda tid: self.tasks[tid].correlation
                )
                if pick not in remaining:
                    raise AssertionError("scheduler picked a non-ready task")
                remaining.remove(pick)
                batch.append(pick)
            self.turns += 1
            for tid in batch:
                task = self.tasks[tid]
                if task.state != READY:
                    continue  # cancelled or blocked by an earlier batch member
                progressed = True
                self._run_turn(task)

    def _run_turn(self, task: Task) -> None:
        if task.kind == TASK_EFFECT:
            self._run_effect_task(task)
        elif task.kind == TASK_SCRIPT:
            self._run_script_task(task)
        else:
            self._run_api_task(task)

    # -- effect tasks ------------------------------------------------------

    def _run_effect_task(self, task: Task) -> None:
        encoded_args = [bapi.encode_handle(self.heap, h) for h in task.arg_handles]
        task.request_issued = True
        self.sink.emit(
            EV_EFFECT_REQUEST,
            task.correlation,
            {
                "task": task.id,
                "capability": task.capability,
                "operation": task.operation,
                "args": encoded_args,
            },
        )
        override = self.sink.effect_response_override(task.id)
        if override is RESPONSE_PENDING:
            task.state = BLOCKED  # logged response arrives later in the log
            return
        if override is not None:
            self._settle_effect(task, override, emit=True)
            return
        payload = self._invoke_handler(task, encoded_args)
        if payload is None:
            task.state = BLOCKED  # deferred: a driver will deliver later
            return
        self._settle_effect(task, payload, emit=True)

    def _invoke_handler(self, task: Task, encoded_args: list[str]) -> dict | None:
        origin = task.origin or (task.capability or "?", 0)
        try:
            sig, handler = self.registry.lookup(task.capability, task.operation)
        except CapabilityNotAvailable as exc:
            return self._fail_payload(flt.EFFECT_ERROR, f"capability not available: {exc}", origin)
        plain_args = tuple(decode_canonical(e) for e in encoded_args)
        if len(plain_args) != len(sig.params):
            return self._fail_payload(
                flt.EFFECT_ERROR,
                f"{task.capability}::{task.operation} takes {len(sig.params)} arguments, got {len(plain_args)}",
                origin,
            )
        for i, (plain, ptype) in enumerate(zip(plain_args, sig.params)):
            try:
                conforms(plain, ptype)
            except ValidationError as exc:
                return self._fail_payload(
                    flt.EFFECT_ERROR, f"argument {i} validation: {exc}", origin
                )
        try:
            response = handler(task.operation, plain_args)
        except Exception as exc:  # noqa: BLE001 -- boundary converts all faults
            return self._fail_payload(
                flt.EFFECT_ERROR, f"handler raised {type(exc).__name__}: {exc}", origin
            )
        if isinstance(response, type(DEFERRED)) or response is DEFERRED:
            return None
        try:
            conforms(response, sig.response)
        except ValidationError as exc:
            return self._fail_payload(flt.EFFECT_ERROR, f"response validation: {exc}", origin)
        return {"task": task.id, "status": "ok", "value": encode_canonical(response)}

    def _fail_payload(self, kind: str, message: str, origin: tuple[str, int]) -> dict:
        failure = FailureObject(kind, message, origin)
        return {"task": None, "status": "fail", "failure": failure_to_plain(failure)}

    def _settle_effect(self, task: Task, payload: dict, emit: bool) -> None:
        payload = dict(payload)
        payload["task"] = task.id
        if emit:
            self.sink.emit(EV_EFFECT_RESPONSE, task.correlation, payload)
        status = payload.get("status")
        if status == "ok":
            plain = decode_canonical(payload["value"])
            # no allocation happens between construction and the add_root
            # inside _complete, so the fresh handle cannot be swept
            handle = from_plain(self.heap, plain)
            self._complete(task, "success", handle, None)
        elif status == "fail":
            failure = failure_from_plain(payload["failure"])
            self._complete(task, "failure", None, failure)
        else:
            failure = FailureObject(
                flt.EFFECT_ERROR, "cancelled by unwind", (task.capability or "?", 0)
            )
            self._complete(task, "failure", None, failure)

    def deliver_effect_response(self, task_id: int, payload: dict) -> bool:
        """External driver delivery for a deferred effect.  Returns False if
        the task is no longer waiting (cancelled runs ignore deliveries)."""
        task = self.tasks.get(task_id)
        if task is None or task.done() or task.kind != TASK_EFFECT or not task.request_issued:
            return False
        self._settle_effect(task, payload, emit=True)
        return True

    # -- script tasks -------------------------------------------------------

    def _run_script_task(self, task: Task) -> None:
        try:
            directive = next(task.script)
        except StopIteration:
            self._complete(task, "success", self.heap.unit(), None)
            return
        except Exception as exc:  # noqa: BLE001
            failure = FailureObject(flt.LOGIC_ERROR, f"script raised {type(exc).__name__}: {exc}", ("<script>", 0))
            self._complete(task, "failure", None, failure)
            return
        if directive == "block":
            task.state = BLOCKED

    # -- api tasks ----------------------------------------------------------

    def _run_api_task(self, task: Task) -> None:
        try:
            self._consume_pending(task)
            while task.frames:
                frame = task.frames[-1]
                decl = self.decls[frame.fn]
                stmt = stmt_at(decl.body, frame.cursor)
                if stmt is None:
                    self._return_value(task, self.heap.unit(), implicit=True)
                    continue
                if not self._exec_stmt(task, frame, decl, stmt):
                    return  # suspended
            # all frames gone and no completion happened: nothing to do
        except _JoinWait:
            return
        except _UnwindSignal as sig:
            self._unwind(task, sig.handle)
        except RuntimeFailure as exc:
            self._complete(task, "failure", None, exc.failure)
        except OutOfMemory as exc:
            failure = FailureObject(flt.OUT_OF_MEMORY, str(exc), self._origin_of(task))
            self._complete(task, "failure", None, failure)
        except RecursionError:
            failure = FailureObject(
                flt.LOGIC_ERROR, "call depth exceeded", self._origin_of(task)
            )
            self._complete(task, "failure", None, failure)
        except HeapError as exc:
            failure = FailureObject(flt.LOGIC_ERROR, f"heap fault: {exc}", self._origin_of(task))
            self._complete(task, "failure", None, failure)
        finally:
            self.heap.temp_roots.clear()

    def _origin_of(self, task: Task) -> tuple[str, int]:
        if task.frames:
            frame = task.frames[-1]
            return (frame.fn, frame.cursor[-1])
        return (task.api_name or "?", 0)

    def _consume_pending(self, task: Task) -> None:
        if task.pending_child is None:
            return
        child = self.tasks[task.pending_child]
        if not child.done():
            task.state = BLOCKED
            raise AssertionError("resumed with pending child still running")
        task.pending_child = None
        bind_name = task.pending_bind
        task.pending_bind = None
        if child.outcome == "failure":
            raise RuntimeFailure(child.failure)
        if bind_name is not None and task.frames:
            self._bind(task.frames[-1], bind_name, child.result_handle)
        frame = task.frames[-1]
        decl = self.decls[frame.fn]
        if not advance_cursor(decl.body, frame.cursor):
            # effect was the last statement of the body
            pass

    def _exec_stmt(self, task: Task, frame: Frame, decl: FunctionDecl, stmt: Stmt) -> bool:
        """Returns False if the task suspended (frame cursor untouched)."""
        self.heap.temp_roots.clear()
        if isinstance(stmt, Let):
            if isinstance(stmt.expr, TaskRun):
                return self._begin_effect(task, frame, stmt.expr, bind=stmt.name)
            if isinstance(stmt.expr, Call) and self._is_action(stmt.expr.name):
                self._push_action_call(task, frame, stmt.expr, bind=stmt.name)
                return True
            h = self._eval(frame.env, stmt.expr, frame.fn)
            self._bind(frame, stmt.name, h)
            self._advance(task, frame, decl)
            return True
        if isinstance(stmt, ExprStmt):
            if isinstance(stmt.expr, TaskRun):
                return self._begin_effect(task, frame, stmt.expr, bind=None)
            if isinstance(stmt.expr, Call) and self._is_action(stmt.expr.name):
                self._push_action_call(task, frame, stmt.expr, bind=None)
                return True
            self._eval(frame.env, stmt.expr, frame.fn)
            self._advance(task, frame, decl)
            return True
        if isinstance(stmt, Return):
            h = self._eval(frame.env, stmt.expr, frame.fn)
            self._return_value(task, h, implicit=False)
            return True
        if isinstance(stmt, Yield):
            h = self._eval(frame.env, stmt.expr, frame.fn)
            self.sink.emit(
                EV_YIELD,
                task.correlation,
                {"task": task.id, "value": bapi.encode_handle(self.heap, h)},
            )
            raise _UnwindSignal(h)
        if isinstance(stmt, Match):
            subject = self._eval(frame.env, stmt.subject, frame.fn)
            arm_idx = self._select_arm(subject, stmt, frame.fn)
            if stmt.arms[arm_idx].body:
                frame.cursor.extend([arm_idx, 0])
            else:
                self._advance(task, frame, decl)
            return True
        raise TypeError(f"unknown statement {stmt!r}")

    def _advance(self, task: Task, frame: Frame, decl: FunctionDecl) -> None:
        if not advance_cursor(decl.body, frame.cursor):
            self._return_value(task, self.heap.unit(), implicit=True)

    def _is_action(self, name: str) -> bool:
        d = self.decls.get(name)
        return d is not None and d.kind == "action"

    def _begin_effect(self, task: Task, frame: Frame, expr: TaskRun, bind: str | None) -> bool:
        args = [self._eval(frame.env, a, frame.fn) for a in expr.args]
        child = self.spawn_effect_child(
            task, expr.capability, expr.operation, args, origin=(frame.fn, frame.cursor[-1])
        )
        task.pending_child = child.id
        task.pending_bind = bind
        task.state = BLOCKED
        return False

    def _push_action_call(self, task: Task, frame: Frame, expr: Call, bind: str | None) -> None:
        if len(task.frames) >= MAX_FRAMES:
            raise RuntimeFailure(
                FailureObject(flt.LOGIC_ERROR, "call depth exceeded", (frame.fn, frame.cursor[-1]))
            )
        target = self.decls[expr.name]
        args = [self._eval(frame.env, a, frame.fn) for a in expr.args]
        callee = Frame(fn=expr.name, cursor=[0], env={}, bind_target=bind)
        task.frames.append(callee)
        for (pname, _), h in zip(target.params, args):
            self._bind(callee, pname, h)

    def _return_value(self, task: Task, handle: int, implicit: bool) -> None:
        frame = task.frames[-1]
        decl = self.decls[frame.fn]
        if decl.kind == "api" and len(task.frames) == 1:
            if implicit:
                raise RuntimeFailure(
                    FailureObject(
                        flt.LOGIC_ERROR,
                        f"api '{decl.name}' ended without a result",
                        (decl.name, frame.cursor[-1] if frame.cursor else 0),
                    )
                )
            if not self._join_satisfied(task):
                # structured join: the parent waits for every child before
                # completing; the cursor stays on the return statement so
                # the (pure) result expression re-evaluates on resume
                task.state = BLOCKED
                raise _JoinWait()
            self._complete(task, "success", handle, None)
            self._pop_all(task)
            return
        self.heap.temp_roots.append(handle)
        finished = self._pop_frame(task)
        if task.frames:
            if finished.bind_target is not None:
                self._bind(task.frames[-1], finished.bind_target, handle)
            caller = task.frames[-1]
            caller_decl = self.decls[caller.fn]
            if not advance_cursor(caller_decl.body, caller.cursor):
                self._return_value(task, self.heap.unit(), implicit=True)

    def _pop_all(self, task: Task) -> None:
        while task.frames:
            self._pop_frame(task)

    def _unwind(self, task: Task, handle: int) -> None:
        self.heap.temp_roots.append(handle)
        self._complete(task, "unwind", handle, None)

    def _select_arm(self, subject: int, stmt: Match, fn: str) -> int:
        heap = self.heap
        for i, arm in enumerate(stmt.arms):
            p = arm.pattern
            if isinstance(p, WildcardPattern):
                return i
            if isinstance(p, VariantPattern):
                if heap.tag(subject) == 7:  # TAG_ENUM
                    name, variant, _ = heap.enum_parts(subject)
                    if name == p.enum_name and variant == normalize_variant(p.enum_name, p.variant):
                        return i
                continue
            if isinstance(p, LiteralPattern):
                lit = from_plain(heap, p.value)
                heap.temp_roots.append(lit)
                if heap.structural_equal(subject, lit):
                    return i
        raise RuntimeFailure(
            FailureObject(
                flt.MATCH_NON_EXHAUSTIVE,
                "no match arm matched the subject value",
                (fn, stmt.span.line),
            )
        )

    # -- expression evaluation (pure, atomic) -------------------------------

    def _eval(self, env: dict[str, int], expr: Expr, fn: str) -> int:
        heap = self.heap
        if isinstance(expr, Literal):
            h = from_plain(heap, expr.value)
            heap.temp_roots.append(h)
            return h
        if isinstance(expr, VarRef):
            h = env.get(expr.name)
            if h is None:
                raise RuntimeFailure(
                    FailureObject(flt.LOGIC_ERROR, f"unbound name '{expr.name}'", (fn, 0))
                )
            return h
        if isinstance(expr, Call):
            target = self.decls.get(expr.name)
            if target is None or target.kind == "api":
                raise RuntimeFailure(
                    FailureObject(flt.LOGIC_ERROR, f"no callable named '{expr.name}'", (fn, 0))
                )
            if target.kind == "action":
                raise RuntimeFailure(
                    FailureObject(
                        flt.LOGIC_ERROR,
                        f"action '{expr.name}' called in a pure evaluation context",
                        (fn, 0),
                    )
                )
            args = [self._eval(env, a, fn) for a in expr.args]
            return self._eval_pure_call(target, args)
        if isinstance(expr, TaskRun):
            raise RuntimeFailure(
                FailureObject(
                    flt.LOGIC_ERROR, "effect in a pure evaluation context", (fn, 0)
                )
            )
        if isinstance(expr, Construct):
            if expr.type_name == "List":
                items = []
                for _, a in expr.args:
                    h = self._eval(env, a, fn)
                    heap.temp_roots.append(h)
                    items.append(h)
                out = heap.list_(items)
            elif expr.type_name == "Record":
                fields = []
                for name, a in expr.args:
                    h = self._eval(env, a, fn)
                    heap.temp_roots.append(h)
                    fields.append((name, h))
                out = heap.record(fields)
            else:
                variant = normalize_variant(expr.type_name, expr.variant or "")
                payload = self._eval(env, expr.args[0][1], fn) if expr.args else None
                if payload is not None:
                    heap.temp_roots.append(payload)
                out = heap.enum(expr.type_name, variant, payload)
            heap.temp_roots.append(out)
            return out
        if isinstance(expr, FieldAccess):
            subject = self._eval(env, expr.subject, fn)
            tag = heap.tag(subject)
            if tag == 6:  # TAG_RECORD
                for k, v in heap.record_fields(subject):
                    if k == expr.name:
                        return v
                raise RuntimeFailure(
                    FailureObject(flt.LOGIC_ERROR, f"record has no field '{expr.name}'", (fn, 0))
                )
            if tag == 7:  # TAG_ENUM
                if expr.name == "value":
                    return heap.enum_parts(subject)[2]
                raise RuntimeFailure(
                    FailureObject(
                        flt.LOGIC_ERROR, f"enum payload is '.value', not '.{expr.name}'", (fn, 0)
                    )
                )
            raise RuntimeFailure(
                FailureObject(flt.LOGIC_ERROR, "field access on a non-composite value", (fn, 0))
            )
        if isinstance(expr, BinOp):
            return self._eval_binop(env, expr, fn)
        raise TypeError(f"unknown expression {expr!r}")

    def _eval_pure_call(self, decl: FunctionDecl, args: list[int]) -> int:
        heap = self.heap
        if len(args) != len(decl.params):
            raise RuntimeFailure(
                FailureObject(
                    flt.LOGIC_ERROR,
                    f"'{decl.name}' takes {len(decl.params)} arguments, got {len(args)}",
                    (decl.name, 0),
                )
            )
        env = {pname: h for (pname, _), h in zip(decl.params, args)}
        result = self._exec_pure_body(decl, decl.body, env)
        if result is None:
            return heap.unit()
        return result

    def _exec_pure_body(self, decl: FunctionDecl, body: tuple[Stmt, ...], env: dict[str, int]) -> int | None:
        for idx, stmt in enumerate(body):
            if isinstance(stmt, Let):
                h = self._eval(env, stmt.expr, decl.name)
                env[stmt.name] = h
            elif isinstance(stmt, Return):
                return self._eval(env, stmt.expr, decl.name)
            elif isinstance(stmt, ExprStmt):
                self._eval(env, stmt.expr, decl.name)
            elif isinstance(stmt, Match):
                subject = self._eval(env, stmt.subject, decl.name)
                arm_idx = self._select_arm(subject, stmt, decl.name)
                inner = self._exec_pure_body(decl, stmt.arms[arm_idx].body, env)
                if inner is not None:
                    return inner
            elif isinstance(stmt, Yield):
                raise RuntimeFailure(
                    FailureObject(
                        flt.LOGIC_ERROR, "yield in a pure evaluation context", (decl.name, idx)
                    )
                )
        return None

    def _eval_binop(self, env: dict[str, int], expr: BinOp, fn: str) -> int:
        heap = self.heap
        lh = self._eval(env, expr.lhs, fn)
        rh = self._eval(env, expr.rhs, fn)
        op = expr.op
        if op in ("==", "!="):
            equal = heap.structural_equal(lh, rh)
            out = heap.boolean(equal if op == "==" else not equal)
            heap.temp_roots.append(out)
            return out
        ltag = heap.tag(lh)
        rtag = heap.tag(rh)
        if op == "+" and ltag == 3 and rtag == 3:  # TAG_STRING
            out = heap.string(heap.scalar(lh) + heap.scalar(rh))  # type: ignore[operator]
            heap.temp_roots.append(out)
            return out
        if ltag != 2 or rtag != 2:  # TAG_INT64
            raise RuntimeFailure(
                FailureObject(
                    flt.LOGIC_ERROR, f"operator '{op}' needs integer operands", (fn, 0)
                )
            )
        a: int = heap.scalar(lh)  # type: ignore[assignment]
        b: int = heap.scalar(rh)  # type: ignore[assignment]
        if op in ("<", "<=", ">", ">="):
            table = {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}
            out = heap.boolean(table[op])
            heap.temp_roots.append(out)
            return out
        if op == "+":
            n = a + b
        elif op == "-":
            n = a - b
        elif op == "*":
            n = a * b
        elif op == "/":
            if b == 0:
                raise RuntimeFailure(
                    FailureObject(flt.LOGIC_ERROR, "division by zero", (fn, 0))
                )
            n = -(-a // b) if (a < 0) != (b < 0) else a // b  # truncate toward zero
        else:
            raise RuntimeFailure(
                FailureObject(flt.LOGIC_ERROR, f"unknown operator '{op}'", (fn, 0))
            )
        if not (INT64_MIN <= n <= INT64_MAX):
            raise RuntimeFailure(
                FailureObject(
                    flt.OVERFLOW, f"integer overflow in '{op}'", (fn, 0)
                )
            )
        out = heap.int64(n)
        heap.temp_roots.append(out)
        return out


class _JoinWait(Exception):
    """Raised to suspend an api task that must join children first."""
