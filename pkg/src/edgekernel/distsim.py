"""Multi-node deployment simulator on virtual time.

Every node runs the same program under its own heap, registry, and recording
sink; nodes differ only by resource profile.  Cross-node api calls leave a
caller through the `Rpc` capability, travel as JSON-RPC envelopes over a
modeled network (deterministic latency, scripted drop/duplicate faults), and
start a fresh root task on the callee that inherits the caller's correlation
id.  The driver is a single discrete-event loop, so two runs of one scenario
produce byte-identical logs, and the gathered per-node logs replay locally
with no network at all.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import trace as tracemod
from .bapi import (
    APIRESULT_ANY,
    CapabilityPackage,
    CapabilityRegistry,
    DEFERRED,
    OperationSig,
    clock_handler,
    CLOCK_PACKAGE,
    FS_PACKAGE,
    KV_PACKAGE,
    decode_canonical,
    encode_canonical,
    fs_handler,
    kv_handler,
    to_plain,
)
from .heap import MIN_NURSERY_BYTES, GcConfig
from .lang.ast import Program, TypeExpr, program_hash
from .runtime import failures as flt
from .runtime.failures import failure_to_plain, FailureObject
from .runtime.interp import Runtime
from .runtime.scheduler import MODE_RECORD, SchedulerConfig

SCENARIO_FORMAT = "EKSCENARIO1"

RPC_PACKAGE = CapabilityPackage(
    "Rpc",
    (
        OperationSig(
            "Call",
            params=(
                TypeExpr("String"),
                TypeExpr("List", (TypeExpr("Any"),)),
            ),
            response=APIRESULT_ANY,
        ),
    ),
)


def rpc_handler(operation: str, args: tuple) -> object:
    """Cross-node calls never resolve locally; the driver delivers later."""
    return DEFERRED


class ScenarioError(Exception):
    pass


class RouteToMissingApi(ScenarioError):
    pass


PROFILES = {
    "embedded": {"nursery": MIN_NURSERY_BYTES, "workers": 1},
    "server": {"nursery": 4 * 1024 * 1024, "workers": 4},
}


@dataclass(frozen=True)
class NodeConfig:
    node_id: str
    profile: str = "embedded"
    workers: int | None = None  # server default comes from the profile
    capabilities: dict = field(default_factory=dict)  # package name -> initial state

    def gc_config(self) -> GcConfig:
        if self.profile not in PROFILES:
            raise ScenarioError(f"unknown profile {self.profile!r}")
        nursery = PROFILES[self.profile]["nursery"]
        return GcConfig(nursery_bytes=nursery, heap_limit_bytes=max(64 * 1024 * 1024, 2 * nursery))

    def worker_count(self) -> int:
        if self.workers is not None:
            return self.workers
        return PROFILES[self.profile]["workers"]


@dataclass(frozen=True)
class Topology:
    nodes: tuple[NodeConfig, ...]
    routes: dict  # (caller node id, api name) -> callee node id

    def node(self, node_id: str) -> NodeConfig:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise ScenarioError(f"unknown node {node_id!r}")


@dataclass(frozen=True)
class NetworkModel:
    base_latency: int = 5
    latency_spread: int = 0  # delay = base + (message index % (spread+1))
    per_route: dict = field(default_factory=dict)  # (src, dst) -> base override
    timeout_after: int = 1000
    faults: dict = field(default_factory=dict)  # message index -> "drop" | "duplicate"

    def latency(self, src: str, dst: str, index: int) -> int:
        base = self.per_route.get((src, dst), self.base_latency)
        if self.latency_spread:
            return base + index % (self.latency_spread + 1)
        return base

    def fault(self, index: int) -> str | None:
        return self.faults.get(index)


@dataclass(frozen=True)
class Scenario:
    source: str
    topology: Topology
    network: NetworkModel
    invocations: tuple  # of (at, node id, api, args-plain tuple)
    seed: int = 0


STOCK_HANDLERS = {
    "Fs": (FS_PACKAGE, lambda state: fs_handler(dict(state))),
    "Kv": (KV_PACKAGE, lambda state: kv_handler(dict(state))),
    "Clock": (CLOCK_PACKAGE, lambda state: clock_handler()),
}


def build_registry(config: NodeConfig) -> CapabilityRegistry:
    registry = CapabilityRegistry()
    registry.register(RPC_PACKAGE, rpc_handler)
    for name, state in sorted(config.capabilities.items()):
        if name == "Rpc":
            continue
        if name not in STOCK_HANDLERS:
            raise ScenarioError(f"node {config.node_id!r}: unknown capability {name!r}")
        package, factory = STOCK_HANDLERS[name]
        if name == "Fs":
            state = {k: _file_bytes(v) for k, v in state.items()}
        registry.register(package, factory(state))
    return registry


def _file_bytes(v: object) -> bytes:
    if isinstance(v, bytes):
        return v
    if isinstance(v, str):
        return v.encode("utf-8")
    raise ScenarioError("file contents must be text or bytes")


# ----------------------------------------------------------------------
# Deployment


class Node:
    def __init__(self, config: NodeConfig, program: Program, seed: int) -> None:
        self.config = config
        self.sink = tracemod.RecordSink(seed=seed)
        self.runtime = Runtime(
            program,
            registry=build_registry(config),
            sink=self.sink,
            config=SchedulerConfig(
                workers=config.worker_count(), mode=MODE_RECORD, seed=seed
            ),
            gc_config=config.gc_config(),
            node_id=config.node_id,
        )
        self.queue: list[tuple] = []  # pending invocations (api, args, corr, reply_to, extra)
        self.active: tuple[int, object] | None = None  # (root task id, reply_to)
        self.results: list = []  # external invocation results, in order
        self.seed = seed

    def trace_text(self, program: Program) -> str:
        header = tracemod.make_header(
            program, self.config.node_id, self.config.worker_count(), self.seed
        )
        return tracemod.render_trace(header, self.sink.events)


class System:
    def __init__(self, program: Program, topology: Topology, seed: int = 0) -> None:
        api_names = {d.name for d in program.apis}
        for (caller, api), callee in sorted(topology.routes.items()):
            topology.node(caller)
            topology.node(callee)
            if api not in api_names:
                raise RouteToMissingApi(f"route ({caller!r}, {api!r}) targets a missing api")
        self.program = program
        self.topology = topology
        self.nodes = {n.node_id: Node(n, program, seed) for n in topology.nodes}
        self.seed = seed


def deploy(program: Program, topology: Topology, seed: int = 0) -> System:
    """Instantiate one runtime per node, all running the identical program."""
    return System(program, topology, seed)


# ----------------------------------------------------------------------
# The discrete-event driver


@dataclass
class SystemRun:
    system: System
    clock_end: int
    messages_sent: int
    node_traces: dict  # node id -> .ektrace text
    node_results: dict  # node id -> list of canonical result strings
    timeline: list  # merged event rows


class _Driver:
    def __init__(self, system: System, network: NetworkModel) -> None:
        self.system = system
        self.network = network
        self.clock = 0
        self.events: list[tuple[int, int, tuple]] = []  # (time, tiebreak, action)
        self.counter = 0
        self.message_index = 0
        self.dispatched: set[tuple[str, int]] = set()  # (node, effect task id)

    def schedule(self, at: int, action: tuple) -> None:
        heapq.heappush(self.events, (at, self.counter, action))
        self.counter += 1

    def run(self, invocations: tuple) -> tuple[int, int]:
        for at, node_id, api, args in invocations:
            self.schedule(at, ("invoke", node_id, api, tuple(args)))
        last_effective = 0
        while self.events:
            at, _, action = heapq.heappop(self.events)
            self.clock = max(self.clock, at)
            if self._apply(action):
                last_effective = max(last_effective, self.clock)
            self._sweep()
        # A timer or duplicate arriving after its task settled is a no-op;
        # the run ends at the last event that changed any node's state.
        return last_effective, self.message_index

    def _apply(self, action: tuple) -> bool:
        kind = action[0]
        node = self.system.nodes[action[1]]
        effective = True
        if kind == "invoke":
            _, _, api, args = action
            node.queue.append((api, list(args), None, None, None))
        elif kind == "deliver_request":
            _, _, envelope, correlation, reply_to = action
            args = [decode_canonical(p) for p in envelope["params"]]
            extra = {"origin_node": reply_to[0], "rpc_id": envelope["id"]}
            node.queue.append((envelope["method"], args, correlation, reply_to, extra))
        elif kind == "deliver_response":
            _, _, task_id, payload = action
            effective = node.runtime.deliver_effect_response(task_id, payload)
        elif kind == "timeout":
            _, _, task_id = action
            failure = FailureObject(
                flt.TIMEOUT,
                "no response before the virtual deadline",
                ("Rpc::Call", 0),
            )
            effective = node.runtime.deliver_effect_response(
                task_id, {"status": "fail", "failure": failure_to_plain(failure)}
            )
        else:  # pragma: no cover
            raise AssertionError(f"unknown action {kind!r}")
        self._progress(node)
        return effective

    def _progress(self, node: Node) -> None:
        while True:
            if node.active is None and node.queue:
                api, args, corr, reply_to, extra = node.queue.pop(0)
                tid = node.runtime.begin_invocation(api, args, corr, extra)
                node.active = (tid, reply_to)
            node.runtime.pump()
            if node.active is not None:
                tid, reply_to = node.active
                if node.runtime.tasks[tid].done():
                    result = node.runtime.finish_invocation(tid)
                    node.active = None
                    if reply_to is None:
                        node.results.append(result)
                    else:
                        self._send_response(node, reply_to, result.encoded)
                    continue
            return

    def _send_response(self, node: Node, reply_to: tuple, encoded_result: str) -> None:
        caller_id, caller_task, rpc_id = reply_to
        payload = {"status": "ok", "value": encoded_result}
        self._send(node.config.node_id, caller_id, ("deliver_response", caller_id, caller_task, payload))

    def _send(self, src: str, dst: str, action: tuple) -> None:
        index = self.message_index
        self.message_index += 1
        fault = self.network.fault(index)
        delay = self.network.latency(src, dst, index)
        if fault == "drop":
            return
        self.schedule(self.clock + delay, action)
        if fault == "duplicate":
            self.schedule(self.clock + delay + 1, action)

    def _sweep(self) -> None:
        """Dispatch freshly deferred Rpc effects from every node.  Runs to a
        fixpoint: a locally failed dispatch resumes its caller, which may
        issue further calls within the same virtual instant."""
        while True:
            dispatched_any = False
            for node_id in sorted(self.system.nodes):
                node = self.system.nodes[node_id]
                for task in sorted(node.runtime.deferred_tasks(), key=lambda t: t.id):
                    key = (node_id, task.id)
                    if key in self.dispatched or task.capability != "Rpc":
                        continue
                    self.dispatched.add(key)
                    self._dispatch_call(node, task)
                    dispatched_any = True
            if not dispatched_any:
                return

    def _dispatch_call(self, node: Node, task) -> None:
        heap = node.runtime.heap
        api = to_plain(heap, task.arg_handles[0])
        args = to_plain(heap, task.arg_handles[1])
        src = node.config.node_id
        route = self.system.topology.routes.get((src, api))
        if route is None:
            node.runtime.deliver_effect_response(
                task.id,
                {
                    "status": "fail",
                    "failure": failure_to_plain(
                        FailureObject(
                            flt.EFFECT_ERROR, f"no route for api {api!r}", ("Rpc::Call", 0)
                        )
                    ),
                },
            )
            self._progress(node)
            return
        rpc_id = f"{src}-{task.id}"
        envelope = {
            "jsonrpc": "2.0",
            "id": rpc_id,
            "method": api,
            "params": [encode_canonical(a) for a in args],
        }
        reply_to = (src, task.id, rpc_id)
        self._send(src, route, ("deliver_request", route, envelope, task.correlation, reply_to))
        self.schedule(self.clock + self.network.timeout_after, ("timeout", src, task.id))


def simulate(scenario: Scenario, program: Program) -> SystemRun:
    system = deploy(program, scenario.topology, seed=scenario.seed)
    driver = _Driver(system, scenario.network)
    clock_end, messages = driver.run(scenario.invocations)
    for node in system.nodes.values():
        if node.active is not None or node.queue:
            raise ScenarioError(
                f"node {node.config.node_id!r} still busy at end of simulation"
            )
    traces = {nid: n.trace_text(program) for nid, n in system.nodes.items()}
    results = {nid: [r.encoded for r in n.results] for nid, n in system.nodes.items()}
    timeline = merge_timeline({nid: tracemod.parse_trace(t) for nid, t in traces.items()})
    return SystemRun(system, clock_end, messages, traces, results, timeline)


# ----------------------------------------------------------------------
# Gather, replay, and the merged timeline


def gather_and_replay(program: Program, node_traces: dict) -> dict:
    """Replay every node's log locally (one process, no network, zero
    handlers).  Returns node id -> list of canonical final-result strings.
    A divergence is re-raised with the node id attached."""
    out = {}
    for node_id in sorted(node_traces):
        try:
            report = tracemod.replay(program, node_traces[node_id])
        except tracemod.ReplayDivergence as exc:
            raise tracemod.ReplayDivergence(
                exc.seq, f"node {node_id!r}: {exc}"
            ) from None
        out[node_id] = [r.encoded for r in report.results]
    return out


def merge_timeline(node_logs: dict) -> list:
    """Join per-node logs into one causal timeline: rows grouped by
    correlation id, ordered inside each group by (node arrival, seq)."""
    rows = []
    first_seen: dict[str, int] = {}
    for node_id in sorted(node_logs):
        for event in node_logs[node_id].events:
            first_seen.setdefault(event.correlation, len(first_seen))
            rows.append(
                {
                    "correlation": event.correlation,
                    "node": node_id,
                    "seq": event.seq,
                    "kind": event.kind,
                    "payload": event.payload,
                }
            )
    rows.sort(key=lambda r: (first_seen[r["correlation"]], r["node"], r["seq"]))
    return rows


# ----------------------------------------------------------------------
# Scenario files


def parse_scenario(text: str, base_dir: Path | None = None) -> Scenario:
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise ScenarioError(f"scenario unparseable: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != SCENARIO_FORMAT:
        raise ScenarioError("missing scenario format marker")
    if "source" in doc:
        source = doc["source"]
    elif "program" in doc:
        path = Path(doc["program"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        source = path.read_text(encoding="utf-8")
    else:
        raise ScenarioError("scenario needs 'source' or 'program'")
    nodes = tuple(
        NodeConfig(
            node_id=n["id"],
            profile=n.get("profile", "embedded"),
            workers=n.get("workers"),
            capabilities=n.get("capabilities", {}),
        )
        for n in doc.get("nodes", [])
    )
    routes = {}
    for caller, table in doc.get("routes", {}).items():
        for api, callee in table.items():
            routes[(caller, api)] = callee
    net = doc.get("network", {})
    per_route = {}
    for key, value in net.get("per_route", {}).items():
        src, _, dst = key.partition("->")
        per_route[(src, dst)] = value
    faults = {}
    for f in net.get("faults", []):
        faults[int(f["index"])] = f["kind"]
        if f["kind"] not in ("drop", "duplicate"):
            raise ScenarioError(f"unknown fault kind {f['kind']!r}")
    network = NetworkModel(
        base_latency=net.get("base_latency", 5),
        latency_spread=net.get("latency_spread", 0),
        per_route=per_route,
        timeout_after=net.get("timeout_after", 1000),
        faults=faults,
    )
    invocations = tuple(
        (
            inv.get("at", 0),
            inv["node"],
            inv["api"],
            tuple(decode_canonical(a) for a in inv.get("args", [])),
        )
        for inv in doc.get("invocations", [])
    )
    return Scenario(
        source=source,
        topology=Topology(nodes, routes),
        network=network,
        invocations=invocations,
        seed=doc.get("seed", 0),
    )


def write_run_dir(run: SystemRun, program: Program, out_dir: Path) -> Path:
    """Write `<node>.ektrace` per node plus a manifest, returning the dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_nodes = []
    for node_id in sorted(run.node_traces):
        trace_name = f"{node_id}.ektrace"
        (out_dir / trace_name).write_text(run.node_traces[node_id], encoding="utf-8")
        manifest_nodes.append(
            {
                "id": node_id,
                "profile": run.system.nodes[node_id].config.profile,
                "results": run.node_results[node_id],
                "trace": trace_name,
            }
        )
    manifest = {
        "clock_end": run.clock_end,
        "format": "EKRUN1",
        "messages": run.messages_sent,
        "nodes": manifest_nodes,
        "program": program_hash(program),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return out_dir
