"""edgekernel: deterministic mini-language runtime with a bounded-pause
generational heap, an effect-boundary record/replay pipeline, and a
virtual-time multi-node deployment simulator.

The curated surface below covers the common workflows; the submodules
(`lang`, `heap`, `bapi`, `runtime`, `trace`, `distsim`, `cli`) expose the
full toolkit.
"""

from .bapi import (
    BoundaryError,
    CapabilityPackage,
    CapabilityRegistry,
    EnumVal,
    OperationSig,
    ValidationError,
    decode_canonical,
    emit_bindings,
    emit_bindings_text,
    encode_canonical,
)
from .cli import main
from .distsim import (
    NetworkModel,
    NodeConfig,
    Scenario,
    ScenarioError,
    Topology,
    deploy,
    gather_and_replay,
    parse_scenario,
    simulate,
    write_run_dir,
)
from .heap import MIN_NURSERY_BYTES, GcConfig, Heap, HeapError, OutOfMemory
from .lang import (
    Diagnostic,
    Program,
    SourceProgram,
    parse,
    program_hash,
    to_source,
    validate,
)
from .runtime import (
    EventSink,
    InvocationError,
    InvocationResult,
    Runtime,
    SchedulerConfig,
)
from .trace import (
    LogCorrupt,
    ReplayDivergence,
    SnapshotIncompatible,
    TraceError,
    parse_trace,
    record,
    replay,
    resume_from,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryError",
    "CapabilityPackage",
    "CapabilityRegistry",
    "Diagnostic",
    "EnumVal",
    "EventSink",
    "GcConfig",
    "Heap",
    "HeapError",
    "InvocationError",
    "InvocationResult",
    "LogCorrupt",
    "MIN_NURSERY_BYTES",
    "NetworkModel",
    "NodeConfig",
    "OperationSig",
    "OutOfMemory",
    "Program",
    "ReplayDivergence",
    "Runtime",
    "Scenario",
    "ScenarioError",
    "SchedulerConfig",
    "SnapshotIncompatible",
    "SourceProgram",
    "Topology",
    "TraceError",
    "ValidationError",
    "decode_canonical",
    "deploy",
    "emit_bindings",
    "emit_bindings_text",
    "encode_canonical",
    "gather_and_replay",
    "main",
    "parse",
    "parse_scenario",
    "parse_trace",
    "program_hash",
    "record",
    "replay",
    "resume_from",
    "simulate",
    "to_source",
    "validate",
    "write_run_dir",
    "__version__",
]
