"""Command-line driver.

Exit codes: 0 success, 1 the program returned an Error result, 2 usage or
validation problems (including corrupt inputs), 3 replay divergence.

Canonical output goes to stdout and is byte-identical across runs for a
fixed input set; timing numbers go to stderr, the stats stream.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import time
from pathlib import Path

from . import distsim, trace
from .bapi import (
    BoundaryError,
    CapabilityRegistry,
    CLOCK_PACKAGE,
    EnumVal,
    FS_PACKAGE,
    KV_PACKAGE,
    ValidationError,
    clock_handler,
    decode_canonical,
    emit_bindings_text,
    fs_handler,
    kv_handler,
)
from .heap import GcConfig, Heap, MIN_NURSERY_BYTES
from .lang import parse, validate
from .lang.ast import Program, SourceProgram
from .runtime import InvocationError, Runtime, SchedulerConfig

EXIT_OK = 0
EXIT_PROGRAM_ERROR = 1
EXIT_USAGE = 2
EXIT_DIVERGENCE = 3

PROFILE_ENV = "EDGEKERNEL_PROFILE"

_SIZE_RE = re.compile(r"^(\d+(?:\.\d+)?)([KMG]?)$", re.IGNORECASE)
_SIZE_FACTORS = {"": 1, "K": 1024, "M": 1024**2, "G": 1024**3}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE) -> None:
        super().__init__(message)
        self.code = code


def parse_size(text: str) -> int:
    m = _SIZE_RE.match(text.strip())
    if not m:
        raise CliError(f"bad size {text!r} (use e.g. 256K, 4M, 1.6G)")
    value = float(m.group(1)) * _SIZE_FACTORS[m.group(2).upper()]
    n = int(value)
    if n < 1:
        raise CliError(f"size {text!r} is not positive")
    return n


def _profile_defaults() -> tuple[int, int]:
    """(nursery bytes, workers) from the environment profile, if set."""
    profile = os.environ.get(PROFILE_ENV)
    if profile is None:
        return MIN_NURSERY_BYTES, 1
    if profile not in distsim.PROFILES:
        raise CliError(f"{PROFILE_ENV} must be one of {sorted(distsim.PROFILES)}")
    p = distsim.PROFILES[profile]
    return p["nursery"], p["workers"]


def load_program(path: str) -> Program:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from None
    program, diagnostics = parse(SourceProgram(text, origin=path))
    if program is None:
        raise CliError("\n".join(d.render(path) for d in diagnostics))
    errors = validate(program)
    if errors:
        raise CliError("\n".join(d.render(path) for d in errors))
    return program


def parse_cli_value(text: str) -> object:
    """An api argument: canonical encoding, or a bare literal for
    convenience (int, true/false/none, 0x"..", anything else is a string)."""
    try:
        return decode_canonical(text)
    except ValidationError:
        pass
    if re.fullmatch(r"-?\d+", text):
        return int(text)
    if text in ("true", "false"):
        return text == "true"
    if text == "none":
        return None
    m = re.fullmatch(r'0x"([0-9a-fA-F]*)"', text)
    if m:
        return bytes.fromhex(m.group(1))
    return text


def build_registry(args: argparse.Namespace) -> CapabilityRegistry:
    registry = CapabilityRegistry()
    files: dict[str, bytes] = {}
    if args.fs_root:
        root = Path(args.fs_root)
        if not root.is_dir():
            raise CliError(f"--fs-root {args.fs_root}: not a directory")
        for p in sorted(root.rglob("*")):
            if p.is_file():
                files[p.relative_to(root).as_posix()] = p.read_bytes()
    registry.register(FS_PACKAGE, fs_handler(files))
    store: dict[str, object] = {}
    for item in args.kv or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--kv needs KEY=VALUE, got {item!r}")
        store[key] = parse_cli_value(value)
    registry.register(KV_PACKAGE, kv_handler(store))
    registry.register(CLOCK_PACKAGE, clock_handler())
    return registry


def _gc_config(args: argparse.Namespace) -> GcConfig:
    default_nursery, _ = _profile_defaults()
    nursery = parse_size(args.nursery) if args.nursery else default_nursery
    limit = parse_size(args.heap_limit) if args.heap_limit else max(64 * 1024**2, 2 * nursery)
    try:
        return GcConfig(nursery_bytes=nursery, heap_limit_bytes=limit)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _workers(args: argparse.Namespace) -> int:
    if args.workers is not None:
        if args.workers < 1:
            raise CliError("--workers must be >= 1")
        return args.workers
    return _profile_defaults()[1]


def _result_exit(value: object) -> int:
    if isinstance(value, EnumVal) and value.variant == "Success":
        return EXIT_OK
    return EXIT_PROGRAM_ERROR


def _stats(label: str, pairs: dict) -> None:
    line = json.dumps(pairs, sort_keys=True, separators=(",", ":"))
    print(f"{label} {line}", file=sys.stderr)


# ----------------------------------------------------------------------
# Subcommands


def cmd_run(args: argparse.Namespace) -> int:
    program = load_program(args.file)
    registry = build_registry(args)
    runtime = Runtime(
        program,
        registry=registry,
        config=SchedulerConfig(workers=_workers(args), seed=args.seed),
        gc_config=_gc_config(args),
    )
    started = time.perf_counter()
    try:
        result = runtime.evaluate(args.api, [parse_cli_value(a) for a in args.args])
    except InvocationError as exc:
        raise CliError(str(exc)) from None
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    print(result.encoded)
    stats = runtime.heap.stats()
    _stats(
        "run",
        {
            "elapsed_ms": round(elapsed_ms, 3),
            "max_pause_us": round(stats.max_pause_us, 1),
            "minor_collections": stats.minor_collections,
        },
    )
    return _result_exit(result.value)


def cmd_record(args: argparse.Namespace) -> int:
    program = load_program(args.file)
    registry = build_registry(args)
    marks = set()
    if args.snapshot_turns:
        for piece in args.snapshot_turns.split(","):
            try:
                marks.add(int(piece))
            except ValueError:
                raise CliError(f"--snapshot-turns wants integers, got {piece!r}") from None
    started = time.perf_counter()
    run = trace.record(
        program,
        [(args.api, [parse_cli_value(a) for a in args.args])],
        registry=registry,
        workers=_workers(args),
        seed=args.seed,
        gc_config=_gc_config(args),
        snapshot_turns=marks,
    )
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    out = Path(args.out)
    out.write_text(run.text, encoding="utf-8")
    for seq, blob in sorted(run.log.snapshots.items()):
        (out.parent / f"{out.stem}.seq{seq}.eksnap").write_bytes(blob)
    result = run.results[0]
    print(result.encoded)
    effects = sum(1 for e in run.log.events if e.kind == "EffectRequest")
    _stats(
        "record",
        {
            "effects": effects,
            "elapsed_ms": round(elapsed_ms, 3),
            "events": len(run.log.events),
            "snapshots": len(run.log.snapshots),
        },
    )
    return _result_exit(result.value)


def cmd_replay(args: argparse.Namespace) -> int:
    program = load_program(args.file)
    try:
        log_text = Path(args.log).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {args.log}: {exc}") from None
    try:
        if args.resume:
            blob = Path(args.resume).read_bytes()
            report = trace.resume_from(program, blob, log_text)
        else:
            report = trace.replay(program, log_text)
    except trace.ReplayDivergence as exc:
        print(f"REPLAY-DIVERGENCE seq={exc.seq} {exc}")
        return EXIT_DIVERGENCE
    except (trace.LogCorrupt, trace.SnapshotIncompatible, trace.TraceError) as exc:
        raise CliError(str(exc)) from None
    for result in report.results:
        print(result.encoded)
    print("REPLAY-OK")
    _stats("replay", {"events": report.events_replayed, "invocations": len(report.results)})
    if report.results:
        return _result_exit(report.results[-1].value)
    return EXIT_OK


def cmd_bindings(args: argparse.Namespace) -> int:
    program = load_program(args.file)
    try:
        text = emit_bindings_text(program, args.flavor)
    except BoundaryError as exc:
        raise CliError(str(exc)) from None
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(args.out)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_bench_gc(args: argparse.Namespace) -> int:
    nursery = parse_size(args.nursery)
    live_target = parse_size(args.live_set)
    leaf_bytes = parse_size(args.value_bytes)
    if args.heap_limit:
        limit = parse_size(args.heap_limit)
    else:
        limit = max(2 * nursery, 2 * live_target + 64 * 1024**2)
    try:
        config = GcConfig(nursery_bytes=nursery, heap_limit_bytes=limit)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    heap = Heap(config)

    # Live set as a tree under a single root: the old generation is never
    # scanned during a minor collection, so pause must not depend on its size.
    payload = b"\x5a" * max(1, leaf_bytes - 16)
    leaves_needed = max(1, live_target // leaf_bytes)
    chunk: list[int] = []
    chunks: list[int] = []
    for _ in range(leaves_needed):
        h = heap.bytes_(payload)
        heap.temp_roots.append(h)
        chunk.append(h)
        if len(chunk) == 64:
            chunks.append(heap.list_(chunk))
            # built chunks shield their leaves transitively
            heap.temp_roots[:] = chunks
            chunk = []
    if chunk:
        chunks.append(heap.list_(chunk))
        heap.temp_roots[:] = chunks
    root = heap.list_(chunks)
    heap.add_root(root)
    del heap.temp_roots[:]
    build_pauses = len(heap.pause_history_us())

    churn_payload = b"\xa5" * 48
    started = time.perf_counter()
    for _ in range(args.allocs):
        heap.bytes_(churn_payload)  # dropped immediately: dies in the nursery
    elapsed = time.perf_counter() - started
    stats = heap.stats()
    # Steady-state pauses: collections after the live set finished building.
    steady = sorted(heap.pause_history_us()[build_pauses:]) or [0.0]
    steady_p99 = steady[max(0, math.ceil(0.99 * len(steady)) - 1)]
    steady_p50 = steady[(len(steady) - 1) // 2]
    deterministic = {
        "allocs": args.allocs,
        "heap_limit": limit,
        "live_bytes": stats.live_bytes,
        "minor_collections": stats.minor_collections,
        "nursery": nursery,
        "promoted_bytes": stats.promoted_bytes,
        "reserve_bytes": stats.reserve_bytes,
        "value_bytes": leaf_bytes,
    }
    print(json.dumps(deterministic, sort_keys=True, separators=(",", ":")))
    _stats(
        "bench-gc",
        {
            "elapsed_ms": round(elapsed * 1000.0, 3),
            "max_pause_us": round(stats.max_pause_us, 1),
            "p99_pause_us": round(stats.p99_pause_us, 1),
            "steady_collections": len(steady),
            "steady_max_pause_us": round(steady[-1], 1),
            "steady_p50_pause_us": round(steady_p50, 1),
            "steady_p99_pause_us": round(steady_p99, 1),
        },
    )
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario_path = Path(args.scenario)
    try:
        text = scenario_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {args.scenario}: {exc}") from None
    try:
        scenario = distsim.parse_scenario(text, base_dir=scenario_path.parent)
    except distsim.ScenarioError as exc:
        raise CliError(str(exc)) from None
    origin = str(scenario_path)
    program, diagnostics = parse(SourceProgram(scenario.source, origin=origin))
    if program is None:
        raise CliError("\n".join(d.render(origin) for d in diagnostics))
    errors = validate(program)
    if errors:
        raise CliError("\n".join(d.render(origin) for d in errors))
    try:
        run = distsim.simulate(scenario, program)
    except distsim.ScenarioError as exc:
        raise CliError(str(exc)) from None
    out_dir = distsim.write_run_dir(run, program, Path(args.out))
    manifest = (out_dir / "manifest.json").read_text(encoding="utf-8")
    print(manifest, end="")
    if args.replay:
        try:
            distsim.gather_and_replay(program, run.node_traces)
        except trace.ReplayDivergence as exc:
            print(f"REPLAY-DIVERGENCE seq={exc.seq} {exc}")
            return EXIT_DIVERGENCE
        print("REPLAY-OK")
    _stats(
        "simulate",
        {"clock_end": run.clock_end, "messages": run.messages_sent, "nodes": len(run.node_traces)},
    )
    return EXIT_OK


# ----------------------------------------------------------------------
# Argument wiring


def _add_runtime_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--workers", type=int, default=None, help="scheduler lanes per round")
    sp.add_argument("--nursery", default=None, help="young-generation size (e.g. 256K, 4M)")
    sp.add_argument("--heap-limit", default=None, help="total heap budget (e.g. 64M)")
    sp.add_argument("--seed", type=int, default=0, help="schedule choice seed")
    sp.add_argument("--fs-root", default=None, help="directory served by the file capability")
    sp.add_argument("--kv", action="append", default=None, metavar="KEY=VALUE", help="seed the key-value capability")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgekernel",
        description="Deterministic mini-language runtime: run, record, replay, simulate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("run", help="evaluate one api invocation")
    sp.add_argument("file")
    sp.add_argument("api")
    sp.add_argument("args", nargs="*")
    _add_runtime_flags(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("record", help="run and write a replay log")
    sp.add_argument("file")
    sp.add_argument("api")
    sp.add_argument("args", nargs="*")
    sp.add_argument("--out", required=True, help="path for the .ektrace log")
    sp.add_argument("--snapshot-turns", default=None, help="comma-separated turn numbers to snapshot")
    _add_runtime_flags(sp)
    sp.set_defaults(func=cmd_record)

    sp = sub.add_parser("replay", help="re-execute a log with zero live handlers")
    sp.add_argument("file")
    sp.add_argument("log")
    sp.add_argument("--resume", default=None, help="resume from this .eksnap instead of the log start")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("bindings", help="emit interface documents for the program's apis")
    sp.add_argument("file")
    sp.add_argument("--flavor", choices=("openapi", "jsonrpc"), default="openapi")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_bindings)

    sp = sub.add_parser("bench-gc", help="allocation churn benchmark against a pinned live set")
    sp.add_argument("--nursery", default="256K")
    sp.add_argument("--live-set", default="8M")
    sp.add_argument("--allocs", type=int, default=1_000_000)
    sp.add_argument("--heap-limit", default=None)
    sp.add_argument("--value-bytes", default="4096")
    sp.set_defaults(func=cmd_bench_gc)

    sp = sub.add_parser("simulate", help="run a multi-node scenario on virtual time")
    sp.add_argument("scenario")
    sp.add_argument("--out", required=True, help="run directory for logs and manifest")
    sp.add_argument("--replay", action="store_true", help="gather and locally replay after the run")
    sp.set_defaults(func=cmd_simulate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except BoundaryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
