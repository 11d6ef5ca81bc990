"""Acceptance gate: one test per shipping criterion.

Run with `pytest -v tests/test_acceptance.py` to get a pass/fail line per
criterion.  Numeric bounds marked "pinned at bring-up" were measured on the
reference host and frozen with at least 2x headroom; digest constants were
computed once from an independent run and frozen as cross-host witnesses.
"""

from __future__ import annotations

import gc
import hashlib
import io
import json
import random
import time
from contextlib import redirect_stderr, redirect_stdout

from conftest import parse_ok, run_program, three_node_scenario_dict
from edgekernel import distsim, trace
from edgekernel.bapi import (
    CLOCK_PACKAGE,
    CapabilityRegistry,
    EnumVal,
    FS_PACKAGE,
    KV_PACKAGE,
    clock_handler,
    emit_bindings,
    encode_canonical,
    fs_handler,
    kv_handler,
)
from edgekernel.cli import main as cli_main
from edgekernel.lang import program_hash
from edgekernel.trace import TraceError, parse_trace

import jsonschema
from fastapi.openapi.models import OpenAPI

# ----------------------------------------------------------------------
# Frozen constants

# Minor-pause envelope, microseconds, as a linear function of nursery size.
# Pinned at bring-up from the measured worst pause per nursery with >= 2x
# headroom (worst observed: 7.5ms @ 256K cold, 7.1ms @ 1M, 21.7ms @ 4M).
# The intercept absorbs host preemption spikes, which hit any cell at any
# nursery size; the slope is the collector's own per-nursery-byte cost.
PAUSE_ALPHA_US_PER_MIB = 12_000.0
PAUSE_BETA_US = 12_000.0

# Live-set independence tolerance, checked on the repetition-minimum median
# steady-state pause.  The median of post-build collections isolates the
# collector's systematic per-collection cost; max and p99 are dominated by
# host scheduling jitter (observed 2x swings at fixed parameters).
LIVE_INDEPENDENCE_TOLERANCE = 0.20

# Allocation counts per nursery size, scaled so every cell observes a
# three-digit number of minor collections.
BENCH_ALLOCS = {"256K": 1_300_000, "1M": 2_600_000, "4M": 7_000_000}

# sha256 over "programhash result" lines for the whole generated corpus,
# computed once at bring-up and frozen.  Any host that reproduces it has
# reproduced every canonical result byte-for-byte.
CORPUS_RESULT_DIGEST = "47a0a88e5cd7515f86ebe23fdbb2a220137ea5a7cba09738090c37d7a779f6b3"

FILE_CONTENT = b"threshold = 42\n"

READER_SOURCE = """
import Fs;

action doit(): ByteBuffer {
  let data = Task::run<Fs::ReadFile>("file.txt");
  match(data) {
    APIResult::Success => { return data.value; }
    _ => { yield APIResult::error("Failed read"); }
  }
}

api main(): APIResult<ByteBuffer, String> {
  let result = doit();
  return APIResult::success(result);
}
"""

# Same program with an effect after the yield point and one after the
# action call.  On the failure path neither may run.
READER_INSTRUMENTED = """
import Fs;
import Kv;

action doit(): ByteBuffer {
  let data = Task::run<Fs::ReadFile>("file.txt");
  match(data) {
    APIResult::Success => { return data.value; }
    _ => {
      yield APIResult::error("Failed read");
      let dead = Task::run<Kv::Put>("in-arm", "ran");
    }
  }
}

api main(): APIResult<ByteBuffer, String> {
  let result = doit();
  let post = Task::run<Kv::Put>("post-call", "ran");
  return APIResult::success(result);
}
"""


# ----------------------------------------------------------------------
# Helpers


def bench_cell(extra_args: list[str]) -> tuple[dict, dict]:
    """Run the gc benchmark command with the host collector off; return
    (deterministic stdout report, stderr pause stats)."""
    out, err = io.StringIO(), io.StringIO()
    gc.disable()
    try:
        with redirect_stdout(out), redirect_stderr(err):
            code = cli_main(["bench-gc", "--value-bytes", "4096"] + extra_args)
    finally:
        gc.enable()
    assert code == 0, err.getvalue()
    report = json.loads(out.getvalue())
    stats = json.loads(err.getvalue().split("bench-gc ", 1)[1])
    return report, stats


def counting_registry(files: dict, counts: dict) -> CapabilityRegistry:
    def wrap(handler):
        def counted(op, args):
            counts[op] = counts.get(op, 0) + 1
            return handler(op, args)

        return counted

    registry = CapabilityRegistry()
    registry.register(FS_PACKAGE, wrap(fs_handler(dict(files))))
    registry.register(KV_PACKAGE, wrap(kv_handler({})))
    registry.register(CLOCK_PACKAGE, clock_handler())
    return registry


def corpus_result_lines(parsed_corpus) -> list[str]:
    lines = []
    for entry, program in parsed_corpus:
        result = run_program(program, entry.api, list(entry.args), registry=entry.registry())
        lines.append(f"{program_hash(program)} {result.encoded}")
    return lines


# ----------------------------------------------------------------------
# Criteria


def test_c01_minor_pause_bounded_and_live_independent():
    started = time.perf_counter()
    bench_cell(["--nursery", "256K", "--live-set", "8M", "--allocs", "300000"])  # warm-up

    nursery_mib = {"256K": 0.25, "1M": 1.0, "4M": 4.0}
    p50 = {}  # (nursery, live) -> min steady-state median over repetitions
    for rep in range(2):
        for nursery in ("256K", "1M", "4M"):
            bound = PAUSE_ALPHA_US_PER_MIB * nursery_mib[nursery] + PAUSE_BETA_US
            for live in ("8M", "64M"):
                report, stats = bench_cell(
                    ["--nursery", nursery, "--live-set", live,
                     "--allocs", str(BENCH_ALLOCS[nursery])]
                )
                assert report["minor_collections"] >= 100, (nursery, live)
                assert stats["steady_collections"] >= 50, (nursery, live)
                assert stats["max_pause_us"] <= bound, (
                    f"nursery {nursery} live {live} rep {rep}: "
                    f"max pause {stats['max_pause_us']}us exceeds {bound}us"
                )
                key = (nursery, live)
                p50[key] = min(
                    p50.get(key, float("inf")), stats["steady_p50_pause_us"]
                )

    for nursery in ("256K", "1M", "4M"):
        small, big = p50[(nursery, "8M")], p50[(nursery, "64M")]
        drift = abs(big - small) / small
        assert drift <= LIVE_INDEPENDENCE_TOLERANCE, (
            f"nursery {nursery}: median steady pause {small}us at 8M vs "
            f"{big}us at 64M ({drift:.0%} apart) - pause depends on live-set size"
        )

    assert time.perf_counter() - started < 120.0


def test_c02_churn_in_tight_heap_never_exhausts_memory():
    started = time.perf_counter()
    report, _ = bench_cell(
        ["--nursery", "256K", "--live-set", "4K",
         "--allocs", "10000000", "--heap-limit", "512K"]
    )
    # Exit 0 means all ten million allocate-and-drop operations completed
    # inside a budget of twice the nursery.
    assert report["allocs"] == 10_000_000
    assert report["heap_limit"] == 2 * report["nursery"]
    assert report["minor_collections"] > 1000
    assert time.perf_counter() - started < 120.0


def test_c03_collector_reserve_is_constant_and_small():
    reserves = set()
    for limit in ("16M", "160M", "1.6G"):
        report, _ = bench_cell(
            ["--nursery", "256K", "--live-set", "64K",
             "--allocs", "1000", "--heap-limit", limit]
        )
        reserves.add(report["reserve_bytes"])
    assert len(reserves) == 1, f"reserve varies with heap limit: {sorted(reserves)}"
    (reserve,) = reserves
    assert reserve == 256 * 1024 + 128 * 1024
    assert reserve <= 1024**2


def test_c04_reference_program_success_and_unwind_goldens():
    success_golden = encode_canonical(EnumVal("APIResult", "Success", FILE_CONTENT))
    failure_golden = encode_canonical(EnumVal("APIResult", "Error", "Failed read"))

    program = parse_ok(READER_SOURCE)
    counts: dict = {}
    ok = run_program(program, "main", [], registry=counting_registry(
        {"file.txt": FILE_CONTENT}, counts))
    assert ok.encoded == success_golden
    assert counts == {"ReadFile": 1}

    counts.clear()
    err = run_program(program, "main", [], registry=counting_registry({}, counts))
    assert err.encoded == failure_golden
    assert counts == {"ReadFile": 1}

    instrumented = parse_ok(READER_INSTRUMENTED)
    counts.clear()
    ok = run_program(instrumented, "main", [], registry=counting_registry(
        {"file.txt": FILE_CONTENT}, counts))
    assert ok.encoded == success_golden
    assert counts == {"ReadFile": 1, "Put": 1}  # the counter observes effects

    counts.clear()
    err = run_program(instrumented, "main", [], registry=counting_registry({}, counts))
    assert err.encoded == failure_golden
    # The yield unwound past both instrumented statements: zero post-yield
    # effects on the failure path.
    assert counts == {"ReadFile": 1}


def test_c05_corpus_results_are_bit_identical_across_runs(parsed_corpus):
    baseline = corpus_result_lines(parsed_corpus)
    digest = hashlib.sha256("\n".join(baseline).encode("utf-8")).hexdigest()
    assert digest == CORPUS_RESULT_DIGEST, (
        "corpus results differ from the frozen cross-host witness"
    )

    # 20 runs per program: 2 repetitions x workers {1, 4} x 5 seeds.
    for (entry, program), expected_line in zip(parsed_corpus, baseline):
        expected = expected_line.split(" ", 1)[1]
        for _ in range(2):
            for workers in (1, 4):
                for seed in range(5):
                    result = run_program(
                        program, entry.api, list(entry.args),
                        registry=entry.registry(), workers=workers, seed=seed,
                    )
                    assert result.encoded == expected, (
                        f"program {entry.index}: workers={workers} seed={seed} "
                        f"produced different bytes"
                    )


def test_c06_record_replay_fidelity_and_mutation_detection(parsed_corpus):
    texts = []
    for entry, program in parsed_corpus:
        run = trace.record(
            program, [(entry.api, list(entry.args))], registry=entry.registry()
        )
        report = trace.replay(program, run.text)  # zero live handlers
        assert [r.encoded for r in report.results] == [r.encoded for r in run.results]
        texts.append((program, run.text, run.results[0].encoded))

    reader = parse_ok(READER_SOURCE)
    run = trace.record(
        reader, [("main", [])],
        registry=counting_registry({"file.txt": FILE_CONTENT}, {}),
    )
    report = trace.replay(reader, run.text)
    assert report.results[0].encoded == run.results[0].encoded
    texts.append((reader, run.text, run.results[0].encoded))

    rng = random.Random(0xACCE55)
    detected = 0
    for _ in range(100):
        program, text, original = rng.choice(texts)
        raw = bytearray(text.encode("utf-8"))
        pos = rng.randrange(len(raw))
        old = raw[pos]
        raw[pos] = rng.choice([b for b in range(32, 127) if b != old])
        try:
            mutated = raw.decode("utf-8")
            results = [r.encoded for r in trace.replay(program, mutated).results]
        except (TraceError, UnicodeDecodeError):
            detected += 1
            continue
        assert results != [original], (
            f"silent agreement after flipping byte {pos} ({old!r})"
        )
        detected += 1
    assert detected == 100


def test_c07_snapshot_resume_equals_full_replay(parsed_corpus):
    effectful = [(e, p) for e, p in parsed_corpus if e.effectful][:10]
    assert len(effectful) == 10
    for entry, program in effectful:
        run = trace.record(
            program, [(entry.api, list(entry.args))],
            registry=entry.registry(), snapshot_turns={1},
        )
        assert run.log.snapshots, f"program {entry.index}: no mid-run snapshot"
        full = [r.encoded for r in trace.replay(program, run.text).results]
        for seq, blob in sorted(run.log.snapshots.items()):
            resumed = trace.resume_from(program, blob, run.text)
            assert [r.encoded for r in resumed.results] == full, (
                f"program {entry.index}: resume at seq {seq} diverged from full replay"
            )


def test_c08_distributed_run_replays_and_exposes_the_drop():
    scenario = distsim.parse_scenario(json.dumps(three_node_scenario_dict(
        network={
            "base_latency": 5,
            "timeout_after": 200,
            "faults": [{"index": 5, "kind": "drop"}],
        }
    )))
    program = parse_ok(scenario.source)
    run = distsim.simulate(scenario, program)

    # Ten cross-node calls were attempted (5 invocations x 2 hops); the
    # dropped one timed out at the caller.
    outcomes = [json.loads(r)["t"] for r in run.node_results["frontend"]]
    assert outcomes == ["Success", "Error", "Success", "Success", "Success"]

    # Every node's log replays locally, byte-identical to what it recorded.
    replayed = distsim.gather_and_replay(program, run.node_traces)
    logs = {nid: parse_trace(t) for nid, t in run.node_traces.items()}
    for nid, log in logs.items():
        recorded = [e.payload["result"] for e in log.events if e.kind == "ApiExit"]
        assert replayed[nid] == recorded, f"node {nid} replay drifted"

    # Correlation ids propagate: every callee entry carries a correlation
    # minted at the frontend, and each delivered call shares it end to end.
    roots = [
        e.correlation
        for e in logs["frontend"].events
        if e.kind == "ApiEnter" and "origin_node" not in e.payload
    ]
    assert len(roots) == 5 and len(set(roots)) == 5
    mid_enters = {e.correlation for e in logs["mid"].events if e.kind == "ApiEnter"}
    leaf_enters = {e.correlation for e in logs["leaf"].events if e.kind == "ApiEnter"}
    assert mid_enters == set(roots)
    assert leaf_enters == set(roots) - {roots[1]}

    # The drop is visible in the gathered logs: the victim correlation has
    # a caller-side request at mid with no matching entry at the leaf.
    victim = roots[1]
    mid_requests = {
        e.correlation for e in logs["mid"].events if e.kind == "EffectRequest"
    }
    assert victim in mid_requests and victim not in leaf_enters

    timeline_corrs = {row["correlation"] for row in run.timeline}
    assert set(roots) <= timeline_corrs


def test_c09_emitted_bindings_validate_against_meta_schemas(parsed_corpus):
    check = jsonschema.Draft202012Validator.check_schema
    failures = []
    for entry, program in parsed_corpus:
        try:
            doc = emit_bindings(program, "openapi")
            OpenAPI.model_validate(doc)
            for item in doc["paths"].values():
                op = item["post"]
                check(op["requestBody"]["content"]["application/json"]["schema"])
                check(op["responses"]["200"]["content"]["application/json"]["schema"])
            doc = emit_bindings(program, "jsonrpc")
            assert doc["jsonrpc"] == "2.0"
            for method in doc["methods"]:
                for param in method["params"]:
                    check(param["schema"])
                check(method["result"]["schema"])
        except Exception as exc:  # noqa: BLE001 - tallied, then asserted empty
            failures.append((entry.index, repr(exc)))
    assert failures == []


def fuzz_cases():
    """500 fault-injection cases: (label, source, registry factory, expected
    failure kind)."""
    rng = random.Random(0xFA017)
    int64_max = 2**63 - 1

    def plain():
        return None

    def broken_raise(exc):
        def handler(op, args):
            raise exc("synthetic handler fault")

        def factory():
            registry = CapabilityRegistry()
            registry.register(KV_PACKAGE, handler)
            return registry

        return factory

    def broken_value(value):
        def handler(op, args):
            return value

        def factory():
            registry = CapabilityRegistry()
            registry.register(KV_PACKAGE, handler)
            return registry

        return factory

    cases = []
    for i in range(100):
        op = rng.choice(["+", "-", "*"])
        if op == "+":
            a = int64_max - rng.randrange(50)
            b = int64_max - a + 1 + rng.randrange(100)
            expr = f"{a} + {b}"
        elif op == "-":
            slack = rng.randrange(50)
            low = -(2**63) + slack
            expr = f"{low} - {slack + 1 + rng.randrange(100)}"
        else:
            a = 3_037_000_500 + rng.randrange(1000)
            b = 3_037_000_500 + rng.randrange(1000)
            expr = f"{a} * {b}"
        src = f"api main(): APIResult<Int, String> {{ return APIResult::success({expr}); }}"
        cases.append((f"overflow-{i}", src, plain, "Overflow"))

    for i in range(100):
        n = rng.randrange(-1000, 1000)
        c = rng.randrange(1, 9)
        zero = rng.choice(["0", f"({c} - {c})"])
        src = f"api main(): APIResult<Int, String> {{ return APIResult::success({n} / {zero}); }}"
        cases.append((f"divzero-{i}", src, plain, "LogicError"))

    for i in range(100):
        payload = rng.randrange(100)
        a, b = rng.randrange(10), rng.randrange(10)
        # Statically the arms cover all of APIResult; the Reading value
        # matches neither at run time.
        src = f"""
        api main(): APIResult<Int, String> {{
          let p = Reading::Warm({payload});
          match(p) {{
            APIResult::Success => {{ return APIResult::success({a}); }}
            APIResult::Error => {{ return APIResult::success({b}); }}
          }}
        }}
        """
        cases.append((f"nonexhaustive-{i}", src, plain, "MatchNonExhaustive"))

    kv_src = """
    import Kv;
    api main(): APIResult<Int, String> {
      let r = Task::run<Kv::Get>("k");
      return APIResult::success(1);
    }
    """
    exc_types = [ValueError, RuntimeError, KeyError, ZeroDivisionError, OSError]
    garbage = [None, 42, "done", {"status": "weird"}, {"no_status": True}, []]
    for i in range(100):
        if i % 2 == 0:
            factory = broken_raise(exc_types[(i // 2) % len(exc_types)])
        else:
            factory = broken_value(garbage[(i // 2) % len(garbage)])
        cases.append((f"handler-{i}", kv_src, factory, "EffectError"))

    for i in range(100):
        capability = rng.choice(["Db", "Queue", "Net", "Gpu", "Mail"])
        operation = rng.choice(["Query", "Push", "Send", "Load"])
        src = f"""
        import {capability};
        api main(): APIResult<Int, String> {{
          let r = Task::run<{capability}::{operation}>("x");
          return APIResult::success(1);
        }}
        """
        cases.append((f"unregistered-{i}", src, plain, "EffectError"))

    assert len(cases) == 500
    return cases


def test_c10_injected_faults_always_become_error_values():
    taxonomy = {
        "LogicError", "EffectError", "Overflow",
        "MatchNonExhaustive", "OutOfMemory", "Timeout",
    }
    for label, source, registry_factory, expected_kind in fuzz_cases():
        registry = registry_factory()
        result = run_program(parse_ok(source), "main", [], registry=registry)
        value = result.value
        assert isinstance(value, EnumVal) and value.variant == "Error", label
        payload = value.payload
        assert set(payload) >= {"kind", "message", "origin"}, label
        assert payload["kind"] in taxonomy, (label, payload["kind"])
        assert payload["kind"] == expected_kind, (label, payload["kind"])
        assert isinstance(payload["message"], str) and payload["message"], label
        assert set(payload["origin"]) == {"function", "statement"}, label
