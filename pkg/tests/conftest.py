"""Shared fixtures: reference programs, registries, and run helpers."""

from __future__ import annotations

import pytest

from corpus import make_corpus
from edgekernel.bapi import (
    CLOCK_PACKAGE,
    CapabilityRegistry,
    FS_PACKAGE,
    KV_PACKAGE,
    clock_handler,
    encode_canonical,
    fs_handler,
    kv_handler,
)
from edgekernel.lang import Program, parse, validate
from edgekernel.runtime import (
    EventSink,
    InvocationResult,
    Runtime,
    SchedulerConfig,
)

# A file read guarded by a match: the happy arm returns the bytes, the
# fallback unwinds the whole call chain with an error result.
READ_FILE_SOURCE = """\
import Fs;

action read_file(path: String): ByteBuffer {
  let data = Task::run<Fs::ReadFile>(path);
  match(data) {
    APIResult::Success => { return data.value; }
    _ => { yield APIResult::error("Failed read"); }
  }
}

api fetch(path: String): APIResult<ByteBuffer, String> {
  let content = read_file(path);
  return APIResult::success(content);
}
"""

READ_FILE_CONTENT = b"threshold = 42\n"

# Three-hop request chain used by the deployment simulator tests: the
# frontend api calls through to a middle node, which calls a leaf node.
THREE_NODE_SOURCE = """\
import Rpc;

api leafwork(n: Int): APIResult<Int, String> {
  return APIResult::success(n * 2);
}

action midstep(n: Int): Int {
  let r = Task::run<Rpc::Call>("leafwork", List{n + 1});
  match(r) {
    APIResult::Success => { return r.value; }
    _ => { yield APIResult::error("mid failed"); }
  }
}

api midwork(n: Int): APIResult<Int, String> {
  let v = midstep(n);
  return APIResult::success(v);
}

action frontstep(n: Int): Int {
  let r = Task::run<Rpc::Call>("midwork", List{n});
  match(r) {
    APIResult::Success => { return r.value; }
    _ => { yield APIResult::error("front failed"); }
  }
}

api entry(n: Int): APIResult<Int, String> {
  let v = frontstep(n);
  return APIResult::success(v);
}
"""


def three_node_scenario_dict(**overrides) -> dict:
    scenario = {
        "format": "EKSCENARIO1",
        "source": THREE_NODE_SOURCE,
        "nodes": [
            {"id": "frontend", "profile": "embedded"},
            {"id": "mid", "profile": "server"},
            {"id": "leaf", "profile": "embedded"},
        ],
        "routes": {
            "frontend": {"midwork": "mid"},
            "mid": {"leafwork": "leaf"},
        },
        "network": {"base_latency": 5, "timeout_after": 200, "faults": []},
        "invocations": [
            {
                "at": 10 * i,
                "node": "frontend",
                "api": "entry",
                "args": [encode_canonical(i + 1)],
            }
            for i in range(5)
        ],
        "seed": 0,
    }
    scenario.update(overrides)
    return scenario


def parse_ok(source: str) -> Program:
    program, diagnostics = parse(source)
    assert program is not None, [d.render() for d in diagnostics]
    errors = validate(program)
    assert not errors, [d.render() for d in errors]
    return program


def fresh_registry(files: dict | None = None, kv: dict | None = None) -> CapabilityRegistry:
    registry = CapabilityRegistry()
    registry.register(FS_PACKAGE, fs_handler(dict(files or {})))
    registry.register(KV_PACKAGE, kv_handler(dict(kv or {})))
    registry.register(CLOCK_PACKAGE, clock_handler())
    return registry


def run_program(
    program: Program | str,
    api: str,
    args: list,
    registry: CapabilityRegistry | None = None,
    workers: int = 1,
    seed: int = 0,
    gc_config=None,
) -> InvocationResult:
    if isinstance(program, str):
        program = parse_ok(program)
    if registry is None:
        registry = fresh_registry()
    config = SchedulerConfig(workers=workers, seed=seed)
    runtime = Runtime(program, registry, EventSink(), config, gc_config=gc_config)
    return runtime.evaluate(api, args)


@pytest.fixture(scope="session")
def read_file_program() -> Program:
    return parse_ok(READ_FILE_SOURCE)


@pytest.fixture()
def read_file_registry() -> CapabilityRegistry:
    return fresh_registry(files={"file.txt": READ_FILE_CONTENT})


@pytest.fixture(scope="session")
def corpus():
    return make_corpus()


@pytest.fixture(scope="session")
def parsed_corpus(corpus):
    return [(entry, parse_ok(entry.source)) for entry in corpus]
