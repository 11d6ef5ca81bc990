"""Log format, record/replay fidelity, mutation detection, snapshot/resume."""

from __future__ import annotations

import hashlib
import json

import pytest

from conftest import (
    READ_FILE_CONTENT,
    READ_FILE_SOURCE,
    fresh_registry,
    parse_ok,
)
from edgekernel.bapi import EnumVal, encode_canonical
from edgekernel.lang import parse, program_hash
from edgekernel.trace import (
    LogCorrupt,
    ReplayDivergence,
    ReplayLog,
    SnapshotIncompatible,
    TraceEvent,
    TraceError,
    parse_trace,
    record,
    render_trace,
    replay,
    resume_from,
    snapshot_at,
)

TWO_READS_SOURCE = """
import Kv;

action take(k: String): String {
  let r = Task::run<Kv::Get>(k);
  match(r) {
    APIResult::Success => { return r.value; }
    _ => { yield APIResult::error("missing"); }
  }
}

api pair(): APIResult<String, String> {
  let a = take("first");
  let b = take("second");
  return APIResult::success(a + "+" + b);
}
"""

TWO_READS_KV = {"first": "F", "second": "S"}


def record_reference(paths=("file.txt",), **kwargs):
    program = parse_ok(READ_FILE_SOURCE)
    return program, record(
        program,
        [("fetch", [p]) for p in paths],
        registry=fresh_registry(files={"file.txt": READ_FILE_CONTENT}),
        **kwargs,
    )


def record_two_reads(**kwargs):
    program = parse_ok(TWO_READS_SOURCE)
    return program, record(
        program,
        [("pair", [])],
        registry=fresh_registry(kv=TWO_READS_KV),
        **kwargs,
    )


# ----------------------------------------------------------------------
# Log text format


class TestLogFormat:
    def test_header_event_digest_layout(self):
        program, run = record_reference()
        lines = run.text.strip().split("\n")
        header = json.loads(lines[0])
        assert header["format"] == "EKTRACE1"
        assert header["program"] == program_hash(program)
        assert header["node"] == "local"
        assert (header["workers"], header["seed"]) == (1, 0)

        body = lines[1:-1]
        assert [json.loads(l)["seq"] for l in body] == list(range(len(body)))

        trailer = json.loads(lines[-1])
        payload = "".join(f"{l}\n" for l in lines[:-1]).encode("utf-8")
        assert trailer == {"digest": hashlib.sha256(payload).hexdigest()}

    def test_lines_are_canonical_json(self):
        _, run = record_reference()
        for line in run.text.strip().split("\n"):
            obj = json.loads(line)
            canonical = json.dumps(
                obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False
            )
            assert line == canonical

    def test_parse_round_trip(self):
        _, run = record_reference()
        log = parse_trace(run.text)
        assert log.header == run.log.header
        assert log.events == run.log.events

    def test_render_parse_render_is_stable(self):
        _, run = record_reference()
        log = parse_trace(run.text)
        assert render_trace(log.header, log.events) == run.text

    def test_event_kind_coverage(self):
        _, run = record_reference(paths=("file.txt", "nope.txt"))
        kinds = {e.kind for e in run.log.events}
        assert kinds == {
            "ApiEnter",
            "ApiExit",
            "Spawn",
            "ScheduleChoice",
            "EffectRequest",
            "EffectResponse",
            "Yield",
        }

    def test_pure_program_records_zero_effect_events(self):
        program = parse_ok(
            "api main(): APIResult<Int, String> { return APIResult::success(2 + 2); }"
        )
        run = record(program, [("main", [])])
        kinds = [e.kind for e in run.log.events]
        assert "EffectRequest" not in kinds
        assert "EffectResponse" not in kinds
        assert kinds[0] == "ApiEnter" and kinds[-1] == "ApiExit"


class TestLogParsing:
    def make_text(self, mutate=None):
        _, run = record_reference()
        lines = run.text.strip().split("\n")
        if mutate:
            lines = mutate(lines)
            payload = "".join(f"{l}\n" for l in lines[:-1]).encode("utf-8")
            lines[-1] = json.dumps(
                {"digest": hashlib.sha256(payload).hexdigest()},
                sort_keys=True,
                separators=(",", ":"),
            )
        return "".join(f"{l}\n" for l in lines)

    def test_digest_mismatch_is_corrupt(self):
        _, run = record_reference()
        flipped = run.text.replace("EffectRequest", "EffectRequesT", 1)
        with pytest.raises(LogCorrupt, match="digest"):
            parse_trace(flipped)

    def test_missing_trailer_is_corrupt(self):
        _, run = record_reference()
        lines = run.text.strip().split("\n")[:-1]
        with pytest.raises(LogCorrupt):
            parse_trace("".join(f"{l}\n" for l in lines))

    def test_seq_gap_is_corrupt(self):
        def drop_middle(lines):
            return [lines[0]] + lines[2:]

        with pytest.raises(LogCorrupt, match="seq"):
            parse_trace(self.make_text(mutate=drop_middle))

    def test_unknown_kind_is_corrupt(self):
        def rename(lines):
            lines[1] = lines[1].replace('"kind":"', '"kind":"X', 1)
            return lines

        with pytest.raises(LogCorrupt, match="kind"):
            parse_trace(self.make_text(mutate=rename))

    def test_bad_header_is_corrupt(self):
        with pytest.raises(LogCorrupt):
            parse_trace('{"format":"NOPE"}\n')
        with pytest.raises(LogCorrupt):
            parse_trace("not json\n")
        with pytest.raises(LogCorrupt):
            parse_trace("")


# ----------------------------------------------------------------------
# Record determinism and replay fidelity


class TestRecordReplay:
    def test_recording_twice_is_byte_identical(self):
        _, first = record_reference(paths=("file.txt", "nope.txt"))
        _, second = record_reference(paths=("file.txt", "nope.txt"))
        assert first.text == second.text

    def test_replay_reproduces_results_without_handlers(self):
        program, run = record_reference(paths=("file.txt", "nope.txt"))
        report = replay(program, run.text)
        assert [r.encoded for r in report.results] == [r.encoded for r in run.results]
        assert report.results[0].value == EnumVal(
            "APIResult", "Success", READ_FILE_CONTENT
        )
        assert report.results[1].value == EnumVal("APIResult", "Error", "Failed read")

    def test_replay_consumes_the_whole_log(self):
        program, run = record_reference()
        report = replay(program, run.text)
        assert report.events_replayed == len(run.log.events)

    def test_replay_accepts_parsed_log_objects(self):
        program, run = record_reference()
        assert replay(program, run.log).results[0].encoded == run.results[0].encoded

    def test_multi_effect_program_replays(self):
        program, run = record_two_reads()
        report = replay(program, run.text)
        assert report.results[0].value == EnumVal("APIResult", "Success", "F+S")

    def test_replay_rejects_a_different_program(self):
        _, run = record_reference()
        other = parse_ok(TWO_READS_SOURCE)
        with pytest.raises(ReplayDivergence) as exc:
            replay(other, run.text)
        assert exc.value.seq == -1
        assert "program hash" in str(exc.value)

    def test_tampered_response_value_diverges(self):
        program, run = record_two_reads()
        events = []
        victim_seq = None
        for e in run.log.events:
            if e.kind == "EffectResponse" and victim_seq is None:
                victim_seq = e.seq
                payload = dict(e.payload)
                payload["value"] = encode_canonical(
                    EnumVal("APIResult", "Success", "FORGED")
                )
                e = TraceEvent(e.seq, e.kind, e.correlation, payload)
            events.append(e)
        tampered = ReplayLog(run.log.header, events, {})
        with pytest.raises(ReplayDivergence):
            replay(program, tampered)

    def test_truncated_log_diverges(self):
        program, run = record_reference()
        truncated = ReplayLog(run.log.header, run.log.events[:-1], {})
        with pytest.raises(ReplayDivergence, match="inside an invocation"):
            replay(program, truncated)

    def test_byte_mutations_are_never_silent(self):
        # Single-byte substitutions across the log must always be detected:
        # either the file fails to parse or the replay diverges.
        program, run = record_reference(paths=("file.txt", "nope.txt"))
        raw = run.text.encode("utf-8")
        baseline = [r.encoded for r in run.results]
        step = max(1, len(raw) // 40)
        for pos in range(0, len(raw), step):
            original = raw[pos]
            replacement = ord("0") if original != ord("0") else ord("1")
            mutated = raw[:pos] + bytes([replacement]) + raw[pos + 1 :]
            try:
                report = replay(program, mutated.decode("utf-8", errors="strict"))
            except (LogCorrupt, ReplayDivergence, TraceError, UnicodeDecodeError):
                continue
            # Decoded and replayed: the results must not silently match.
            assert [r.encoded for r in report.results] != baseline, f"byte {pos}"

    def test_free_and_recorded_results_agree(self, corpus):
        from conftest import run_program

        for entry in corpus[:10]:
            program = parse_ok(entry.source)
            free = run_program(program, entry.api, list(entry.args), entry.registry())
            run = record(
                program, [(entry.api, list(entry.args))], registry=entry.registry()
            )
            assert run.results[0].encoded == free.encoded, f"corpus {entry.index}"
            report = replay(program, run.text)
            assert report.results[0].encoded == free.encoded, f"corpus {entry.index}"


# ----------------------------------------------------------------------
# Snapshots


class TestSnapshots:
    def test_marks_are_recorded_and_captured(self):
        _, run = record_two_reads(snapshot_turns={1, 3})
        marks = [e for e in run.log.events if e.kind == "SnapshotMark"]
        assert len(marks) == 2
        assert set(run.log.snapshots) == {m.seq for m in marks}
        for blob in run.log.snapshots.values():
            assert isinstance(blob, bytes) and len(blob) > 0

    def test_resume_matches_full_replay_at_every_mark(self):
        program, run = record_two_reads(snapshot_turns={1, 2, 3})
        full = [r.encoded for r in replay(program, run.log).results]
        for seq in sorted(run.log.snapshots):
            blob = snapshot_at(run, seq)
            report = resume_from(program, blob, run.log)
            assert [r.encoded for r in report.results] == full, f"mark {seq}"

    def test_resume_replays_only_the_tail(self):
        program, run = record_two_reads(snapshot_turns={3})
        (seq,) = run.log.snapshots
        report = resume_from(program, run.log.snapshots[seq], run.log)
        assert report.events_replayed < len(run.log.events)

    def test_marks_only_at_quiescent_turns(self):
        _, run = record_two_reads(snapshot_turns={0, 1, 2, 3, 4, 5, 6, 7, 8, 9})
        mark_turns = [
            e.payload["turn"] for e in run.log.events if e.kind == "SnapshotMark"
        ]
        assert mark_turns == sorted(set(mark_turns))
        # Some requested turns land while an effect is in flight and are
        # skipped; with two effects at least two turns must be quiescent.
        assert len(mark_turns) >= 2

    def test_snapshot_rejected_for_different_program(self):
        program, run = record_two_reads(snapshot_turns={1})
        (seq,) = run.log.snapshots
        other = parse_ok(READ_FILE_SOURCE)
        with pytest.raises((SnapshotIncompatible, ReplayDivergence)):
            resume_from(other, run.log.snapshots[seq], run.log)

    def test_snapshot_of_pure_program_resumes(self):
        program = parse_ok(
            """
            function triple(a: Int): Int { return a * 3; }
            api main(x: Int): APIResult<Int, String> {
              let v = triple(x);
              return APIResult::success(v);
            }
            """
        )
        run = record(program, [("main", [5])], snapshot_turns={0})
        assert run.results[0].value == EnumVal("APIResult", "Success", 15)
        (seq,) = run.log.snapshots
        report = resume_from(program, run.log.snapshots[seq], run.log)
        assert report.results[0].encoded == run.results[0].encoded

    def test_snapshot_blob_is_deterministic(self):
        _, first = record_two_reads(snapshot_turns={2})
        _, second = record_two_reads(snapshot_turns={2})
        assert first.log.snapshots == second.log.snapshots

    def test_replay_ignores_marks_without_snapshots(self):
        program, run = record_two_reads(snapshot_turns={1, 3})
        report = replay(program, run.text)
        assert report.results[0].value == EnumVal("APIResult", "Success", "F+S")

    def test_missing_mark_seq_rejected(self):
        program, run = record_two_reads(snapshot_turns={1})
        (seq,) = run.log.snapshots
        blob = run.log.snapshots[seq]
        bare = ReplayLog(run.log.header, [e for e in run.log.events if e.kind != "SnapshotMark"], {})
        with pytest.raises((TraceError, LogCorrupt)):
            resume_from(program, blob, bare)
