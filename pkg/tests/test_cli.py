"""Command-line driver tests: exit codes, canonical stdout, file outputs."""

from __future__ import annotations

import json

import pytest

from conftest import (
    READ_FILE_CONTENT,
    READ_FILE_SOURCE,
    THREE_NODE_SOURCE,
    three_node_scenario_dict,
)
from edgekernel.cli import (
    EXIT_DIVERGENCE,
    EXIT_OK,
    EXIT_PROGRAM_ERROR,
    EXIT_USAGE,
    CliError,
    main,
    parse_size,
)

DOUBLE_SOURCE = """
api main(n: Int): APIResult<Int, String> {
  return APIResult::success(n * 2);
}
"""

KV_SOURCE = """
import Kv;

action pick(k: String): String {
  let r = Task::run<Kv::Get>(k);
  match(r) {
    APIResult::Success => { return r.value; }
    _ => { yield APIResult::error("no key"); }
  }
}

api get(k: String): APIResult<String, String> {
  return APIResult::success(pick(k));
}
"""

SUCCESS_42 = '{"e":"APIResult","k":"enum","t":"Success","v":{"k":"int","v":"42"}}'


@pytest.fixture()
def double_file(tmp_path):
    p = tmp_path / "double.bsql"
    p.write_text(DOUBLE_SOURCE, encoding="utf-8")
    return str(p)


@pytest.fixture()
def reader_setup(tmp_path):
    program = tmp_path / "reader.bsql"
    program.write_text(READ_FILE_SOURCE, encoding="utf-8")
    root = tmp_path / "files"
    root.mkdir()
    (root / "file.txt").write_bytes(READ_FILE_CONTENT)
    return str(program), str(root)


class TestParseSize:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("256K", 256 * 1024),
            ("4M", 4 * 1024**2),
            ("1.6G", int(1.6 * 1024**3)),
            ("512", 512),
            ("4m", 4 * 1024**2),
            (" 64M ", 64 * 1024**2),
        ],
    )
    def test_accepted_forms(self, text, expected):
        assert parse_size(text) == expected

    @pytest.mark.parametrize("text", ["", "4X", "M", "-1K", "1..2M"])
    def test_rejected_forms(self, text):
        with pytest.raises(CliError):
            parse_size(text)

    def test_zero_is_not_positive(self):
        with pytest.raises(CliError, match="not positive"):
            parse_size("0")


class TestParseCliValue:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("21", 21),
            ("-7", -7),
            ("true", True),
            ("false", False),
            ("none", None),
            ('0x"00ff"', b"\x00\xff"),
            ('{"k":"int","v":"5"}', 5),
            ("file.txt", "file.txt"),
            ("21 apples", "21 apples"),
        ],
    )
    def test_forms(self, text, expected):
        from edgekernel.cli import parse_cli_value

        assert parse_cli_value(text) == expected


class TestRun:
    def test_success_prints_canonical_result(self, double_file, capsys):
        assert main(["run", double_file, "main", "21"]) == EXIT_OK
        out, err = capsys.readouterr()
        assert out == SUCCESS_42 + "\n"
        assert err.startswith("run {")

    def test_stdout_is_identical_across_runs(self, double_file, capsys):
        main(["run", double_file, "main", "21"])
        first = capsys.readouterr().out
        main(["run", double_file, "main", "21"])
        assert capsys.readouterr().out == first

    def test_error_result_exits_one(self, reader_setup, capsys):
        program, root = reader_setup
        code = main(["run", program, "fetch", "missing.txt", "--fs-root", root])
        assert code == EXIT_PROGRAM_ERROR
        assert '"t":"Error"' in capsys.readouterr().out

    def test_fs_root_serves_files(self, reader_setup, capsys):
        program, root = reader_setup
        assert main(["run", program, "fetch", "file.txt", "--fs-root", root]) == EXIT_OK
        assert '"t":"Success"' in capsys.readouterr().out

    def test_kv_seeding(self, tmp_path, capsys):
        p = tmp_path / "kv.bsql"
        p.write_text(KV_SOURCE, encoding="utf-8")
        assert main(["run", str(p), "get", "greeting", "--kv", "greeting=hello"]) == EXIT_OK
        assert '"v":{"k":"str","v":"hello"}' in capsys.readouterr().out

    def test_canonical_argument_form(self, double_file, capsys):
        code = main(["run", double_file, "main", '{"k":"int","v":"21"}'])
        assert code == EXIT_OK
        assert capsys.readouterr().out == SUCCESS_42 + "\n"

    def test_missing_file_is_usage_error(self, tmp_path, capsys):
        code = main(["run", str(tmp_path / "ghost.bsql"), "main"])
        assert code == EXIT_USAGE
        assert "cannot read" in capsys.readouterr().err

    def test_syntax_error_is_usage_error(self, tmp_path, capsys):
        p = tmp_path / "bad.bsql"
        p.write_text("api main(: Int", encoding="utf-8")
        assert main(["run", str(p), "main"]) == EXIT_USAGE
        assert "bad.bsql" in capsys.readouterr().err

    def test_validation_error_is_usage_error(self, tmp_path, capsys):
        p = tmp_path / "bad.bsql"
        p.write_text(
            "api main(): APIResult<Int, String> { return APIResult::success(nope); }",
            encoding="utf-8",
        )
        assert main(["run", str(p), "main"]) == EXIT_USAGE
        assert "nope" in capsys.readouterr().err

    def test_unknown_api_is_usage_error(self, double_file, capsys):
        assert main(["run", double_file, "ghost"]) == EXIT_USAGE
        assert "ghost" in capsys.readouterr().err

    def test_undersized_nursery_is_usage_error(self, double_file, capsys):
        code = main(["run", double_file, "main", "21", "--nursery", "128K"])
        assert code == EXIT_USAGE
        assert "nursery" in capsys.readouterr().err

    def test_bad_size_text_is_usage_error(self, double_file, capsys):
        code = main(["run", double_file, "main", "21", "--nursery", "huge"])
        assert code == EXIT_USAGE
        assert "bad size" in capsys.readouterr().err

    def test_zero_workers_is_usage_error(self, double_file, capsys):
        code = main(["run", double_file, "main", "21", "--workers", "0"])
        assert code == EXIT_USAGE
        assert "--workers" in capsys.readouterr().err

    def test_missing_subcommand_is_usage_exit(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == EXIT_USAGE
        capsys.readouterr()


class TestProfileEnv:
    def test_profile_sets_defaults(self, monkeypatch):
        from edgekernel.cli import _profile_defaults

        monkeypatch.setenv("EDGEKERNEL_PROFILE", "server")
        assert _profile_defaults() == (4 * 1024**2, 4)
        monkeypatch.setenv("EDGEKERNEL_PROFILE", "embedded")
        nursery, workers = _profile_defaults()
        assert workers == 1
        monkeypatch.delenv("EDGEKERNEL_PROFILE")
        assert _profile_defaults() == (nursery, 1)

    def test_unknown_profile_is_usage_error(self, monkeypatch, double_file, capsys):
        monkeypatch.setenv("EDGEKERNEL_PROFILE", "quantum")
        assert main(["run", double_file, "main", "21"]) == EXIT_USAGE
        assert "EDGEKERNEL_PROFILE" in capsys.readouterr().err

    def test_profile_does_not_change_the_result(self, monkeypatch, double_file, capsys):
        main(["run", double_file, "main", "21"])
        baseline = capsys.readouterr().out
        monkeypatch.setenv("EDGEKERNEL_PROFILE", "server")
        main(["run", double_file, "main", "21"])
        assert capsys.readouterr().out == baseline


class TestRecordReplay:
    def test_record_then_replay(self, reader_setup, tmp_path, capsys):
        program, root = reader_setup
        log = tmp_path / "session.ektrace"
        code = main(
            ["record", program, "fetch", "file.txt", "--fs-root", root, "--out", str(log)]
        )
        assert code == EXIT_OK
        record_out = capsys.readouterr().out
        assert '"t":"Success"' in record_out
        assert log.exists()

        code = main(["replay", program, str(log)])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        lines = out.strip().split("\n")
        assert lines[-1] == "REPLAY-OK"
        assert lines[0] == record_out.strip()

    def test_record_of_failing_run_exits_one_but_writes_the_log(
        self, reader_setup, tmp_path, capsys
    ):
        program, root = reader_setup
        log = tmp_path / "fail.ektrace"
        code = main(
            ["record", program, "fetch", "nope.txt", "--fs-root", root, "--out", str(log)]
        )
        assert code == EXIT_PROGRAM_ERROR
        assert log.exists()
        capsys.readouterr()
        assert main(["replay", program, str(log)]) == EXIT_PROGRAM_ERROR
        assert "REPLAY-OK" in capsys.readouterr().out

    def test_snapshots_written_and_resumable(self, reader_setup, tmp_path, capsys):
        program, root = reader_setup
        log = tmp_path / "snap.ektrace"
        code = main(
            [
                "record", program, "fetch", "file.txt",
                "--fs-root", root, "--out", str(log), "--snapshot-turns", "1",
            ]
        )
        assert code == EXIT_OK
        snaps = sorted(tmp_path.glob("snap.seq*.eksnap"))
        assert len(snaps) == 1
        capsys.readouterr()

        code = main(["replay", program, str(log), "--resume", str(snaps[0])])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "REPLAY-OK" in out
        assert '"t":"Success"' in out

    def test_replay_against_wrong_program_exits_three(
        self, reader_setup, double_file, tmp_path, capsys
    ):
        program, root = reader_setup
        log = tmp_path / "session.ektrace"
        main(["record", program, "fetch", "file.txt", "--fs-root", root, "--out", str(log)])
        capsys.readouterr()
        assert main(["replay", double_file, str(log)]) == EXIT_DIVERGENCE
        out = capsys.readouterr().out
        assert out.startswith("REPLAY-DIVERGENCE seq=-1")

    def test_corrupt_log_is_usage_error(self, reader_setup, tmp_path, capsys):
        program, root = reader_setup
        log = tmp_path / "session.ektrace"
        main(["record", program, "fetch", "file.txt", "--fs-root", root, "--out", str(log)])
        capsys.readouterr()
        log.write_text(
            log.read_text(encoding="utf-8").replace("EffectRequest", "EffectRequesT", 1),
            encoding="utf-8",
        )
        assert main(["replay", program, str(log)]) == EXIT_USAGE
        assert "digest" in capsys.readouterr().err

    def test_bad_snapshot_turns_is_usage_error(self, reader_setup, tmp_path, capsys):
        program, root = reader_setup
        code = main(
            [
                "record", program, "fetch", "file.txt", "--fs-root", root,
                "--out", str(tmp_path / "x.ektrace"), "--snapshot-turns", "one,2",
            ]
        )
        assert code == EXIT_USAGE
        assert "snapshot-turns" in capsys.readouterr().err


class TestBindings:
    def test_openapi_to_stdout(self, double_file, capsys):
        assert main(["bindings", double_file]) == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert doc["openapi"].startswith("3.")
        assert "/api/main" in doc["paths"]

    def test_jsonrpc_to_file(self, double_file, tmp_path, capsys):
        out = tmp_path / "rpc.json"
        assert main(["bindings", double_file, "--flavor", "jsonrpc", "--out", str(out)]) == EXIT_OK
        assert capsys.readouterr().out.strip() == str(out)
        doc = json.loads(out.read_text(encoding="utf-8"))
        assert [m["name"] for m in doc["methods"]] == ["main"]

    def test_emission_is_deterministic(self, double_file, capsys):
        main(["bindings", double_file])
        first = capsys.readouterr().out
        main(["bindings", double_file])
        assert capsys.readouterr().out == first


class TestBenchGc:
    ARGS = [
        "bench-gc", "--nursery", "256K", "--live-set", "1M",
        "--allocs", "2000", "--value-bytes", "4096",
    ]

    def test_deterministic_stdout_with_stats_on_stderr(self, capsys):
        assert main(list(self.ARGS)) == EXIT_OK
        out, err = capsys.readouterr()
        report = json.loads(out)
        assert sorted(report) == [
            "allocs", "heap_limit", "live_bytes", "minor_collections",
            "nursery", "promoted_bytes", "reserve_bytes", "value_bytes",
        ]
        assert report["allocs"] == 2000
        assert report["nursery"] == 256 * 1024
        assert report["reserve_bytes"] == 256 * 1024 + 128 * 1024
        assert report["live_bytes"] >= 1024**2
        assert err.startswith("bench-gc {")
        assert "max_pause_us" in err

        assert main(list(self.ARGS)) == EXIT_OK
        assert json.loads(capsys.readouterr().out) == report

    def test_bad_nursery_is_usage_error(self, capsys):
        assert main(["bench-gc", "--nursery", "blue"]) == EXIT_USAGE
        assert "bad size" in capsys.readouterr().err


class TestSimulate:
    def scenario_file(self, tmp_path, **overrides):
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(three_node_scenario_dict(**overrides)), encoding="utf-8")
        return path

    def test_run_dir_and_manifest_stdout(self, tmp_path, capsys):
        scenario = self.scenario_file(tmp_path)
        out_dir = tmp_path / "rundir"
        assert main(["simulate", str(scenario), "--out", str(out_dir)]) == EXIT_OK
        out, err = capsys.readouterr()
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert out == json.dumps(manifest, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"
        assert sorted(p.name for p in out_dir.iterdir()) == [
            "frontend.ektrace", "leaf.ektrace", "manifest.json", "mid.ektrace",
        ]
        assert '"clock_end":100' in err

    def test_replay_flag_verifies_all_nodes(self, tmp_path, capsys):
        scenario = self.scenario_file(tmp_path)
        code = main(["simulate", str(scenario), "--out", str(tmp_path / "rd"), "--replay"])
        assert code == EXIT_OK
        assert capsys.readouterr().out.strip().endswith("REPLAY-OK")

    def test_program_path_relative_to_scenario(self, tmp_path, capsys):
        (tmp_path / "chain.bsql").write_text(THREE_NODE_SOURCE, encoding="utf-8")
        doc = three_node_scenario_dict()
        del doc["source"]
        doc["program"] = "chain.bsql"
        scenario = tmp_path / "scenario.json"
        scenario.write_text(json.dumps(doc), encoding="utf-8")
        assert main(["simulate", str(scenario), "--out", str(tmp_path / "rd")]) == EXIT_OK
        capsys.readouterr()

    def test_corrupt_scenario_is_usage_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json", encoding="utf-8")
        assert main(["simulate", str(bad), "--out", str(tmp_path / "rd")]) == EXIT_USAGE
        assert "unparseable" in capsys.readouterr().err

    def test_unknown_fault_kind_is_usage_error(self, tmp_path, capsys):
        scenario = self.scenario_file(
            tmp_path, network={"faults": [{"index": 0, "kind": "teleport"}]}
        )
        assert main(["simulate", str(scenario), "--out", str(tmp_path / "rd")]) == EXIT_USAGE
        assert "fault" in capsys.readouterr().err
