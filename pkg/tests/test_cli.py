import json
import subprocess
import sys

import pytest

from tensordeli.cli import EXIT_FAILED, EXIT_IO, EXIT_OK, EXIT_USAGE, main
from tensordeli.experiments import CSV_COLUMNS, SUMMARY_COLUMNS


@pytest.fixture
def cp_dir(tmp_path):
    out = tmp_path / "cp"
    assert main(["generate", "--n", "10", "--d", "3", "--r", "2", "--seed", "1", "--out", str(out),
                 "--dense", str(tmp_path / "t.txt")]) == EXIT_OK
    return out


def test_generate_and_complete(cp_dir, tmp_path, capsys):
    out = tmp_path / "res"
    code = main(["complete", str(tmp_path / "t.txt"), "--out", str(out), "--r", "2", "--mu0", "3"])
    assert code == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["success"] and report["diagnostics"]["rel_error_vs_input"] <= 1e-8
    assert "success=true" in capsys.readouterr().out


def test_complete_nonadaptive_with_als(cp_dir, tmp_path):
    code = main(["complete", str(cp_dir), "--out", str(tmp_path / "res"), "--r", "2",
                 "--variant", "nonadaptive", "--als-iters", "2"])
    assert code in (EXIT_OK, EXIT_FAILED)


def test_complete_config_file_and_overrides(cp_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"r": 5, "s": 3}))
    out = tmp_path / "res"
    assert main(["complete", str(cp_dir), "--out", str(out), "--config", str(cfg), "--r", "2",
                 "--slices", "0,1,2"]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["r"] == 2 and report["diagnostics"]["slices"] == [0, 1, 2]


def test_usage_errors(cp_dir, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["complete"])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["bogus"])
    assert info.value.code == EXIT_USAGE
    assert main(["complete", str(cp_dir), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert main(["complete", str(cp_dir), "--out", str(tmp_path / "o"), "--r", "2", "--s", "1"]) == EXIT_USAGE


def test_io_errors(tmp_path):
    assert main(["complete", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "o"), "--r", "2"]) == EXIT_IO
    bad = tmp_path / "bad.txt"
    bad.write_text("dims: 2 2 2\n1 2 x\n")
    assert main(["complete", str(bad), "--out", str(tmp_path / "o"), "--r", "1"]) == EXIT_IO
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    assert main(["sweep", "--config", str(cfg)]) == EXIT_IO


def test_completion_failure_exit_code(tmp_path):
    # a rank-3 tensor completed at rank 1 cannot succeed
    main(["generate", "--n", "6", "--d", "3", "--r", "3", "--out", str(tmp_path / "cp")])
    code = main(["complete", str(tmp_path / "cp"), "--out", str(tmp_path / "o"), "--r", "1"])
    assert code == EXIT_FAILED


def test_sweep_and_report(tmp_path):
    rows, summary = tmp_path / "rows.csv", tmp_path / "summary.csv"
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"n": 10, "d": 3, "r": 2, "trials": 2, "sweep": {"gamma": [0.2, 0.8]}}))
    assert main(["sweep", "--config", str(cfg), "--out", str(rows), "--summary", str(summary),
                 "--no-timing", "--workers", "2"]) == EXIT_OK
    lines = rows.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS) and len(lines) == 5
    assert summary.read_text().splitlines()[0] == ",".join(SUMMARY_COLUMNS)
    again = tmp_path / "again.csv"
    main(["sweep", "--config", str(cfg), "--out", str(again), "--no-timing"])
    assert again.read_bytes() == rows.read_bytes()
    report = tmp_path / "report.csv"
    assert main(["report", str(rows), "--out", str(report)]) == EXIT_OK
    assert len(report.read_text().splitlines()) == 3


def test_report_rejects_foreign_csv(tmp_path):
    other = tmp_path / "x.csv"
    other.write_text("a,b\n1,2\n")
    assert main(["report", str(other)]) == EXIT_IO


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tensordeli.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "sweep" in proc.stdout
