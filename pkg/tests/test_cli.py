import json

import pytest
import yaml

from quasitrace.cli import (
    CLAIMS_FILE, EXIT_CONFIG, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_OK, REPORT_FILE, SUMMARY_FILE, exit_code,
    generate_summary_text, main, parse_args, save_report,
)
from quasitrace.config import parse_config

INTEGRABLE = {"order": -2, "dimension": 1, "terms": [], "remainder": "1/(1 + xi_1**2)"}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tasks.yaml"
    data = {
        "numeric": {"precision": 30},
        "tasks": [
            {"kind": "compute", "name": "finite-part", "params": {"symbol": INTEGRABLE}},
            {"kind": "compute", "name": "alpha", "params": {"N": 1, "mu": [10, 100]}},
        ],
    }
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def test_parse_args():
    args = parse_args(["-p", "60", "verify", "parity", "--params", '{"order": -2}'])
    assert args.command == "verify" and args.suite == "parity"
    assert args.precision == 60
    with pytest.raises(SystemExit):
        parse_args(["verify", "nonexistent"])


def test_integrable_finite_part_from_preset(capsys):
    assert main(["--config", "integrable.yaml", "finite-part"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "0.5"


def test_finite_part_from_params(capsys):
    assert main(["finite-part", "--params", json.dumps({"symbol": INTEGRABLE})]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "0.5"


def test_computation_errors_exit_with_failure(capsys):
    assert main(["finite-part"]) == EXIT_FAIL
    assert "symbol" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "absent.yaml"), "run"]) == EXIT_CONFIG
    assert main(["--out", str(tmp_path), "run"]) == EXIT_CONFIG
    assert main(["finite-part", "--params", "[1, 2]"]) == EXIT_CONFIG
    assert main(["finite-part", "--params", "{oops"]) == EXIT_CONFIG


def test_run_writes_reports(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["--config", str(config_file), "--out", str(out), "run"]) == EXIT_OK
    report = json.loads((out / REPORT_FILE).read_text(encoding="utf-8"))
    assert report["status"] == "pass"
    assert len(report["hash"]) == 64
    assert [task["name"] for task in report["tasks"]] == ["finite-part", "alpha"]
    assert report["tasks"][0]["value"] == pytest.approx(0.5)
    summary = (out / SUMMARY_FILE).read_text(encoding="utf-8")
    assert summary.startswith("QUASITRACE VERIFICATION SUMMARY")
    assert "[OK] compute finite-part" in summary
    assert "value: 0.5" in summary
    assert (out / CLAIMS_FILE).read_text(encoding="utf-8").startswith("suite,claim,anchor")
    capsys.readouterr()

    assert main(["--config", str(config_file), "--out", str(out), "report"]) == EXIT_OK
    assert capsys.readouterr().out == summary


def test_reruns_are_deterministic(config_file, tmp_path):
    hashes = []
    for _ in range(2):
        main(["--config", str(config_file), "--out", str(tmp_path), "run"])
        hashes.append(json.loads((tmp_path / REPORT_FILE).read_text(encoding="utf-8"))["hash"])
    assert hashes[0] == hashes[1]


def test_json_only_output(tmp_path):
    config = parse_config({"output": {"directory": str(tmp_path), "formats": ["json"]}})
    save_report(config, [{"kind": "compute", "name": "alpha", "status": "ok", "values": []}])
    assert (tmp_path / REPORT_FILE).exists()
    assert (tmp_path / SUMMARY_FILE).exists()
    assert not (tmp_path / CLAIMS_FILE).exists()


def test_summary_markers_and_exit_codes():
    row = {"suite": "parity", "claim": "c[1] vanishes", "anchor": "alternate coefficients vanish",
           "predicted": 0.0, "fitted": 0.25, "margin": 0.25, "tolerance": 1e-6, "status": "fail"}
    report = {
        "status": "fail",
        "hash": "0" * 64,
        "config": {"numeric": {"precision": 40, "seed": 0}},
        "tasks": [{"kind": "verify", "name": "parity", "status": "fail", "rows": [row]},
                  {"kind": "compute", "name": "alpha", "status": "ok"}],
    }
    text = generate_summary_text(report)
    assert "[FAIL] verify parity" in text
    assert "[FAIL] c[1] vanishes" in text
    assert "[OK] compute alpha" in text
    assert "margin:    0.25 (tolerance 1e-06)" in text
    assert exit_code(report["tasks"]) == EXIT_FAIL
    assert exit_code([{"status": "ok"}, {"status": "inconclusive"}]) == EXIT_INCONCLUSIVE
    assert exit_code([{"status": "pass"}]) == EXIT_OK
