import csv
import io
import json
import re
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from cqqkey.cli import main, parse_and_validate
from cqqkey.counterexample import build_counterexample
from cqqkey.exceptions import ValidationError
from cqqkey.source import source_to_json

from conftest import basis_source

SNAKE = re.compile(r"^[a-z][a-z0-9_]*$")


@pytest.fixture
def src(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(source_to_json(build_counterexample())))
    return str(path)


@pytest.fixture
def perfect(tmp_path):
    path = tmp_path / "perfect.json"
    path.write_text(json.dumps(source_to_json(basis_source())))
    return str(path)


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def keys_are_snake(obj):
    if isinstance(obj, dict):
        return all(SNAKE.match(k) and keys_are_snake(v) for k, v in obj.items())
    if isinstance(obj, list):
        return all(keys_are_snake(v) for v in obj)
    return True


class TestParse:
    def test_valid_configs(self, src):
        cfg = parse_and_validate(["rate", "--source", src, "--z", "3", "--zprime", "2", "--restarts", "64",
                                  "--seed", "7"])
        assert cfg.subcommand == "rate" and cfg.seed == 7 and cfg.params["z"] == 3
        cfg = parse_and_validate(["simulate", "--source", src, "--n", "8", "--delta", "0.2", "--seed", "42"])
        assert cfg.params == {"n": 8, "delta": 0.2, "eta": None}
        assert parse_and_validate(["counterexample"]).seed == 0

    def test_z_zero(self, capsys):
        with pytest.raises(ValidationError, match="z must be ≥ 1"):
            parse_and_validate(["rate", "--z", "0"])
        code, _, err = run(["rate", "--z", "0"], capsys)
        assert code == 1 and "z must be ≥ 1" in err

    def test_errors_exit_one(self, capsys, tmp_path):
        assert run(["rate", "--source", str(tmp_path / "missing.json")], capsys)[0] == 1
        assert run(["rate", "--bogus"], capsys)[0] == 1
        bad = tmp_path / "bad.json"
        bad.write_text('{"alphabet": 2}')
        code, _, err = run(["validate", "--source", str(bad)], capsys)
        assert code == 1 and "schema" in err

    def test_threads(self, monkeypatch):
        monkeypatch.setenv("CQQ_THREADS", "3")
        assert parse_and_validate(["counterexample"]).threads == 3
        assert parse_and_validate(["counterexample", "--threads", "2"]).threads == 2
        with pytest.raises(ValidationError):
            parse_and_validate(["counterexample", "--threads", "0"])

    def test_help(self, capsys):
        code, out, _ = run(["--help"], capsys)
        assert code == 0 and "counterexample" in out


class TestRun:
    def test_counterexample_csv(self, capsys):
        code, out, _ = run(["counterexample", "--grid", "5", "--n", "2"], capsys)
        rows = rows_of(out)
        assert code == 0 and len(rows) == 5
        assert list(rows[0]) == ["p", "error", "security_index", "branch"]
        assert all(float(r["error"]) <= 1e-12 for r in rows)

    def test_regularity_csv(self, src, capsys):
        code, out, _ = run(["regularity", "--source", src, "--delta-grid", "0.05:0.5:10"], capsys)
        mods = [float(r["modulus"]) for r in rows_of(out)]
        assert code == 0 and len(mods) == 10
        assert all(a <= b for a, b in zip(mods, mods[1:]))

    def test_chernov_table(self, capsys):
        code, out, _ = run(["chernov", "--n", "4", "--m-list", "16,64,256", "--eps", "0.5", "--trials", "200"],
                           capsys)
        assert code == 0 and len(rows_of(out)) == 3

    def test_classical_chernov(self, capsys):
        code, out, _ = run(["chernov", "--mode", "classical", "--n", "50", "--trials", "500", "--format", "json"],
                           capsys)
        assert code == 0 and json.loads(out)["rows"][0]["holds"]

    def test_rate_and_validate_json(self, perfect, capsys):
        code, out, _ = run(["rate", "--source", perfect, "--restarts", "2"], capsys)
        payload = json.loads(out)
        assert code == 0 and payload["value"] == pytest.approx(1.0, abs=1e-6) and keys_are_snake(payload)
        code, out, _ = run(["validate", "--source", perfect], capsys)
        assert json.loads(out) == {"valid": True, "members": 1, "groups": 1, "alphabet": 2, "dim_b": 2,
                                   "dim_e": 1}

    def test_simulate(self, perfect, capsys):
        code, out, _ = run(["simulate", "--source", perfect, "--n", "4", "--delta", "0.3", "--seed", "1"], capsys)
        payload = json.loads(out)
        assert code == 0 and keys_are_snake(payload)
        assert payload["report"]["members"][0]["error_prob"] <= 1

    def test_json_keys_everywhere(self, src, capsys):
        for argv in (["counterexample", "--format", "json"], ["counterexample", "--blind", "--format", "json"],
                     ["regularity", "--source", src, "--format", "json"],
                     ["chernov", "--trials", "5", "--format", "json"]):
            code, out, _ = run(argv, capsys)
            assert code == 0 and keys_are_snake(json.loads(out)), argv

    def test_resource_cap_exits_two(self, perfect, capsys):
        code, _, err = run(["rate", "--source", perfect, "--k", "3", "--max-dim", "10"], capsys)
        assert code == 2 and "resource" in err

    def test_byte_identical_and_atomic(self, src, tmp_path, capsys):
        outs = []
        for i, threads in enumerate(("1", "4")):
            path = tmp_path / f"out{i}.json"
            code, _, _ = run(["rate", "--source", src, "--restarts", "4", "--seed", "9", "--threads", threads,
                              "-o", str(path)], capsys)
            assert code == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]
        assert not [p for p in tmp_path.iterdir() if p.name.startswith(".cqqkey-")]

    def test_failed_run_leaves_no_file(self, perfect, tmp_path, capsys):
        path = tmp_path / "never.json"
        assert run(["rate", "--source", perfect, "--k", "3", "--max-dim", "10", "-o", str(path)], capsys)[0] == 2
        assert not path.exists()


@pytest.mark.skipif(shutil.which("cqqkey") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["cqqkey", "counterexample", "--grid", "4", "--n", "1"], capture_output=True, text=True)
    assert res.returncode == 0 and len(rows_of(res.stdout)) == 4
    res = subprocess.run([sys.executable, "-m", "cqqkey", "rate", "--z", "0"], capture_output=True, text=True)
    assert res.returncode == 1 and "z must be ≥ 1" in res.stderr
