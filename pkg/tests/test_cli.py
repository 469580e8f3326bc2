import csv
import io
import json
import subprocess
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from scipy.linalg import expm, logm

from flowexp.cli import (EXIT_INVARIANT, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, RunConfig, UsageError,
                         cbhd_table_csv, main, read_report, render_value, report_writer)
from flowexp.expansions import ErrorReport
from flowexp.hall import Bracket

GOLDEN = Path(__file__).parent / "golden"


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("n_args", [2, 3])
@pytest.mark.parametrize("order", [1, 2, 3, 4, 5])
def test_cbhd_golden_byte_exact(n_args, order):
    expected = (GOLDEN / f"cbhd_a{n_args}_o{order}.csv").read_bytes()
    assert cbhd_table_csv(n_args, order).encode() == expected


@pytest.mark.parametrize("n_args", [2, 3])
def test_cbhd_golden_against_matrix_log(n_args):
    # independent oracle: scipy logm of a product of small matrix exponentials
    rows = list(csv.DictReader(io.StringIO((GOLDEN / f"cbhd_a{n_args}_o5.csv").read_text())))
    rng = np.random.default_rng(n_args)
    s = 0.03
    mats = [s * rng.normal(size=(4, 4)) for _ in range(n_args)]
    Z = np.zeros((4, 4))
    cache = {}

    def sub(key):
        if isinstance(key, int):
            return mats[key - 1]
        if key not in cache:
            a, b = sub(key[0]), sub(key[1])
            cache[key] = a @ b - b @ a
        return cache[key]

    for r in rows:
        key = Bracket.from_key(_parse(json.loads(r["bracket"]))).key
        Z += float(Fraction(r["value"])) * sub(key)
    prod = np.eye(4)
    for A in mats:
        prod = prod @ expm(A)
    assert np.max(np.abs(Z - logm(prod))) < 1e-8


def _parse(x):
    return x if isinstance(x, int) else (_parse(x[0]), _parse(x[1]))


def test_cbhd_command(capsys):
    code, out, _ = run(capsys, "cbhd", "--args", "2", "--order", "4")
    assert code == EXIT_OK
    assert out == (GOLDEN / "cbhd_a2_o4.csv").read_text()
    code, out, _ = run(capsys, "cbhd", "--args", "2", "--order", "3", "--format", "json")
    rows = json.loads(out)["rows"]
    assert rows[2]["value"] == {"exact": "1/2", "decimal": 0.5}


def test_hall_command(capsys):
    code, out, _ = run(capsys, "hall", "--q", "2", "--maxlen", "4")
    assert code == EXIT_OK
    assert len(out.splitlines()) == 8
    code, out, _ = run(capsys, "hall", "--q", "2", "--maxlen", "4", "--format", "json")
    assert len(json.loads(out)["elements"]) == 8


def test_sweep_command(capsys, tmp_path):
    target = tmp_path / "sweep.csv"
    code, out, _ = run(capsys, "sweep", "--method", "magnus", "--M", "2", "--out", str(target))
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[0] == "scale,error,slope_so_far"
    slope = float(lines[-1].split()[-1])
    assert abs(slope - 3) < 0.3
    assert target.read_text() == out


def test_coords_command(capsys):
    code, out, err = run(capsys, "coords", "--kind", "pseudo", "--q", "1", "--M", "2", "--N0", "2")
    assert code == EXIT_OK and "seed" in err
    assert out.splitlines()[1].startswith("0,1,0,1,0,0")


def test_eval_command(capsys):
    code, out, _ = run(capsys, "eval", "--method", "magnus", "--M", "2")
    assert code == EXIT_OK
    rep = ErrorReport.from_json(out)
    assert rep.errors[0] < 1e-2


def test_eval_with_files(capsys, tmp_path):
    from flowexp.fixtures import normal_form_3d
    from flowexp.signals import Control, ControlTuple
    f0, f1 = normal_form_3d()
    fpath = tmp_path / "fields.json"
    fpath.write_text(json.dumps({"fields": {"0": f0.to_dict(), "1": f1.to_dict()}}))
    cpath = tmp_path / "controls.json"
    cpath.write_text(ControlTuple.affine([Control.constant(1, 1)]).to_json())
    code, out, _ = run(capsys, "eval", "--method", "cf", "--M", "3", "--fields", str(fpath),
                       "--controls", str(cpath), "--p", "0,0,0", "--t", "1/8")
    assert code == EXIT_OK
    assert json.loads(out)["errors"][0] < 1e-3


def test_counterexample_commands(capsys):
    code, out, _ = run(capsys, "counterexample", "cbh-divergence", "--mmax", "12")
    assert code == EXIT_OK
    d = json.loads(out)
    assert d["rows"][0]["theta"]["exact"] == "19/20"
    code, out, _ = run(capsys, "counterexample", "multi-input-failure")
    rows = json.loads(out)["rows"]
    assert abs(rows[-1]["x2"] - rows[-1]["closed_form"]) < 1e-6


def test_identity_command(capsys):
    code, out, err = run(capsys, "identity", "--r", "1", "--nu", "2", "--controls", "2")
    assert code == EXIT_OK and json.loads(out)["all_equal"]
    assert "20240611" in err


def test_selftest_command(capsys):
    code, out, _ = run(capsys, "selftest")
    assert code == EXIT_OK
    assert out.count(" ok ") == 6


def test_selftest_reports_failing_suite(capsys, monkeypatch):
    from flowexp import selftest
    suites = list(selftest.SUITES)
    suites[2] = ("coords", lambda rng: ["forced"])
    monkeypatch.setattr(selftest, "SUITES", suites)
    code, out, err = run(capsys, "selftest")
    assert code == EXIT_INVARIANT
    assert "failing suites: 3" in err


@pytest.mark.parametrize("argv", [[], ["bogus"], ["cbhd", "--order", "x"], ["cbhd", "--args", "1"],
                                  ["eval", "--method", "cf", "--fields", "missing.json"],
                                  ["eval", "--method", "cf", "--p", "1,2"]])
def test_usage_errors(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == EXIT_USAGE and "usage error" in err


def test_numeric_failure_exit(capsys):
    # the drift pushes x1 through the pole of f1 before t = 1
    code, _, err = run(capsys, "eval", "--method", "cf", "--fields", "optimal-pair",
                       "--p", "9/10,0", "--t", "1", "--M", "1")
    assert code == EXIT_NUMERIC and "pole" in err


def test_tolerance_env(monkeypatch):
    from flowexp.cli import default_tol
    monkeypatch.setenv("FLOWEXP_TOL", "1e-9")
    assert default_tol() == 1e-9
    monkeypatch.setenv("FLOWEXP_TOL", "abc")
    with pytest.raises(UsageError):
        default_tol()


def test_run_config_validation(tmp_path):
    RunConfig("sweep", grid=[Fraction(1, 8)]).validate()
    with pytest.raises(UsageError):
        RunConfig("sweep").validate()
    with pytest.raises(UsageError):
        RunConfig("eval", field_file=str(tmp_path / "none.json")).validate()


def test_report_writer_round_trip(tmp_path):
    rep = ErrorReport("m", {"t": Fraction(1, 3)}, "t")
    rep.add(0.5, [1.0], [1.5])
    path = tmp_path / "r.json"
    text = report_writer(rep, "json", str(path))
    assert read_report(path.read_text()) == read_report(text)
    assert read_report(text)["params"]["t"] == {"exact": "1/3", "decimal": 1 / 3}
    empty = ErrorReport("m", {}, "t")
    assert report_writer(empty, "csv") == "scale,error,slope_so_far\n"
    with pytest.raises(UsageError):
        report_writer(rep, "json", str(tmp_path / "no" / "dir.json"))


def test_render_value():
    assert render_value({"a": [Fraction(-1, 4)]}) == {"a": [{"exact": "-1/4", "decimal": -0.25}]}


def test_console_script():
    r = subprocess.run([sys.executable, "-m", "flowexp.cli", "hall", "--q", "1", "--maxlen", "3"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == "0\tX1"
