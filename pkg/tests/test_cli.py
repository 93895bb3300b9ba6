import csv
import io
import subprocess
import sys

import pytest

from gwgenealogy.cli import EXIT_CHECK, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, run


def _run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def _rows(text):
    body = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.reader(body))


def _meta(text):
    return dict(line[2:].split("=", 1) for line in text.splitlines() if line.startswith("# "))


def test_fdd_rows_and_metadata():
    code, out, err = _run("fdd", "--spec", "bd:0.25,0.75", "--T", "2", "--k", "3", "--mesh", "1", "--chain", "1,2|3")
    assert code == EXIT_OK
    meta = _meta(out)
    assert meta["command"] == "fdd" and meta["spec"] == "bd:0.25,0.75"
    rows = _rows(out)
    assert float(rows[1][rows[0].index("value")]) == pytest.approx(0.062853125906333834, abs=1e-12)
    assert err.strip()


def test_fdd_all_chains_sum(tmp_path):
    target = tmp_path / "fdd.csv"
    code, _, _ = _run("fdd", "--spec", "bd:0,1", "--T", "1", "--k", "2", "--mesh", "0.5", "--out", str(target), "--plot-dir", str(tmp_path))
    assert code == EXIT_OK
    rows = _rows(target.read_text())
    col = rows[0].index("value")
    assert sum(float(r[col]) for r in rows[1:]) == pytest.approx(0.6321205588285577, abs=1e-8)
    assert (tmp_path / "fdd.png").exists()


def test_csv_only_by_default(tmp_path):
    code, _, _ = _run("pmf", "--spec", "geom:0.6", "--T", "1", "--out", str(tmp_path / "p.csv"))
    assert code == EXIT_OK
    assert [p.name for p in tmp_path.iterdir()] == ["p.csv"]


@pytest.mark.parametrize(
    "argv",
    [
        ["semigroup", "--spec", "bd:0,1", "--T", "1", "--s", "0,0.5"],
        ["pmf", "--spec", "pmf:0:0.5,2:0.5", "--T", "3", "--jmax", "5"],
        ["split", "--spec", "bd:0,1", "--T", "1", "--k", "3"],
        ["split", "--spec", "bd:0,1", "--T", "1", "--k", "3", "--path", "1,2,3;1,2|3;1|2|3", "--u", "0.2,0.6"],
        ["split", "--spec", "bd:0,1", "--T", "1", "--k", "2", "--path", "1,2;1|2", "--windows", "0.2:0.5"],
        ["mixture", "--spec", "bd:0.25,0.75", "--T", "2", "--k", "2"],
        ["transition", "--spec", "bd:0,1", "--T", "2", "--k", "3", "--s", "0.3", "--gamma", "1,2|3", "--block", "1,2", "--t1", "0.5", "--t2", "1"],
        ["project", "--spec", "bd:0,1", "--T", "1", "--k", "2", "--j", "1", "--mesh", "0.5", "--chain", "1|2"],
        ["fdd", "--spec", "bd:0,1", "--T", "1", "--k", "2", "--mesh", "0.5", "--chain", "1|2", "--coalescent"],
        ["identities", "--spec", "geom:0.6", "--k", "3", "--meshes", "2"],
        ["simulate", "--spec", "bd:0,1", "--T", "1", "--k", "2", "--replicates", "5", "--mesh", "0.5"],
    ],
)
def test_commands_succeed(argv):
    code, out, err = _run(*argv)
    assert code == EXIT_OK, err
    assert len(_rows(out)) > 1


def test_transition_rows_sum_to_one():
    code, out, _ = _run("transition", "--spec", "bd:0,1", "--T", "2", "--k", "3", "--s", "0.3", "--gamma", "1,2,3", "--block", "1,2,3", "--t1", "0.5", "--t2", "1")
    rows = _rows(out)
    col = rows[0].index("probability")
    assert sum(float(r[col]) for r in rows[1:]) == pytest.approx(1.0, abs=1e-8)


def test_limit_command():
    code, out, err = _run("limit", "--spec", "bd:0,1", "--k", "2", "--T", "4,8", "--probes", "0.5")
    assert code == EXIT_OK and "shrinking=True" in err


def test_simulate_event_log(tmp_path):
    events = tmp_path / "ev.csv"
    code, out, _ = _run("simulate", "--spec", "bd:0,1", "--T", "1", "--k", "2", "--replicates", "3", "--events", str(events))
    assert code == EXIT_OK
    assert events.read_text().startswith("replicate,time,parent,n_children")
    assert "acceptance_rate" in _meta(out)


def test_validate_command_is_reproducible():
    argv = ["validate", "--spec", "bd:0,1", "--law", "fdd", "--T", "1", "--k", "2", "--mesh", "0.5", "--replicates", "2000", "--seed", "4"]
    a, b = _run(*argv), _run(*argv)
    assert a[0] == EXIT_OK and a[1] == b[1]


def test_validate_reports_failure_with_exit_code():
    code, _, err = _run("validate", "--spec", "bd:0,1", "--law", "fdd", "--T", "1", "--k", "2", "--mesh", "0.5",
                        "--replicates", "2000", "--tv-threshold", "0")
    assert code == EXIT_CHECK and "FAIL" in err


@pytest.mark.parametrize(
    "argv,code,needle",
    [
        ([], EXIT_USAGE, ""),
        (["fdd", "--spec", "bd:0,1"], EXIT_USAGE, ""),
        (["fdd", "--spec", "bogus", "--T", "1", "--k", "2", "--mesh", "0.5"], EXIT_USAGE, "error"),
        (["fdd", "--spec", "bd:0,1", "--T", "1", "--k", "2", "--mesh", "1.5"], EXIT_USAGE, "mesh"),
        (["validate", "--spec", "bd:0,1", "--law", "fdd", "--T", "1", "--k", "2", "--replicates", "2000"], EXIT_USAGE, "mesh"),
        (["limit", "--spec", "bd:0,1", "--regime", "crit", "--T", "10", "--probes", "0.5"], EXIT_USAGE, "regime"),
        (["simulate", "--spec", "bd:0.75,0.25", "--T", "40", "--k", "2", "--replicates", "5"], EXIT_NUMERIC, "acceptance floor"),
    ],
)
def test_error_exit_codes(argv, code, needle):
    got, _, err = _run(*argv)
    assert got == code
    assert needle in err


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "gwgenealogy", "pmf", "--spec", "bd:0,1", "--T", "1", "--jmax", "3"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0 and "# command=pmf" in proc.stdout
