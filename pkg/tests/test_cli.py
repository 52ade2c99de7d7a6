import csv

import pytest

from vrefkit.cli import (
    COMMANDS,
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    _fmt,
    main,
    run,
)
from vrefkit.config import default_text


def csv_values(files):
    seen = set()
    for f in files:
        with open(f, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                seen.update(row)
    return seen


def test_monte_carlo_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        code, rep = run(["monte-carlo", "--seed", "7", "--runs", "16", "--out-dir", str(d)])
        assert code == EXIT_OK
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1]
    assert set(outs[0]) == {"monte_carlo_runs.csv", "monte_carlo_hist.csv",
                            "monte_carlo_summary.csv"}


def test_monte_carlo_workers_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(["monte-carlo", "--seed", "7", "--runs", "8", "--out-dir", str(a)])
    run(["monte-carlo", "--seed", "7", "--runs", "8", "--workers", "2", "--out-dir", str(b)])
    for name in ("monte_carlo_runs.csv", "monte_carlo_summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_check_analytic(tmp_path):
    code, rep = run(["check-analytic", "--out-dir", str(tmp_path)])
    assert code == EXIT_OK
    assert rep.metrics["all_passed"]
    rows = list(csv.DictReader(open(tmp_path / "fit_ln1mx.csv")))
    assert {r["source"] for r in rows} == {"refit", "reference"}


def test_tc_vs_k_columns(tmp_path):
    code, rep = run(["tc-vs-k", "--out-dir", str(tmp_path)])
    assert code == EXIT_OK
    header = (tmp_path / "tc_vs_k.csv").read_text().splitlines()[0]
    assert header == "k,tc_ppm_per_c"
    assert {"k_num", "k_theory", "gap"} <= set(rep.metrics)


FAST = {"monte-carlo": ["--runs", "2"], "m15-study": ["--lengths", "0.3", "1.0"]}


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_summary_matches_artifacts(tmp_path, command):
    code, rep = run([command, "--out-dir", str(tmp_path)] + FAST.get(command, []))
    assert code in (EXIT_OK, 1)
    assert rep.files, "every command emits at least one CSV"
    for f in rep.files:
        text = open(f, "rb").read()
        assert b"\r\n" not in text
    values = csv_values(rep.files)
    for key, value in rep.metrics.items():
        assert _fmt(value) in values, f"{command}: {key} missing from CSVs"


def test_bad_config_exit(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text(default_text().replace("vdd_min: 0.4", "vdd_min: 0.4\nbogus: 1"))
    code, rep = run(["op", "--config", str(p), "--out-dir", str(tmp_path)])
    assert code == EXIT_CONFIG and rep is None


def test_missing_config_exit(tmp_path):
    code, _ = run(["op", "--config", str(tmp_path / "none.yaml")])
    assert code == EXIT_IO


def test_unknown_corner(tmp_path):
    code, _ = run(["op", "--corner", "XX", "--out-dir", str(tmp_path)])
    assert code == EXIT_CONFIG


def test_flags(tmp_path):
    code, rep = run(["op", "--no-stage1", "--ideal-model", "--corner", "FF",
                     "--trim-code", "5", "--out-dir", str(tmp_path)])
    assert code == EXIT_OK
    assert rep.metrics["vo"] == 1.2


def test_main_prints_summary(tmp_path, capsys):
    assert main(["op", "--out-dir", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "vref =" in out and "op.csv" in out
