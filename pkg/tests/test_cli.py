import csv
import math

import numpy as np
import pytest

from morbo.cli import main, read_config_file
from morbo.pareto import pareto_filter
from morbo.record import hv_trace, load_record

FAST = ["--n0", "6", "--budget", "16", "--batch", "5", "--candidates", "32", "--n-tr", "2"]


def linear_quantile(values, q):
    # textbook linear interpolation between order statistics
    v = sorted(values)
    pos = q * (len(v) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (pos - lo) * (v[hi] - v[lo])


def read_tsv(text):
    rows = list(csv.DictReader(text.splitlines(), delimiter="\t"))
    return rows


def test_missing_problem_names_field(tmp_path, capsys):
    code = main(["run", "--output-dir", str(tmp_path), *FAST])
    assert code == 2
    assert "problem" in capsys.readouterr().err


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--problem", "dtlz2-10", "--bogus", "1"])
    assert exc.value.code == 2


def test_unknown_problem_exits_2(tmp_path, capsys):
    assert main(["run", "--problem", "zdt9", "--output-dir", str(tmp_path)]) == 2


def test_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nproblem = dtlz2-10\nmystery = 3\n")
    assert main(["run", "--config", str(cfg), "--output-dir", str(tmp_path)]) == 2
    assert "mystery" in capsys.readouterr().err


def test_zero_iteration_run(tmp_path, capsys):
    code = main(["run", "--problem", "dtlz2-10", "--seed", "1", "--output-dir", str(tmp_path),
                 "--n0", "8", "--budget", "8"])
    assert code == 0
    summary = (tmp_path / "morbo-dtlz2-10-seed1.summary.txt").read_text()
    assert "optimization iterations: 0" in summary
    rec = load_record(tmp_path / "morbo-dtlz2-10-seed1")
    assert len(rec.observations) == 8


def test_config_echo_reproduces_run(tmp_path, capsys):
    first = tmp_path / "first"
    second = tmp_path / "second"
    assert main(["run", "--problem", "dtlz2-10", "--seed", "2", "--output-dir", str(first), *FAST]) == 0
    echo = first / "morbo-dtlz2-10-seed2.config.ini"
    values = read_config_file(echo)
    assert values["problem"] == "dtlz2-10" and values["nf"] == 16
    assert main(["run", "--config", str(echo), "--output-dir", str(second)]) == 0
    a = load_record(first / "morbo-dtlz2-10-seed2")
    b = load_record(second / "morbo-dtlz2-10-seed2")
    assert a.deterministic_content() | {"config": None} == b.deterministic_content() | {"config": None}


def test_output_dir_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("MORBO_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["run", "--problem", "dtlz2-10", "--method", "sobol", *FAST]) == 0
    assert (tmp_path / "env" / "sobol-dtlz2-10-seed0.summary.json").exists()


@pytest.fixture(scope="module")
def replicated(tmp_path_factory):
    out = tmp_path_factory.mktemp("rep")
    code = main(["replicate", "--problem", "dtlz2-10", "--seeds", "1..5", "--output-dir", str(out), *FAST])
    assert code == 0
    return out


def test_replicate_writes_every_record(replicated):
    for seed in range(1, 6):
        assert load_record(replicated / f"morbo-dtlz2-10-seed{seed}").complete


def test_replicate_aggregate_matches_recomputation(replicated):
    rows = read_tsv((replicated / "replicate-dtlz2-10.tsv").read_text())
    traces = [dict(hv_trace(load_record(replicated / f"morbo-dtlz2-10-seed{s}"))) for s in range(1, 6)]
    assert [int(r["evaluations"]) for r in rows] == [6, 11, 16]
    for row in rows:
        vals = [t[int(row["evaluations"])] for t in traces]
        assert int(row["runs"]) == 5
        assert float(row["median"]) == pytest.approx(sorted(vals)[2], abs=1e-12)
        assert float(row["q25"]) == pytest.approx(linear_quantile(vals, 0.25), abs=1e-12)
        assert float(row["q75"]) == pytest.approx(linear_quantile(vals, 0.75), abs=1e-12)


def test_report_single_record(replicated, capsys):
    stem = replicated / "morbo-dtlz2-10-seed1"
    assert main(["report", str(stem)]) == 0
    rows = read_tsv(capsys.readouterr().out)
    trace = hv_trace(load_record(stem))
    assert [(int(r["evaluations"]), float(r["median"])) for r in rows] == [(n, pytest.approx(hv)) for n, hv in trace]


def test_report_identical_records_zero_spread(replicated, capsys):
    stem = str(replicated / "morbo-dtlz2-10-seed3")
    assert main(["report", stem, stem, stem]) == 0
    for r in read_tsv(capsys.readouterr().out):
        assert float(r["q25"]) == float(r["median"]) == float(r["q75"])


def test_report_rejects_mixed_problems(replicated, tmp_path, capsys):
    assert main(["run", "--problem", "dtlz2-12", "--method", "sobol", "--output-dir", str(tmp_path), *FAST]) == 0
    code = main(["report", str(replicated / "morbo-dtlz2-10-seed1"), str(tmp_path / "sobol-dtlz2-12-seed0")])
    assert code == 2


def test_report_missing_record(tmp_path, capsys):
    assert main(["report", str(tmp_path / "absent")]) == 2


def test_export_matches_pareto_filter(replicated, capsys):
    stem = replicated / "morbo-dtlz2-10-seed2"
    assert main(["export-pareto", str(stem)]) == 0
    rows = read_tsv(capsys.readouterr().out)
    rec = load_record(stem)
    Y = rec.objectives()
    expected = Y[pareto_filter(Y)]
    got = np.array([[float(r["y1"]), float(r["y2"])] for r in rows])
    assert sorted(map(tuple, got)) == sorted(map(tuple, expected))
    assert list(got[:, 0]) == sorted(got[:, 0])
    assert set(rows[0]) == {f"x{i}" for i in range(1, 11)} | {"y1", "y2"}


def test_export_single_point_front(tmp_path, capsys):
    stem = tmp_path / "morbo-dtlz2-10-seed0"
    assert main(["run", "--problem", "dtlz2-10", "--output-dir", str(tmp_path), "--n0", "1", "--budget", "1"]) == 0
    capsys.readouterr()
    assert main(["export-pareto", str(stem)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2


def test_export_empty_feasible_set(tmp_path, capsys):
    # the first MW7 design point is infeasible for this seed
    stem = tmp_path / "morbo-mw7-seed0"
    assert main(["run", "--problem", "mw7", "--output-dir", str(tmp_path), "--n0", "1", "--budget", "1"]) == 0
    rec = load_record(stem)
    assert not rec.observations[0].feasible
    capsys.readouterr()
    out_file = tmp_path / "front.tsv"
    assert main(["export-pareto", str(stem), "--output", str(out_file)]) == 0
    assert out_file.read_text() == "\t".join([f"x{i}" for i in range(1, 11)] + ["y1", "y2"]) + "\n"


def test_export_missing_record(tmp_path, capsys):
    assert main(["export-pareto", str(tmp_path / "absent")]) == 2
