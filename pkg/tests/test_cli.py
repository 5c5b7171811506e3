"""End-to-end command line runs on small problem files in a temp directory."""

import csv
import json
import subprocess
import sys

import pytest

from powerba.bal_io import read_trace, write_bal
from powerba.cli import main
from powerba.synthetic import make_random_problem


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestSolve:
    def test_writes_trace_summary_and_figure(self, small_bal_path, tmp_path, capsys):
        trace_csv = tmp_path / "trace.csv"
        summary_json = tmp_path / "summary.json"
        rc = main([
            "solve", "--input", str(small_bal_path), "--solver", "poba",
            "--sigma", "0.01", "--trace-out", str(trace_csv),
            "--summary-out", str(summary_json),
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert "final_cost=" in out and "solver=poba" in out

        records = read_trace(trace_csv)
        assert len(records) >= 2
        costs = [r.cost for r in records]
        assert costs == sorted(costs, reverse=True) or all(
            b <= a for a, b in zip(costs, costs[1:])
        )
        times = [r.cumulative_time_s for r in records]
        assert all(b >= a for a, b in zip(times, times[1:]))

        summary = json.loads(summary_json.read_text())
        assert summary["solver"] == "poba"
        assert summary["final_cost"] == costs[-1]
        assert summary["total_time_s"] > 0
        assert summary["peak_bytes"] > 0

        figure = tmp_path / "trace.png"
        assert figure.exists() and figure.stat().st_size > 0

    def test_creates_missing_output_directories(self, small_bal_path, tmp_path):
        trace_csv = tmp_path / "not" / "yet" / "trace.csv"
        summary_json = tmp_path / "also" / "summary.json"
        rc = main([
            "solve", "--input", str(small_bal_path), "--trace-out", str(trace_csv),
            "--summary-out", str(summary_json), "--no-figures",
        ])
        assert rc == 0
        assert trace_csv.exists() and summary_json.exists()

    def test_no_figures_suppresses_the_png(self, small_bal_path, tmp_path):
        trace_csv = tmp_path / "trace.csv"
        rc = main([
            "solve", "--input", str(small_bal_path), "--trace-out", str(trace_csv),
            "--no-figures",
        ])
        assert rc == 0
        assert trace_csv.exists()
        assert not (tmp_path / "trace.png").exists()

    @pytest.mark.parametrize("solver", ["direct", "pcg", "post"])
    def test_other_solvers_run(self, small_bal_path, solver, capsys):
        rc = main(["solve", "--input", str(small_bal_path), "--solver", solver,
                   "--sigma", "0.01"])
        assert rc == 0
        assert f"solver={solver}" in capsys.readouterr().out

    def test_unknown_solver_rejected_by_the_parser(self, small_bal_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["solve", "--input", str(small_bal_path), "--solver", "adam"])
        assert excinfo.value.code == 2

    def test_module_invocation(self, small_bal_path):
        proc = subprocess.run(
            [sys.executable, "-m", "powerba.cli", "solve",
             "--input", str(small_bal_path)],
            capture_output=True, text=True, timeout=300,
        )
        assert proc.returncode == 0
        assert "final_cost=" in proc.stdout


class TestDiagnose:
    def test_report_csv_and_figure(self, small_bal_path, tmp_path, capsys):
        report_csv = tmp_path / "bound.csv"
        rc = main([
            "diagnose", "--input", str(small_bal_path), "--max-order", "12",
            "--report-out", str(report_csv),
        ])
        assert rc == 0
        assert "spectral radius" in capsys.readouterr().out

        rows = read_rows(report_csv)
        assert len(rows) == 13
        assert [int(r["m"]) for r in rows] == list(range(13))
        for row in rows:
            assert float(row["bound"]) >= float(row["measured_error"]) >= 0.0

        figure = tmp_path / "bound.png"
        assert figure.exists() and figure.stat().st_size > 0

    def test_no_figures(self, small_bal_path, tmp_path):
        report_csv = tmp_path / "bound.csv"
        rc = main(["diagnose", "--input", str(small_bal_path),
                   "--report-out", str(report_csv), "--no-figures"])
        assert rc == 0
        assert report_csv.exists()
        assert not (tmp_path / "bound.png").exists()


@pytest.fixture(scope="module")
def bench_problem_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("bench_problems")
    write_bal(make_random_problem(3, 10, seed=21, pixel_noise=1.0),
              directory / "tinyA.txt")
    write_bal(make_random_problem(4, 12, seed=22, pixel_noise=1.0),
              directory / "tinyB.bal")
    return directory


@pytest.fixture(scope="module")
def bench_out(bench_problem_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("bench_out")
    rc = main([
        "bench", "--problems", str(bench_problem_dir),
        "--solvers", "poba,direct", "--tau", "0.1,0.01", "--out", str(out),
    ])
    assert rc == 0
    return out


class TestBench:
    def test_runs_csv_covers_the_grid(self, bench_out):
        rows = read_rows(bench_out / "runs.csv")
        assert len(rows) == 4
        assert {(r["problem"], r["solver"]) for r in rows} == {
            ("tinyA", "poba"), ("tinyA", "direct"),
            ("tinyB", "poba"), ("tinyB", "direct"),
        }
        for name in ("tinyA", "tinyB"):
            f0s = {r["f0"] for r in rows if r["problem"] == name}
            assert len(f0s) == 1  # shared perturbed start per problem
        for r in rows:
            assert float(r["final_cost"]) <= float(r["f0"])
            assert int(r["peak_bytes"]) > 0

    @pytest.mark.parametrize("tau", ["0.1", "0.01"])
    def test_profile_curves_are_valid(self, bench_out, tau):
        rows = read_rows(bench_out / f"profile_tau_{tau}.csv")
        by_solver = {}
        for r in rows:
            by_solver.setdefault(r["solver"], []).append(
                (float(r["alpha"]), float(r["rho_percent"]))
            )
        assert set(by_solver) == {"poba", "direct"}
        for curve in by_solver.values():
            alphas = [a for a, _ in curve]
            rhos = [p for _, p in curve]
            assert alphas[0] == 1.0 and alphas[-1] == 32.0
            assert all(b >= a for a, b in zip(rhos, rhos[1:]))
            assert all(0.0 <= p <= 100.0 for p in rhos)

    def test_solved_summary(self, bench_out):
        rows = read_rows(bench_out / "solved_summary.csv")
        assert len(rows) == 4  # two taus x two solvers
        assert {"tau", "solver", "alpha_1", "alpha_3", "alpha_inf"} <= set(rows[0])
        for r in rows:
            assert 0.0 <= float(r["alpha_1"]) <= float(r["alpha_inf"]) <= 100.0

    def test_profile_figures(self, bench_out):
        for tau in ("0.1", "0.01"):
            figure = bench_out / f"profile_tau_{tau}.png"
            assert figure.exists() and figure.stat().st_size > 0

    def test_no_figures(self, bench_problem_dir, tmp_path):
        out = tmp_path / "quiet"
        rc = main([
            "bench", "--problems", str(bench_problem_dir),
            "--solvers", "direct", "--tau", "0.1", "--out", str(out),
            "--no-figures",
        ])
        assert rc == 0
        assert (out / "runs.csv").exists()
        assert list(out.glob("*.png")) == []

    def test_empty_directory_fails(self, tmp_path, capsys):
        empty = tmp_path / "none"
        empty.mkdir()
        rc = main(["bench", "--problems", str(empty), "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "no .txt or .bal problems" in capsys.readouterr().err
