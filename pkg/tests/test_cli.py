import json

import numpy as np
import pytest

from qscnewton.cli import main


def write_config(path, config):
    path.write_text(json.dumps(config))
    return str(path)


@pytest.fixture
def quad_config(tmp_path):
    return write_config(
        tmp_path / "quad.json",
        {
            "schema_version": 1,
            "problem": {"kind": "quadratic", "n": 5, "seed": 0},
            "solver": {"name": "primal", "sigma": 0.0, "grad_tol": 1e-10},
        },
    )


class TestSolveCommand:
    def test_quadratic_exits_zero_with_one_iteration_trace(self, quad_config, tmp_path):
        out = tmp_path / "out"
        assert main(["solve", "--config", quad_config, "--out", str(out)]) == 0
        trace = (out / "trace.csv").read_text().splitlines()
        assert len(trace) == 3  # header + step row + terminal row
        report = json.loads((out / "report.json").read_text())
        assert report["iterations"] == 1

    def test_malformed_config_exits_three(self, tmp_path):
        bad = write_config(tmp_path / "bad.json", {"schema_version": 1})
        assert main(["solve", "--config", bad, "--out", str(tmp_path / "o")]) == 3

    def test_unparseable_config_exits_three(self, tmp_path):
        path = tmp_path / "nojson.json"
        path.write_text("{")
        assert main(["solve", "--config", str(path), "--out", str(tmp_path / "o")]) == 3

    def test_missing_config_exits_three(self, tmp_path):
        assert main(["solve", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 3

    def test_solver_failure_exits_two(self, tmp_path):
        config = write_config(
            tmp_path / "c.json",
            {
                "schema_version": 1,
                "problem": {"kind": "logistic", "n": 8, "m": 40, "seed": 7},
                "solver": {"name": "primal", "sigma": 1.0, "grad_tol": 1e-14, "max_iters": 2},
            },
        )
        assert main(["solve", "--config", config, "--out", str(tmp_path / "o")]) == 2

    def test_accelerated_auto_reference_end_to_end(self, tmp_path):
        config = write_config(
            tmp_path / "acc.json",
            {
                "schema_version": 1,
                "problem": {"kind": "logistic", "n": 8, "m": 40, "seed": 7},
                "solver": {"name": "accelerated", "rel_accuracy": 1e-5},
            },
        )
        out = tmp_path / "out"
        assert main(["solve", "--config", config, "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["reference"] is not None
        assert report["final_gap"] <= 1e-5 * 1.0  # relative target on a O(1) gap


class TestVerifyCommand:
    def test_zoo_instance_passes(self, tmp_path):
        config = write_config(
            tmp_path / "v.json",
            {
                "schema_version": 1,
                "problem": {"kind": "matrix_balancing", "n": 5, "seed": 13},
                "instance_checks": {"samples": 300, "pairs": 60},
            },
        )
        assert main(["verify", "--config", config, "--out", str(tmp_path / "o")]) == 0
        report = json.loads((tmp_path / "o" / "verify_report.json").read_text())
        assert report["all_passed"]

    def test_forced_small_constant_exits_two_naming_qsc(self, tmp_path, capsys):
        config = write_config(
            tmp_path / "v.json",
            {
                "schema_version": 1,
                "problem": {"kind": "logistic", "n": 2, "m": 4, "seed": 3, "qsc_override": 0.5},
                "instance_checks": {"samples": 800, "pairs": 40},
            },
        )
        assert main(["verify", "--config", config, "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert "qsc" in err
        report = json.loads((tmp_path / "o" / "verify_report.json").read_text())
        assert "qsc" in report["failing"]


class TestReferenceCommand:
    def test_reference_cached_between_runs(self, tmp_path):
        config = write_config(
            tmp_path / "r.json",
            {
                "schema_version": 1,
                "problem": {"kind": "quadratic", "n": 5, "seed": 0},
            },
        )
        out = tmp_path / "o"
        assert main(["reference", "--config", config, "--out", str(out)]) == 0
        first = json.loads((out / "reference.json").read_text())
        assert main(["reference", "--config", config, "--out", str(out)]) == 0
        second = json.loads((out / "reference.json").read_text())
        assert not first["from_cache"]
        assert second["from_cache"]
        assert first["f_star"] == second["f_star"]


class TestBenchmarkCommand:
    def _suite(self, tmp_path):
        return write_config(
            tmp_path / "suite.json",
            {
                "schema_version": 1,
                "problems": [
                    {"kind": "quadratic", "n": 5, "seed": 0},
                    {"kind": "logistic", "n": 6, "m": 30, "seed": 2},
                ],
                "solvers": [
                    {"name": "primal", "sigma": 1.0, "grad_tol": 1e-9},
                    {"name": "dual", "qsc_constant": 1.0, "grad_tol": 1e-7},
                    {"name": "accelerated", "rel_accuracy": 1e-5},
                ],
            },
        )

    def test_grid_produces_reports_and_tables(self, tmp_path):
        suite = self._suite(tmp_path)
        out = tmp_path / "bench"
        assert main(["benchmark", "--config", suite, "--out", str(out)]) == 0
        table = (out / "table.csv").read_text().splitlines()
        assert len(table) == 1 + 6  # header + 2 problems x 3 solvers
        assert (out / "table.txt").exists()
        for pi in range(2):
            for si in range(3):
                assert (out / f"cell_{pi}_{si}" / "report.json").exists()

    def test_deterministic_tables(self, tmp_path):
        suite = self._suite(tmp_path)
        out1, out2 = tmp_path / "b1", tmp_path / "b2"
        assert main(["benchmark", "--config", suite, "--out", str(out1)]) == 0
        assert main(["benchmark", "--config", suite, "--out", str(out2)]) == 0
        assert (out1 / "table.csv").read_text() == (out2 / "table.csv").read_text()

    def test_parallel_cells_match_sequential(self, tmp_path):
        suite = self._suite(tmp_path)
        seq, par = tmp_path / "seq", tmp_path / "par"
        assert main(["benchmark", "--config", suite, "--out", str(seq)]) == 0
        assert main(["benchmark", "--config", suite, "--out", str(par), "--jobs", "2"]) == 0
        assert (seq / "table.csv").read_text() == (par / "table.csv").read_text()

    def test_seed_override_changes_instance(self, tmp_path):
        suite = self._suite(tmp_path)
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        assert main(["benchmark", "--config", suite, "--out", str(out1), "--seed", "99"]) == 0
        assert main(["benchmark", "--config", suite, "--out", str(out2)]) == 0
        assert (out1 / "table.csv").read_text() != (out2 / "table.csv").read_text()

    def test_malformed_suite_exits_three(self, tmp_path):
        bad = write_config(tmp_path / "s.json", {"schema_version": 1, "problems": []})
        assert main(["benchmark", "--config", bad, "--out", str(tmp_path / "o")]) == 3
