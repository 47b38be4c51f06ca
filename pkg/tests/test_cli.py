"""Command-line surface: file round trips, JSON output, exit codes."""

import csv
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_tucker
from tensreg.cli import cli_main, load_estimate, save_estimate
from tensreg.estimator import fit_lowrank
from tensreg.samples import SeededGaussianSource, write_sample_file
from tensreg.simulate import CSV_COLUMNS


def make_sample_file(rng, path, dims=(6, 6, 6), ranks=(2, 2, 2), n=400,
                     sigma=0.0, seed=31):
    _, _, coeff = random_tucker(rng, dims, ranks)
    src = SeededGaussianSource(coeff, n, sigma, seed)
    write_sample_file(str(path), src)
    return coeff


class TestSimulate:
    def test_writes_csv_and_summary(self, rng, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        code = cli_main([
            "simulate", "--p", "5,4,4", "--r", "2", "--n", "300,500",
            "--sigma", "0.5", "--reps", "2", "--seed", "9", "--out", str(out),
        ])
        assert code == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4
        assert tuple(rows[0]) == CSV_COLUMNS
        assert {row["n"] for row in rows} == {"300", "500"}
        assert all(float(row["rmse"]) < 0.5 for row in rows)
        summary = json.loads((tmp_path / "sweep.summary.json").read_text())
        assert summary["schema_version"] == 1
        assert summary["p"] == "5x4x4"
        assert "wrote 4 rows" in capsys.readouterr().out

    def test_config_file_with_flag_override(self, rng, tmp_path):
        conf = tmp_path / "conf.json"
        conf.write_text(json.dumps({
            "p": "5,4,4", "r": 2, "n": 300, "sigma": 0.5, "reps": 5,
        }))
        out = tmp_path / "sweep.csv"
        code = cli_main([
            "simulate", "--config", str(conf), "--reps", "1", "--out", str(out),
        ])
        assert code == 0
        with open(out) as fh:
            assert len(list(csv.DictReader(fh))) == 1  # flag beat the file

    def test_mode_alias(self, rng, tmp_path):
        out = tmp_path / "apx.csv"
        code = cli_main([
            "simulate", "--mode", "approx-low-rank", "--p", "5", "--r", "2",
            "--n", "300", "--tau", "0,0.3", "--out", str(out),
        ])
        assert code == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert [row["notes"] for row in rows] == ["tau=0", "tau=0.3"]


class TestFit:
    def test_fit_round_trip(self, rng, tmp_path, capsys):
        samples = tmp_path / "data.samples"
        coeff = make_sample_file(rng, samples)
        out = tmp_path / "est.npz"
        code = cli_main([
            "fit", "--input", str(samples), "--ranks", "2,2,2", "--out", str(out),
        ])
        assert code == 0
        arrays = load_estimate(out)
        assert {"coefficient", "core", "reduced_coef"} <= set(arrays)
        assert {"factor0", "factor1", "factor2"} <= set(arrays)
        assert_allclose(arrays["coefficient"], coeff,
                        atol=1e-6 * np.abs(coeff).max())
        info = json.loads(capsys.readouterr().out)
        assert info["out"] == str(out) and info["n"] == 400

    def test_save_load_is_exact(self, rng, tmp_path):
        samples = tmp_path / "data.samples"
        make_sample_file(rng, samples, n=300)
        from tensreg.samples import FileSamples

        est = fit_lowrank(FileSamples(str(samples)), (2, 2, 2))
        path = tmp_path / "copy.npz"
        save_estimate(path, est)
        arrays = load_estimate(path)
        assert arrays["coefficient"].tobytes() == est.coeff.tobytes()
        assert arrays["reduced_coef"].tobytes() == est.reduced_coef.tobytes()

    def test_default_out_and_in_memory(self, rng, tmp_path, capsys):
        samples = tmp_path / "data.samples"
        make_sample_file(rng, samples, n=300)
        code = cli_main([
            "fit", "--input", str(samples), "--ranks", "2", "--in-memory",
        ])
        assert code == 0
        info = json.loads(capsys.readouterr().out)
        assert info["out"] == str(samples) + ".est.npz"

    def test_in_memory_cap_needs_force(self, rng, tmp_path, capsys):
        samples = tmp_path / "wide.samples"
        # m = 1 + 60 + 1 + 1 = 63 at these shapes, so n must exceed that
        make_sample_file(rng, samples, dims=(61, 2, 2), ranks=(1, 1, 1), n=100)
        argv = ["fit", "--input", str(samples), "--ranks", "1", "--in-memory"]
        assert cli_main(argv) == 2
        assert "--force" in capsys.readouterr().err
        assert cli_main(argv + ["--force"]) == 0


class TestRankSelect:
    def test_generated_problem(self, rng, capsys):
        code = cli_main([
            "rank-select", "--p", "8", "--r", "2", "--n", "1500",
            "--sigma", "0.5", "--seed", "12", "--r-ini", "3",
        ])
        assert code == 0
        info = json.loads(capsys.readouterr().out)
        assert info["ranks"] == [2, 2, 2]
        assert info["null_fit"] is False

    def test_from_file(self, rng, tmp_path, capsys):
        from tensreg.simulate import generate_regular

        samples = tmp_path / "data.samples"
        _, src = generate_regular((8, 8, 8), (2, 2, 2), 1500, 0.5, 12)
        write_sample_file(str(samples), src)
        out = tmp_path / "est.npz"
        code = cli_main([
            "rank-select", "--input", str(samples), "--r-ini", "3",
            "--out", str(out),
        ])
        assert code == 0
        info = json.loads(capsys.readouterr().out)
        assert info["ranks"] == [2, 2, 2]
        assert set(load_estimate(out)) >= {"coefficient", "core"}

    def test_needs_input_or_dims(self, capsys):
        assert cli_main(["rank-select"]) == 2
        assert "--input or --p" in capsys.readouterr().err


class TestBenchAndGrip:
    def test_bench_prints_summary(self, rng, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        code = cli_main([
            "bench", "--p", "5", "--r", "2", "--n", "200,400",
            "--reps", "2", "--out", str(out),
        ])
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["schema_version"] == 1
        assert len(summary["wall_ratios"]) == 1
        assert out.exists()

    def test_grip_check(self, capsys):
        code = cli_main([
            "grip-check", "--p", "6", "--r", "2", "--n", "400", "--seed", "2",
        ])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["holds"] is True
        assert report["worst_lower"] > 0.5
        assert report["worst_upper"] < 1.5


class TestExitCodes:
    def test_unknown_flag(self):
        assert cli_main(["simulate", "--bogus", "1"]) == 2

    def test_unknown_subcommand(self):
        assert cli_main(["frobnicate"]) == 2

    def test_missing_required_flag(self):
        assert cli_main(["fit", "--ranks", "2"]) == 2

    def test_unknown_mode(self, capsys):
        assert cli_main(["simulate", "--p", "5", "--mode", "wat"]) == 2
        assert "unknown mode" in capsys.readouterr().err

    def test_missing_input_file(self, tmp_path, capsys):
        path = tmp_path / "nope.samples"
        assert cli_main(["fit", "--input", str(path), "--ranks", "2"]) == 2

    def test_bad_config_json(self, tmp_path, capsys):
        conf = tmp_path / "conf.json"
        conf.write_text("not json")
        assert cli_main(["simulate", "--config", str(conf), "--p", "5"]) == 2

    def test_numerical_failure_is_exit_3(self, tmp_path, capsys):
        # all-zero responses leave nothing to probe: degenerate, not a crash
        samples = tmp_path / "null.samples"
        src = SeededGaussianSource(np.zeros((5, 5, 5)), 200, 0.0, 1)
        write_sample_file(str(samples), src)
        code = cli_main(["fit", "--input", str(samples), "--ranks", "2"])
        assert code == 3
        assert "numerical failure" in capsys.readouterr().err
