import json

import numpy as np
import pytest

from plqsmooth.cli import main
from plqsmooth.config import read_measurements_csv, write_matrix_csv


def write_config(path, **overrides):
    cfg = {
        "N": 25, "n": 1, "m": 1,
        "G": [[1.0]], "H": [[1.0]], "Q": [[0.2]], "R": [[1.0]], "x0": [0.0],
        "process_penalty": {"kind": "l2"},
        "measurement_penalty": {"kind": "l2"},
    }
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return cfg


def round_sig(path, digits=12):
    rows = []
    for line in path.read_text().splitlines():
        rows.append(",".join(f"{float(v):.{digits - 1}e}" for v in line.split(",")))
    return "\n".join(rows)


@pytest.fixture
def workspace(tmp_path):
    cfg_path = tmp_path / "model.json"
    write_config(cfg_path)
    rc = main(["simulate", "--config", str(cfg_path), "--output",
               str(tmp_path / "sim"), "--seed", "11"])
    assert rc == 0
    return tmp_path, cfg_path, tmp_path / "sim_measurements.csv"


class TestFit:
    def test_quadratic_fit_matches_classical_path(self, workspace):
        tmp, cfg, meas = workspace
        out_ip = tmp / "xhat.csv"
        out_rts = tmp / "xhat_rts.csv"
        assert main(["fit", "--config", str(cfg), "--measurements", str(meas),
                     "--output", str(out_ip)]) == 0
        assert main(["fit", "--config", str(cfg), "--measurements", str(meas),
                     "--output", str(out_rts), "--oracle", "rts"]) == 0
        assert round_sig(out_ip) == round_sig(out_rts)

    def test_dense_oracle_path(self, workspace):
        tmp, cfg, meas = workspace
        out = tmp / "xhat_dense.csv"
        assert main(["fit", "--config", str(cfg), "--measurements", str(meas),
                     "--output", str(out), "--oracle", "dense"]) == 0

    def test_report_written(self, workspace):
        tmp, cfg, meas = workspace
        out = tmp / "xhat.csv"
        main(["fit", "--config", str(cfg), "--measurements", str(meas),
              "--output", str(out)])
        report = json.loads((tmp / "xhat.csv.report.json").read_text())
        assert report["converged"] is True
        assert report["objective"] > 0
        assert report["timing_ms"] >= 0
        assert set(report["phases_ms"]) == {"parse", "build", "solve", "write"}

    def test_malformed_row_names_line(self, workspace, capsys):
        tmp, cfg, _ = workspace
        bad = tmp / "bad.csv"
        bad.write_text("1.0\n2.0\nnot-a-number\n4.0\n")
        rc = main(["fit", "--config", str(cfg), "--measurements", str(bad),
                   "--output", str(tmp / "x.csv")])
        assert rc == 1
        assert "row 3" in capsys.readouterr().err

    def test_wrong_shape_is_input_error(self, workspace, capsys):
        tmp, cfg, _ = workspace
        short = tmp / "short.csv"
        write_matrix_csv(short, np.zeros((7, 1)))
        rc = main(["fit", "--config", str(cfg), "--measurements", str(short),
                   "--output", str(tmp / "x.csv")])
        assert rc == 1
        assert "expected (25, 1)" in capsys.readouterr().err

    def test_iteration_limit_exit_code_and_partial_output(self, tmp_path, capsys):
        cfg_path = tmp_path / "model.json"
        write_config(cfg_path, measurement_penalty={"kind": "huber", "kappa": 1.0})
        main(["simulate", "--config", str(cfg_path), "--output",
              str(tmp_path / "sim"), "--seed", "2"])
        out = tmp_path / "x.csv"
        rc = main(["fit", "--config", str(cfg_path),
                   "--measurements", str(tmp_path / "sim_measurements.csv"),
                   "--output", str(out), "--max-iter", "1"])
        assert rc == 2
        assert out.exists()
        report = json.loads((tmp_path / "x.csv.report.json").read_text())
        assert report["converged"] is False and report["iterations"] == 1

    def test_rts_oracle_requires_quadratic_penalties(self, tmp_path, capsys):
        cfg_path = tmp_path / "model.json"
        write_config(cfg_path, process_penalty={"kind": "l1"})
        main(["simulate", "--config", str(cfg_path), "--output",
              str(tmp_path / "sim"), "--seed", "2"])
        rc = main(["fit", "--config", str(cfg_path),
                   "--measurements", str(tmp_path / "sim_measurements.csv"),
                   "--output", str(tmp_path / "x.csv"), "--oracle", "rts"])
        assert rc == 1
        assert "l2" in capsys.readouterr().err

    def test_missing_config_field(self, tmp_path, capsys):
        cfg_path = tmp_path / "broken.json"
        cfg_path.write_text(json.dumps({"N": 3, "n": 1}))
        rc = main(["fit", "--config", str(cfg_path), "--measurements", "x",
                   "--output", str(tmp_path / "x.csv")])
        assert rc == 1
        assert "missing required field" in capsys.readouterr().err


class TestSimulate:
    def test_reproducible_and_documented(self, tmp_path):
        cfg_path = tmp_path / "model.json"
        write_config(cfg_path)
        args = ["simulate", "--config", str(cfg_path), "--seed", "5",
                "--outlier-prob", "0.1", "--outlier-scale", "8.0"]
        assert main(args + ["--output", str(tmp_path / "a")]) == 0
        assert main(args + ["--output", str(tmp_path / "b")]) == 0
        for suffix in ("_states.csv", "_measurements.csv"):
            assert (tmp_path / f"a{suffix}").read_text() == (tmp_path / f"b{suffix}").read_text()
        meta = json.loads((tmp_path / "a_meta.json").read_text())
        assert meta["seed"] == 5
        assert meta["measurement_noise"]["outlier_prob"] == 0.1
        assert meta["measurement_noise"]["outlier_scale"] == 8.0
        assert meta["rng"] == "numpy-pcg64"

    def test_round_trip_smoothing_beats_raw_measurements(self, tmp_path):
        cfg_path = tmp_path / "model.json"
        write_config(cfg_path, N=200, Q=[[0.05]], R=[[1.0]])
        main(["simulate", "--config", str(cfg_path), "--output",
              str(tmp_path / "sim"), "--seed", "4"])
        main(["fit", "--config", str(cfg_path),
              "--measurements", str(tmp_path / "sim_measurements.csv"),
              "--output", str(tmp_path / "x.csv")])
        x_true = read_measurements_csv(tmp_path / "sim_states.csv")
        z = read_measurements_csv(tmp_path / "sim_measurements.csv")
        x_hat = read_measurements_csv(tmp_path / "x.csv")
        err_hat = float(np.mean((x_hat - x_true) ** 2))
        err_raw = float(np.mean((z - x_true) ** 2))
        assert err_hat < err_raw < 2.0  # smoother recovers below noise floor


class TestCheck:
    def test_atoms_pass(self, tmp_path, capsys):
        cfg_path = tmp_path / "model.json"
        write_config(
            cfg_path,
            process_penalty={"kind": "huber", "kappa": 1.0},
            measurement_penalty={"kind": "vapnik", "epsilon": 0.5},
        )
        assert main(["check", "--config", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert "coercive=yes" in out and "finite=yes" in out
        assert "c1=" in out

    def test_one_sided_penalty_fails_with_witness(self, tmp_path, capsys):
        cfg_path = tmp_path / "model.json"
        write_config(
            cfg_path,
            measurement_penalty={
                "kind": "plq", "A": [[1.0, -1.0]], "a": [1.0, 0.0],
                "M": [[0.0]], "b": [0.0], "B": [[1.0]],
            },
        )
        assert main(["check", "--config", str(cfg_path)]) == 3
        out = capsys.readouterr().out
        assert "coercive=no" in out and "coercivity_witness" in out

    def test_degenerate_penalty_fails_finiteness(self, tmp_path, capsys):
        cfg_path = tmp_path / "model.json"
        write_config(
            cfg_path,
            measurement_penalty={
                "kind": "plq", "A": [[]], "a": [],
                "M": [[0.0]], "b": [0.0], "B": [[1.0]],
            },
        )
        assert main(["check", "--config", str(cfg_path)]) == 3
        assert "finite=no" in capsys.readouterr().out

    def test_parse_error(self, tmp_path, capsys):
        cfg_path = tmp_path / "model.json"
        write_config(cfg_path, measurement_penalty={"kind": "unknown"})
        assert main(["check", "--config", str(cfg_path)]) == 1


class TestBench:
    def test_single_horizon_row(self, tmp_path, capsys):
        out = tmp_path / "bench.json"
        rc = main(["bench", "--n", "1", "--m", "1", "--N-list", "60",
                   "--repeats", "1", "--output", str(out)])
        assert rc == 0
        rows = json.loads(out.read_text())
        assert len(rows) == 1 and rows[0]["N"] == 60 and rows[0]["converged"]

    def test_iteration_counts_reproducible(self, tmp_path):
        outs = []
        for name in ("a.json", "b.json"):
            path = tmp_path / name
            main(["bench", "--n", "1", "--m", "1", "--N-list", "50,80",
                  "--repeats", "1", "--seed", "3", "--output", str(path)])
            outs.append([r["iterations"] for r in json.loads(path.read_text())])
        assert outs[0] == outs[1]

    def test_bad_penalty_flag(self, capsys):
        assert main(["bench", "--N-list", "10", "--process-penalty", "huber:zero"]) == 1


class TestCsvFormat:
    def test_round_trip_exact_doubles(self, tmp_path, rng):
        data = rng.standard_normal((9, 3)) * np.exp(rng.standard_normal((9, 3)) * 5)
        path = tmp_path / "data.csv"
        write_matrix_csv(path, data)
        back = read_measurements_csv(path)
        np.testing.assert_array_equal(back, data)

    def test_header_detected(self, tmp_path):
        path = tmp_path / "with_header.csv"
        path.write_text("z1,z2\n1.5,2.5\n3.5,4.5\n")
        out = read_measurements_csv(path)
        np.testing.assert_allclose(out, [[1.5, 2.5], [3.5, 4.5]])

    def test_ragged_rows_rejected(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("1.0,2.0\n3.0\n")
        with pytest.raises(Exception, match="row 2"):
            read_measurements_csv(path)
