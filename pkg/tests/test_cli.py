"""Config precedence, exit-code contract, and artifact checks for the CLI.

All commands run in-process through main(). Expensive defaults are always
overridden; these tests exercise plumbing, not statistics, so sample
counts are tiny and the oracle score source stands in for training.
"""

import numpy as np
import pytest

import bnslab.cli as cli
from bnslab.cli import ConfigError, load_config, main


def read_report(path):
    """Split an artifact CSV into (comments, header, data rows)."""
    comments = {}
    header = None
    rows = []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            comments[key] = value
        elif header is None:
            header = line.split(",")
        else:
            rows.append(line.split(","))
    return comments, header, rows


def run(tmp_path, subcommand, *flags, config=None):
    argv = [subcommand, "--out", str(tmp_path)]
    if config is not None:
        path = tmp_path / "config.ini"
        path.write_text(config)
        argv += ["--config", str(path)]
    argv += list(flags)
    return main(argv)


FAST_VERIFY = (
    "--schedule.n_steps=80",
    "--sampler.delta_skip=40",
    "--sampler.n_samples=3000",
)


class TestConfigLoading:
    def test_defaults_populate_every_key(self):
        cfg = load_config("verify-gaussian", None, [])
        assert cfg["data"]["sigma0_sq"] == 4.0
        assert cfg["schedule"]["n_steps"] == 1000
        assert cfg["sampler"]["dynamics"] == "stochastic"

    def test_file_then_flags_precedence(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text(
            "# comment line\n"
            "\n"
            "[data]\n"
            "sigma0_sq = 9.0\n"
            "[sampler]\n"
            "seed = 7\n"
            "n_samples = 500\n"
        )
        cfg = load_config(
            "verify-gaussian", str(path), ["--sampler.seed=8"]
        )
        assert cfg["data"]["sigma0_sq"] == 9.0
        assert cfg["sampler"]["n_samples"] == 500
        assert cfg["sampler"]["seed"] == 8  # flag beats file

    def test_list_and_bool_values(self):
        cfg = load_config(
            "ablation",
            None,
            ["--grid.gamma_sqs=1,2.5", "--grid.deltas=0,10"],
        )
        assert cfg["grid"]["gamma_sqs"] == (1.0, 2.5)
        assert cfg["grid"]["deltas"] == (0, 10)
        cfg = load_config("toy2d", None, ["--output.export_points=yes"])
        assert cfg["output"]["export_points"] is True
        cfg = load_config("toy2d", None, ["--output.export_points=0"])
        assert cfg["output"]["export_points"] is False

    def test_rejects_unknown_keys_and_bad_values(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config("verify-gaussian", None, ["--data.sigma=1.0"])
        with pytest.raises(ConfigError):
            load_config("verify-gaussian", None, ["--nosection=1"])
        with pytest.raises(ConfigError):
            load_config("verify-gaussian", None, ["--data.d=two"])
        with pytest.raises(ConfigError):
            load_config("toy2d", None, ["--output.export_points=maybe"])
        path = tmp_path / "bad.ini"
        path.write_text("sigma0_sq = 4\n")  # key before any section
        with pytest.raises(ConfigError):
            load_config("verify-gaussian", str(path), [])
        path.write_text("[data]\njust words\n")
        with pytest.raises(ConfigError):
            load_config("verify-gaussian", str(path), [])


class TestExitCodes:
    def test_passing_check_returns_zero(self, tmp_path):
        assert run(tmp_path, "verify-gaussian", *FAST_VERIFY) == 0

    def test_failed_check_returns_two(self, tmp_path, monkeypatch, capsys):
        # an impossible z-window forces the failure branch
        monkeypatch.setattr(cli, "Z_LIMIT", 1e-9)
        assert run(tmp_path, "verify-gaussian", *FAST_VERIFY) == 2
        assert "check failed" in capsys.readouterr().err

    def test_config_error_returns_one(self, tmp_path):
        assert run(tmp_path, "verify-gaussian", "--data.bogus=1") == 1
        assert run(tmp_path, "verify-gaussian", "--data.d") == 1

    def test_missing_config_file_returns_one(self, tmp_path):
        code = main(
            [
                "verify-gaussian",
                "--config",
                str(tmp_path / "absent.ini"),
                "--out",
                str(tmp_path),
            ]
        )
        assert code == 1

    def test_usage_errors_exit_one(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["verify-gaussian"])  # --out is required
        assert exc.value.code == 1
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate", "--out", str(tmp_path)])
        assert exc.value.code == 1


class TestVerifyGaussianArtifacts:
    def test_report_matches_prediction(self, tmp_path):
        assert run(tmp_path, "verify-gaussian", *FAST_VERIFY) == 0
        comments, header, rows = read_report(tmp_path / "verify_gaussian.csv")
        assert comments["subcommand"] == "verify-gaussian"
        assert comments["sampler.gamma_sq"] == "4"
        assert "alpha_at_skip" in comments
        assert header == ["quantity", "predicted", "empirical", "mc_stderr", "z_score"]
        assert [r[0] for r in rows] == ["mean_0", "var_0"]
        for row in rows:
            assert abs(float(row[4])) <= 4.0

    def test_matched_init_passes(self, tmp_path):
        code = run(
            tmp_path, "verify-gaussian", *FAST_VERIFY, "--sampler.init=matched"
        )
        assert code == 0

    def test_matched_init_requires_centered_data(self, tmp_path):
        code = run(
            tmp_path,
            "verify-gaussian",
            *FAST_VERIFY,
            "--sampler.init=matched",
            "--data.mu0=1.0",
        )
        assert code == 1


class TestCorollaryScanArtifacts:
    FLAGS = (
        "--schedule.n_steps=40",
        "--scan.stride=5",
        "--scan.gammas=0.5,2.0",
    )

    def test_scan_reports_region_membership(self, tmp_path):
        assert run(tmp_path, "corollary-scan", *self.FLAGS) == 0
        comments, header, rows = read_report(tmp_path / "corollary_scan.csv")
        assert header[:2] == ["gamma", "index"]
        assert len(rows) == 2 * 8
        amplified = {r[0]: {row[5] for row in rows if row[0] == r[0]} for r in rows}
        assert amplified["0.5"] == {"0"}  # quality regime never amplifies
        assert "1" in amplified["2"]
        assert (tmp_path / "corollary_scan.svg").exists()

    def test_reruns_are_byte_identical(self, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["corollary-scan", "--out", str(out), *self.FLAGS]) == 0
        for name in ("corollary_scan.csv", "corollary_scan.svg"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


class TestToy2dArtifacts:
    FLAGS = (
        "--score.source=oracle",
        "--score.components_per_ring=16",
        "--schedule.n_steps=50",
        "--sampler.n_panel=400",
        "--sampler.delta_skip=25",
    )

    def test_oracle_panels_report(self, tmp_path):
        assert run(tmp_path, "toy2d", *self.FLAGS) == 0
        comments, header, rows = read_report(tmp_path / "toy2d_report.csv")
        assert comments["field"].startswith("mixture")
        assert [r[0] for r in rows] == [
            "ground_truth",
            "standard",
            "temperature",
            "boost_only",
            "ode_boost",
            "boost_skip",
        ]
        for row in rows:
            fractions = [float(v) for v in row[1:4]]
            assert abs(sum(fractions) - 1.0) < 1e-9
            assert int(row[5]) == 400
        assert (tmp_path / "toy2d_panels.svg").exists()

    def test_export_points_writes_per_panel_csvs(self, tmp_path):
        code = run(
            tmp_path, "toy2d", *self.FLAGS, "--output.export_points=true"
        )
        assert code == 0
        points = tmp_path / "toy2d_points_boost_skip.csv"
        _, header, rows = read_report(points)
        assert header == ["x0", "x1"]
        assert len(rows) == 400


class TestTrajectoryArtifacts:
    FLAGS = (
        "--schedule.n_steps=60",
        "--score.components_per_ring=16",
        "--samplers.n_traj=30",
        "--samplers.delta_skip=10",
        "--samplers.gammas_sq=4",
    )

    def test_curves_cover_every_sampler(self, tmp_path):
        assert run(tmp_path, "trajectory", *self.FLAGS) == 0
        _, header, rows = read_report(tmp_path / "trajectory.csv")
        assert header == ["sampler", "i", "mean_norm", "mean_estimation_error"]
        counts = {}
        for row in rows:
            counts[row[0]] = counts.get(row[0], 0) + 1
        # skipped runs start delta steps later
        assert counts == {
            "standard": 61,
            "temperature_tau=1.1": 61,
            "bns_gamma_sq=4": 51,
            "ode": 61,
        }
        final = [r for r in rows if r[1] == "0"]
        assert all(r[3] == "" for r in final)
        assert (tmp_path / "trajectory.svg").exists()


class TestContractionArtifacts:
    def test_coupled_error_stays_below_bound(self, tmp_path):
        # the skip phase must sit in the contraction-dominant zone for
        # the bound to apply, so keep half the schedule ahead of it
        code = run(
            tmp_path,
            "contraction",
            "--schedule.n_steps=200",
            "--coupling.delta_skip=100",
            "--coupling.n_pairs=400",
            "--coupling.pilot_size=200",
        )
        assert code == 0
        comments, header, rows = read_report(tmp_path / "contraction.csv")
        assert "B" in comments and "C" in comments
        assert header[:3] == ["i", "coupled_mse", "bound"]
        assert len(rows) == 101
        for row in rows:
            assert float(row[1]) <= float(row[2])


class TestSpectralArtifacts:
    def test_band_energies_and_plancherel(self, tmp_path):
        code = run(
            tmp_path,
            "spectral",
            "--field.height=16",
            "--field.width=16",
            "--field.n_draws=50",
            "--field.cutoffs=0,2,4",
        )
        assert code == 0
        _, header, rows = read_report(tmp_path / "spectral.csv")
        assert header[0] == "cutoff"
        assert len(rows) == 3
        for row in rows:
            low_u, high_u, low_b, high_b = map(float, row[1:5])
            # gamma=2 boosting scales both bands by 4 on the same draws
            if low_u > 0:
                assert abs(low_b / low_u - 4.0) < 1e-9
            assert abs(high_b / high_u - 4.0) < 1e-9
            assert float(row[5]) < 1e-8


class TestAblationArtifacts:
    def test_grid_rows_and_status(self, tmp_path):
        code = run(
            tmp_path,
            "ablation",
            "--schedule.n_steps=50",
            "--score.components_per_ring=16",
            "--data.n_reference=400",
            "--grid.gamma_sqs=1,4",
            "--grid.deltas=0,20",
            "--grid.n_samples=300",
        )
        assert code == 0
        _, header, rows = read_report(tmp_path / "ablation.csv")
        assert [r[:2][0] for r in rows] == ["1", "1", "4", "4"]
        assert [r[1] for r in rows] == ["0", "20", "0", "20"]
        for row in rows:
            assert row[7] == "ok"
            assert int(row[6]) == 300
