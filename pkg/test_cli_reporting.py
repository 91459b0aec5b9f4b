"""
Tests for the pipeline, the tail fit and the command line
"""
import logging
import os

import numpy as np
import pytest

from cli_reporting import (ESTIMATE_COLUMNS, build_u_grid, estimate_grid, fit_disagreement, pilot_u0,
                           run_scenario, sim_config_from, tail_fit)
from file_manager import FileManager
from main import main
from risk_process_sim import RuinEstimate, SimConfig
from utils import ConfigError, TailFitError, ValidationError

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "scenarios")


def estimates_from(u, psi, stderr):
    return [RuinEstimate(u=float(x), psi_hat=float(p), stderr=float(s), n_paths=10000, horizon=100.0,
                         fraction_censored=1.0 - float(p))
            for x, p, s in zip(u, psi, stderr)]


def floor_fixture(seed: int):
    """Power law with exponent 0.5 up to u = 256, then a flat run at the noise level"""
    rng = np.random.default_rng(seed)
    k = np.arange(8)
    u = 4.0 ** k
    psi = np.where(k <= 4, 0.5 * 2.0 ** -k * rng.lognormal(0.0, 0.01, 8), 0.02)
    stderr = np.where(k <= 4, psi / 10.0, 0.005)
    return estimates_from(u, psi, stderr)


def classical_document(**sim):
    return {"name": "classical quick",
            "model": {"a": 0.0, "sigma": 0.0, "c": 1.0, "lambda1": 0.5, "lambda2": 1e-12,
                      "law1": "exp(1)", "law2": "exp(1)"},
            "sim": {"horizon": 100.0, "n_paths": 4000, "seed": 5, **sim},
            "u_grid": {"values": [1.0, 2.0, 4.0]}}


def ac3_document():
    return {"name": "ac3_quick",
            "model": {"a": 0.03, "sigma": 0.2, "c": 1.0, "lambda1": 1.0, "lambda2": 1.0,
                      "law1": "exp(1)", "law2": "exp(1)"},
            "sim": {"horizon": 20.0, "substep": 0.05, "n_paths": 2000, "seed": 5},
            "u_grid": {"values": [1.0, 2.0, 4.0, 8.0]},
            "check": {"frobenius_order": 20, "convention": "printed"}}


class TestTailFit:
    def test_exact_power_law(self):
        u = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
        psi = 0.3 * u ** -0.5
        fit = tail_fit(estimates_from(u, psi, psi / 100.0), beta_predicted=0.5)
        assert fit.beta_hat == pytest.approx(0.5, abs=1e-10)
        assert fit.logC_hat == pytest.approx(np.log(0.3), abs=1e-10)
        assert fit.r_squared == pytest.approx(1.0)
        assert fit.u_used == tuple(u)
        assert fit.to_row()["n_used"] == 5

    def test_flat_estimates(self):
        fit = tail_fit(estimates_from([1, 2, 4, 8], [0.2] * 4, [0.01] * 4), beta_predicted=0.5)
        assert fit.beta_hat == pytest.approx(0.0, abs=1e-12)

    def test_needs_three_points_above_the_floor(self):
        estimates = estimates_from([1, 2, 4, 8], [0.3, 0.2, 0.01, 0.0], [0.01, 0.01, 0.005, 0.0])
        with pytest.raises(TailFitError):
            tail_fit(estimates, beta_predicted=0.5)

    @pytest.mark.parametrize("seed", range(100))
    def test_noise_floor_drops_flat_points(self, seed):
        fit = tail_fit(floor_fixture(seed), beta_predicted=0.5)
        assert len(fit.u_used) == 5
        assert max(fit.u_used) == 256.0
        assert abs(fit.beta_hat - 0.5) < 0.02

    def test_without_floor_the_flat_run_biases_the_fit(self):
        fit = tail_fit(floor_fixture(0), beta_predicted=0.5, noise_floor=0.0)
        assert len(fit.u_used) == 8
        assert fit.beta_hat < 0.45

    def test_disagreement_with_prediction_is_noted(self):
        u = np.array([4.0, 8.0, 16.0, 32.0])
        psi = 2.0 * u ** -1.7
        steep = tail_fit(estimates_from(u, psi, psi / 20.0), beta_predicted=0.5)
        note = fit_disagreement(steep)
        assert note.startswith("tail fit disagrees with the predicted exponent: beta_hat=1.7")
        assert "u in [4, 32]" in note
        assert fit_disagreement(tail_fit(estimates_from(u, 0.3 * u ** -0.5, 0.3 * u ** -0.5 / 20.0), 0.5)) is None
        assert fit_disagreement(tail_fit(estimates_from(u, psi, psi / 20.0), float("nan"))) is None


class TestGridAndPilot:
    def test_pilot_lands_in_band(self, classical_params):
        sim = SimConfig(horizon=100.0, n_paths=2000, seed=3)
        assert pilot_u0(classical_params, sim) == 1.0
        assert pilot_u0(classical_params, sim, target=(0.05, 0.1)) == 4.0

    def test_explicit_values_are_sorted(self, classical_params):
        sim = SimConfig(horizon=10.0)
        assert build_u_grid({"values": [4, 1, 2]}, classical_params, sim) == [1.0, 2.0, 4.0]
        with pytest.raises(ValidationError):
            build_u_grid({"values": [1, -2]}, classical_params, sim)

    def test_geometric_grid(self, classical_params):
        grid = build_u_grid({"u0": 0.5, "points": 4, "ratio": 3.0}, classical_params, SimConfig(horizon=10.0))
        assert grid == pytest.approx([0.5, 1.5, 4.5, 13.5])

    def test_survivors_at_the_horizon_are_reported_once(self, classical_params, caplog):
        caplog.set_level(logging.INFO, logger="cli_reporting")
        estimates = estimate_grid(classical_params, [1.0, 2.0, 4.0], SimConfig(horizon=5.0, n_paths=500, seed=1))
        assert all(e.fraction_censored > 0.01 for e in estimates)
        notes = [r for r in caplog.records if r.name == "cli_reporting" and "alive at T=5" in r.getMessage()]
        assert len(notes) == 1
        assert notes[0].levelno == logging.INFO
        assert "3 of 3 grid points" in notes[0].getMessage()
        assert "informational" in notes[0].getMessage()

    def test_sim_config_seed_override(self, ac3_params):
        scenario = {"sim": {"horizon": 20.0, "seed": 1, "scheme": "euler"}}
        assert sim_config_from(scenario, ac3_params).seed == 1
        sim = sim_config_from(scenario, ac3_params, seed=9)
        assert sim.seed == 9
        assert sim.scheme == "euler"
        assert sim.horizon == 20.0


class TestRunScenario:
    def test_classical_model_runs_simulation_only(self, write_scenario, tmp_path):
        out = str(tmp_path / "out")
        result = run_scenario(write_scenario(classical_document()), out_dir=out)
        assert result.status == 0
        assert result.name == "classical_quick"
        assert not result.gate.passed
        assert any("simulation-only" in note for note in result.notes)
        assert set(result.files) == {"estimates", "tailfit", "audit"}
        assert os.path.isfile(os.path.join(out, "classical_quick", "estimates.csv"))

    def test_full_bundle(self, write_scenario, tmp_path):
        out = str(tmp_path / "out")
        result = run_scenario(write_scenario(ac3_document()), out_dir=out)
        assert result.status == 0
        assert result.gate.passed
        assert {"coefficients", "laplace", "gamma", "estimates", "audit"} <= set(result.files)
        for path in result.files.values():
            assert os.path.isfile(path)
        with open(result.files["audit"], encoding="utf-8") as f:
            audit = f.read()
        assert "printed vs derived" in audit
        assert "residual slope" in audit
        assert "mean claim size 1, mean premium size 1," in audit
        assert "net premium drift c + lambda2 E[eta] - lambda1 E[xi] = 1\n" in audit

    def test_tables_carry_the_config_hash(self, write_scenario, tmp_path):
        path = write_scenario(classical_document())
        first = run_scenario(path, out_dir=str(tmp_path / "a"))
        second = run_scenario(path, out_dir=str(tmp_path / "b"), seed=99)
        with open(first.files["estimates"], encoding="utf-8") as f:
            header = f.readline()
        with open(second.files["estimates"], encoding="utf-8") as f:
            other = f.readline()
        assert header.startswith("# config_sha256=")
        assert header != other
        frame = FileManager.read_table(first.files["estimates"])
        assert list(frame.columns) == ESTIMATE_COLUMNS
        assert len(frame) == 3

    def test_same_seed_same_estimates(self, write_scenario, tmp_path):
        path = write_scenario(classical_document())
        first = run_scenario(path, out_dir=str(tmp_path / "a"))
        second = run_scenario(path, out_dir=str(tmp_path / "b"), threads=2)
        assert first.estimates == second.estimates

    def test_malformed_config_writes_nothing(self, write_scenario, tmp_path):
        document = classical_document()
        document["model"]["mu"] = 3.0
        out = tmp_path / "out"
        with pytest.raises(ConfigError):
            run_scenario(write_scenario(document), out_dir=str(out))
        assert not out.exists()

    def test_invalid_law_writes_nothing(self, write_scenario, tmp_path):
        document = classical_document()
        document["model"]["law1"] = {"order": 2, "ode_coeffs": [2, 3, 1], "boundary_values": [3, -7]}
        out = tmp_path / "out"
        with pytest.raises(ValidationError):
            run_scenario(write_scenario(document), out_dir=str(out))
        assert not out.exists()

    @pytest.mark.slow
    def test_finite_horizon_tail_on_the_bundled_window(self, tmp_path):
        result = run_scenario(os.path.join(SCENARIO_DIR, "ac3_tail_exponent.json"), threads=4,
                              out_dir=str(tmp_path))
        fit = result.fit
        assert fit is not None
        assert fit.beta_predicted == pytest.approx(0.5)
        assert len(fit.u_used) >= 3
        assert min(fit.u_used) == 4.0
        # at T = 200 the u = 4..64 window still decays far faster than u^-0.5
        assert 1.2 <= fit.beta_hat <= 2.2
        assert fit.beta_hat - fit.beta_predicted > 5.0 * fit.beta_stderr
        assert any("disagrees with the predicted exponent" in note for note in result.notes)


class TestCommandLine:
    def test_no_command_prints_help(self):
        assert main([]) == 1

    @pytest.mark.parametrize("command", ["validate-density", "reduce", "indicial", "frobenius"])
    def test_analysis_commands(self, command, write_scenario, tmp_path):
        path = write_scenario(ac3_document())
        assert main([command, "--config", path, "--out", str(tmp_path)]) == 0

    def test_simulate_then_tailfit(self, write_scenario, tmp_path):
        path = write_scenario(classical_document())
        out = str(tmp_path)
        assert main(["simulate", "--config", path, "--out", out, "--threads", "2"]) == 0
        assert main(["tailfit", "--config", path, "--out", out]) == 0
        assert os.path.isfile(os.path.join(out, "classical_quick", "tailfit.csv"))

    def test_check_identities(self, write_scenario, tmp_path, identity_params):
        document = {"name": "identities", "model": identity_params.to_dict()}
        assert main(["check-identities", "--config", write_scenario(document), "--out", str(tmp_path),
                     "--points", "0.5", "2.0"]) == 0

    def test_toolkit_errors_exit_with_two(self, write_scenario, tmp_path):
        document = classical_document()
        assert main(["reduce", "--config", write_scenario(document), "--out", str(tmp_path)]) == 2

    def test_missing_config_exits_with_two(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
