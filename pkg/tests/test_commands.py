"""
End-to-end tests for the subcommands, the self-check suites and the CLI entry point.
"""

import json

import numpy as np
import pytest

from bellpol import gaussian
from bellpol.commands import cmd_curves, cmd_dp, cmd_fit, cmd_simulate, cmd_sweep, cmd_validate, parse_model
from bellpol.exceptions import InvalidArgumentError, ValidationFailedError
from bellpol.fitting import CurveModel
from bellpol.io import SCHEMA_CURVES, SCHEMA_FIT_RESIDUALS, parse_sphere_payload, read_csv, read_json
from bellpol.main import main
from bellpol.run_config import RunConfig
from bellpol.validation import run_validation

ETA, N = 0.26, 0.2


def test_curves_psi_plus_hwp(tmp_path):
    """Psi+ under the HWP dips to 1 - eta and peaks at 1 + eta (2N + 1); MC columns are NaN."""
    out = tmp_path / "curves.csv"
    result = cmd_curves(RunConfig(state="psi+", eta=ETA, nbar=N, plate="hwp", curve_points=73, out=str(out)))
    schema, columns, data = read_csv(out)
    assert schema == SCHEMA_CURVES
    assert columns == ["chi_deg", "nrf_exact", "nrf_mc", "nrf_mc_se"]
    assert len(data) == 73
    assert data[:, 1].min() == pytest.approx(0.74, abs=1e-12)
    assert data[:, 1].max() == pytest.approx(1.364, abs=1e-12)
    assert np.all(np.isnan(data[:, 2]))
    assert result.report["data"]["files"] == [str(out)]


def test_curves_phi_plus_flat():
    """Phi+ under the HWP stays at 1.364."""
    result = cmd_curves(RunConfig(state="phi+", eta=ETA, nbar=N, plate="hwp", curve_points=19))
    data = result.report["data"]
    assert data["nrf_min"] == pytest.approx(1.364, abs=1e-12)
    assert data["nrf_max"] == pytest.approx(1.364, abs=1e-12)
    assert result.text.startswith(f"# schema: {SCHEMA_CURVES}\n")


def test_curves_without_light_are_ones():
    """Zero gain leaves the NRF at its no-light value of 1."""
    data = cmd_curves(RunConfig(state="psi+", gain=0.0, plate="qwp", curve_points=9)).report["data"]
    assert data["nrf_min"] == 1.0
    assert data["nrf_max"] == 1.0


def test_curves_with_monte_carlo(tmp_path):
    """Simulated points sit within 5 SE of the exact curve."""
    out = tmp_path / "curves.csv"
    cmd_curves(RunConfig(state="psi+", eta=0.5, nbar=N, modes=10, pulses=4000, plate="hwp",
                         curve_points=5, mc=True, seed=3, out=str(out)))
    _, _, data = read_csv(out)
    assert np.all(np.isfinite(data[:, 2]))
    assert np.all(np.abs(data[:, 2] - data[:, 1]) < 5 * data[:, 3])


def test_sweep_singlet_is_flat():
    """The singlet's sphere map is uniform at 1 - eta."""
    result = cmd_sweep(RunConfig(state="psi-", eta=ETA, nbar=N, step_h=5.0, step_q=10.0))
    data = result.report["data"]
    assert data["points"] == 10 * 10
    assert data["nrf_max"] - data["nrf_min"] <= 1e-10
    assert data["nrf_min"] == pytest.approx(1 - ETA)


def test_sweep_json_records(tmp_path):
    """Psi+ spans [1 - eta, 1 + eta (2N + 1)] and every point projects into the unit disk."""
    out = tmp_path / "sweep.json"
    cmd_sweep(RunConfig(state="psi+", eta=ETA, nbar=N, format="json", out=str(out)))
    records = parse_sphere_payload(read_json(out))
    assert len(records) == 19 * 19
    nrf = np.array([r.nrf for r in records])
    assert nrf.min() >= 1 - ETA - 1e-12
    assert nrf.max() <= 1 + ETA * (2 * N + 1) + 1e-12
    assert nrf.min() == pytest.approx(1 - ETA)
    assert all(r.x ** 2 + r.y ** 2 <= 1 + 1e-12 for r in records)
    assert all(np.isfinite(r.m4_normalized) for r in records)


def test_dp_triplet():
    """Psi+ P2 is about 0.2966 and the Gaussian-limit P4 about 0.5452; P1 and odd orders vanish."""
    result = cmd_dp(RunConfig(state="psi+", eta=ETA, nbar=N, orders=[1, 2, 3, 4]))
    data = result.report["data"]
    assert data["exact"]["1"]["dp"] == pytest.approx(0.0, abs=1e-12)
    assert data["exact"]["2"]["dp"] == pytest.approx(0.2966, abs=5e-5)
    assert data["closed_form_p2"] == pytest.approx(data["exact"]["2"]["dp"], abs=1e-10)
    assert data["exact"]["3"]["dp"] is None
    assert data["exact"]["3"]["error"]["code"] == "UNDEFINED_DP"
    assert data["gaussian_limit"]["4"] == pytest.approx(0.5452, abs=1e-4)
    assert 0.0 < data["exact"]["4"]["dp"] < 1.0
    assert data["monte_carlo"] is None
    assert "P2 = 0.29" in result.text


def test_dp_singlet_is_unpolarized():
    """Psi- has P2 = P4 = 0."""
    data = cmd_dp(RunConfig(state="psi-", eta=ETA, nbar=N, orders=[2, 4])).report["data"]
    assert data["exact"]["2"]["dp"] == pytest.approx(0.0, abs=1e-10)
    assert data["exact"]["4"]["dp"] == pytest.approx(0.0, abs=1e-8)


def test_dp_writes_json(tmp_path):
    """With an output path the report is written and lists the file."""
    out = tmp_path / "dp.json"
    result = cmd_dp(RunConfig(state="phi-", eta=ETA, nbar=N, orders=[2], out=str(out)))
    assert read_json(out)["data"]["exact"]["2"]["dp"] == pytest.approx(0.2966, abs=5e-5)
    assert result.files == [str(out)]


def test_simulate_writes_pulses_and_moments(tmp_path):
    """Pulse CSV plus the sibling moments JSON with the exact comparison."""
    out = tmp_path / "run.csv"
    result = cmd_simulate(RunConfig(state="psi+", eta=0.5, nbar=N, modes=5, pulses=500, chi_h=22.5, out=str(out)))
    moments_path = tmp_path / "run_moments.json"
    assert result.files == [str(out), str(moments_path)]
    _, columns, data = read_csv(out)
    assert columns == ["pulse_index", "I_A", "I_B", "S_n", "S0"]
    assert len(data) == 500
    payload = read_json(moments_path)["data"]
    assert set(payload["moments"]) == {"1", "2", "3", "4"}
    assert sum(payload["histogram"]["counts"]) == 500
    assert payload["exact"]["nrf"] == pytest.approx(1 + 0.5 * (2 * N + 1))


def _write_fit_input(path, label, plate):
    model = CurveModel.from_label(label, plate)
    chi = np.linspace(0.0, 90.0, 31)
    values = model(np.radians(chi), ETA, N)
    lines = ["chi_degrees,nrf"] + [f"{c:.10g},{v:.12g}" for c, v in zip(chi, values)]
    path.write_text("\n".join(lines) + "\n")


def test_fit_end_to_end(tmp_path):
    """Fitting exact curve files recovers (eta, N) and writes residuals."""
    hwp, qwp = tmp_path / "hwp.csv", tmp_path / "qwp.csv"
    _write_fit_input(hwp, "psi+", "hwp")
    _write_fit_input(qwp, "psi+", "qwp")
    out = tmp_path / "fit.json"
    result = cmd_fit([str(hwp), str(qwp)], ["psi+:hwp", "psi+:qwp"], str(out))
    data = result.report["data"]
    assert data["eta"] == pytest.approx(ETA, abs=1e-6)
    assert data["N"] == pytest.approx(N, abs=1e-6)
    schema, columns, residuals = read_csv(tmp_path / "fit_residuals.csv")
    assert schema == SCHEMA_FIT_RESIDUALS
    assert len(residuals) == 62
    assert np.abs(residuals[:, 4]).max() < 1e-6


def test_fit_model_count_mismatch(tmp_path):
    """Two inputs with three models is an argument error."""
    path = tmp_path / "a.csv"
    _write_fit_input(path, "psi+", "hwp")
    with pytest.raises(InvalidArgumentError):
        cmd_fit([str(path), str(path)], ["psi+:hwp"] * 3)


def test_parse_model_requires_plate():
    """Models are written state:plate."""
    assert parse_model("phi-:QWP").label == "phi-/qwp"
    with pytest.raises(InvalidArgumentError):
        parse_model("psi+")


def test_validate_curves_passes(tmp_path):
    """The curves suite passes and is written to the report."""
    out = tmp_path / "validate.json"
    result = cmd_validate(["curves"], str(out))
    assert result.report["data"]["failed"] == []
    assert read_json(out)["data"]["suites"][0]["passed"] is True


def test_validate_oracle_passes():
    """Engine and Fock oracle agree."""
    assert all(r.passed for r in run_validation(["oracle"]))


def test_unknown_suite_rejected():
    """Only the known suites can be requested."""
    with pytest.raises(InvalidArgumentError):
        run_validation(["speed"])


def test_flipped_s3_sign_fails_curves_suite(monkeypatch, tmp_path):
    """Reversing the S3 convention breaks the rotated-frame curves and fails validation."""
    monkeypatch.setattr(gaussian, "S3_SIGN", -1)
    out = tmp_path / "validate.json"
    with pytest.raises(ValidationFailedError) as exc_info:
        cmd_validate(["curves"], str(out))
    assert exc_info.value.details["failed"] == ["curves"]
    assert exc_info.value.exit_code == 1
    assert read_json(out)["data"]["failed"] == ["curves"]


def test_main_validation_exit_codes(monkeypatch, capsys):
    """Exit 0 when the suite passes and 1 when it fails."""
    assert main(["validate", "--suite", "curves"]) == 0
    capsys.readouterr()
    monkeypatch.setattr(gaussian, "S3_SIGN", -1)
    assert main(["validate", "--suite", "curves"]) == 1
    payload = json.loads(capsys.readouterr().out)
    assert payload["error"]["code"] == "VALIDATION_FAILED"


def test_main_config_error_exit_code(tmp_path, capsys):
    """A bad run configuration exits 2 with the error envelope on stdout."""
    path = tmp_path / "run.cfg"
    path.write_text("eta=0.3\nwavelength=800\n")
    assert main(["curves", "--config", str(path)]) == 2
    payload = json.loads(capsys.readouterr().out)
    assert payload["success"] is False
    assert payload["error"]["code"] == "CONFIG_INVALID"
    assert payload["error"]["details"]["errors"][0]["line"] == 2


def test_main_prints_csv_without_out(capsys):
    """Without --out the primary artifact goes to stdout."""
    assert main(["curves", "--state", "psi-", "--points", "3"]) == 0
    assert capsys.readouterr().out.startswith(f"# schema: {SCHEMA_CURVES}")
