"""
Subcommand implementations.

Each ``cmd_*`` takes validated inputs, writes its files atomically when an
output path is configured, and returns a CommandOutput: the JSON envelope plus
the primary artifact as text for printing when no file was requested.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import gaussian
from .exceptions import InvalidArgumentError, UndefinedDPError, ValidationFailedError
from .fitting import CurveModel, fit, fitted_curves
from .geometry import (
    WaveplateSetting,
    direction_from_waveplates,
    hwp_trajectory,
    project_to_S2S1,
    qwp_trajectory,
    sphere_sweep,
)
from .io import (
    PULSE_COLUMNS,
    SCHEMA_CURVES,
    SCHEMA_DP,
    SCHEMA_FIT,
    SCHEMA_FIT_RESIDUALS,
    SCHEMA_MOMENTS,
    SCHEMA_PULSES,
    SCHEMA_SWEEP,
    SCHEMA_VALIDATE,
    SphereMapRecord,
    csv_text,
    json_text,
    parse_fit_csv,
    sphere_csv_text,
    sphere_payload,
    write_csv,
    write_json,
    write_pulse_csv,
    write_sphere_csv,
    write_sphere_json,
)
from .metrics import closed_form_p2, coherent_fourth_moment, dp1, dp2_eigen, dpk_search, gaussian_limit_dp
from .pulses import (
    DetectorConfig,
    derived_seed,
    estimate_moments,
    histogram,
    monte_carlo_dp,
    outcome_table,
    sample_pulses,
    subtract_electronic_noise,
    vacuum_table,
)
from .report import wrap_report
from .run_config import RunConfig
from .validation import run_validation

logger = logging.getLogger("commands")

CURVE_COLUMNS = ("chi_deg", "nrf_exact", "nrf_mc", "nrf_mc_se")
RESIDUAL_COLUMNS = ("dataset", "chi_deg", "nrf", "nrf_fit", "residual")


@dataclass
class CommandOutput:
    report: Dict[str, Any]
    text: Optional[str] = None
    files: List[str] = field(default_factory=list)


def _detector(config: RunConfig, spec, seed: int) -> DetectorConfig:
    return DetectorConfig.for_state(
        spec,
        config.eta,
        sigma=config.noise_sigma,
        pulses=config.pulses,
        seed=seed,
        chunk_size=config.chunk_size,
        workers=config.workers,
    )


def _sibling(path: str, suffix: str) -> Path:
    """``<stem><suffix>`` next to ``path``."""
    p = Path(path)
    return p.with_name(f"{p.stem}{suffix}")


def _run_meta(config: RunConfig) -> Dict[str, Any]:
    spec = config.to_spec()
    return {
        "state": spec.label,
        "eta": config.eta,
        "gain": spec.gain,
        "nbar": spec.nbar,
        "modes": spec.quadruples,
    }


def _mc_nrf(config: RunConfig, spec, setting: WaveplateSetting, seed: int, noise_batch=None):
    table = outcome_table(spec, setting, config.cutoff)
    batch = sample_pulses(table, spec.quadruples, _detector(config, spec, seed))
    estimates = estimate_moments(batch, 2, config.batches)
    if noise_batch is not None:
        estimates = subtract_electronic_noise(estimates, noise_batch)
    return estimates.nrf


def _noise_reference(config: RunConfig, spec, index: int):
    """Vacuum batch with the run's electronic noise, or None when nothing is subtracted."""
    detector = _detector(config, spec, derived_seed(config.seed, index))
    if not config.subtract_noise or detector.electronic_noise_sigma <= 0:
        return None
    return sample_pulses(vacuum_table(), spec.quadruples, detector)


def cmd_curves(config: RunConfig) -> CommandOutput:
    """
    NRF versus plate angle along the HWP or QWP trajectory.

    Exact values come from the moment engine; with ``mc`` each point is also
    simulated under its own derived seed, otherwise the MC columns are NaN.
    """
    spec = config.to_spec()
    grid = hwp_trajectory(config.curve_points) if config.plate == "hwp" else qwp_trajectory(config.curve_points)
    chi_deg = np.array([s.chi_H_deg if config.plate == "hwp" else s.chi_Q_deg for s in grid.settings])
    exact = gaussian.nrf_curve(spec, config.eta, grid.directions)

    mc = np.full(len(grid), np.nan)
    mc_se = np.full(len(grid), np.nan)
    if config.mc:
        noise = _noise_reference(config, spec, len(grid))
        for i, setting in enumerate(grid.settings):
            nrf = _mc_nrf(config, spec, setting, derived_seed(config.seed, i), noise)
            if nrf is not None:
                mc[i], mc_se[i] = nrf.value, nrf.standard_error
        logger.info(f"Simulated {len(grid)} curve points for {spec.label}/{config.plate}")

    rows = np.column_stack([chi_deg, exact, mc, mc_se])
    files = []
    if config.out:
        files.append(str(write_csv(config.out, SCHEMA_CURVES, CURVE_COLUMNS, rows)))

    data = {
        **_run_meta(config),
        "plate": config.plate,
        "points": len(grid),
        "nrf_min": float(exact.min()),
        "nrf_max": float(exact.max()),
        "files": files,
    }
    report = wrap_report(data, f"NRF curve for {spec.label} along the {config.plate.upper()} trajectory", SCHEMA_CURVES)
    return CommandOutput(report, csv_text(SCHEMA_CURVES, CURVE_COLUMNS, rows), files)


def sphere_records(config: RunConfig) -> List[SphereMapRecord]:
    """NRF and normalized fourth moment on the plate sweep grid."""
    spec = config.to_spec()
    grid = sphere_sweep(config.step_h, config.step_q)
    state = gaussian.lossy_state(spec, config.eta)
    mean_S0 = spec.quadruples * float(np.real(np.trace(state.normal)))

    nrf = gaussian.nrf_along(state, grid.directions, spec.quadruples)
    if mean_S0 > 0:
        m4 = gaussian.central_moment_polynomial(state, 4, spec.quadruples).evaluate(grid.unit_vectors())
        m4_normalized = m4 / coherent_fourth_moment(mean_S0)
    else:
        m4_normalized = np.ones(len(grid))

    records = []
    for (setting, direction), value, fourth in zip(grid, nrf, m4_normalized):
        x, y = project_to_S2S1(direction)
        records.append(SphereMapRecord(
            chi_H_deg=setting.chi_H_deg,
            chi_Q_deg=setting.chi_Q_deg,
            theta_deg=direction.theta_deg,
            phi_deg=direction.phi_deg,
            x=x,
            y=y,
            nrf=float(value),
            m4_normalized=float(fourth),
        ))
    return records


def cmd_sweep(config: RunConfig) -> CommandOutput:
    """Sphere map over the (chi_H, chi_Q) grid as CSV or JSON."""
    records = sphere_records(config)
    meta = {**_run_meta(config), "step_h_deg": config.step_h, "step_q_deg": config.step_q}

    files = []
    if config.out:
        if config.format == "json":
            files.append(str(write_sphere_json(config.out, records, meta)))
        else:
            files.append(str(write_sphere_csv(config.out, records)))

    if config.format == "json":
        text = json_text(sphere_payload(records, meta))
    else:
        text = sphere_csv_text(records)

    nrf = np.array([r.nrf for r in records])
    data = {**meta, "points": len(records), "nrf_min": float(nrf.min()), "nrf_max": float(nrf.max()), "files": files}
    return CommandOutput(wrap_report(data, f"Sphere map for {meta['state']}", SCHEMA_SWEEP), text, files)


def _dp_entry(report) -> Dict[str, Any]:
    entry = {
        "order": report.order,
        "dp": report.dp,
        "sup": report.sup,
        "inf": report.inf,
        "argmax_deg": [report.argmax.theta_deg, report.argmax.phi_deg],
        "argmin_deg": [report.argmin.theta_deg, report.argmin.phi_deg],
        "method": report.method,
    }
    if report.visibility is not None:
        entry["visibility"] = report.visibility
    return entry


def exact_dp(config: RunConfig) -> Dict[int, Dict[str, Any]]:
    """Engine DP per requested order; undefined orders carry an error entry instead."""
    spec = config.to_spec()
    state = gaussian.lossy_state(spec, config.eta)
    mean_stokes, cov = gaussian.stokes_covariance(state, spec.quadruples)
    mean_S0 = spec.quadruples * float(np.real(np.trace(state.normal)))
    grid = sphere_sweep(config.step_h, config.step_q)

    results = {}
    for k in config.orders:
        try:
            if k == 1:
                report = dp1(mean_stokes, mean_S0, grid)
            elif k == 2:
                report = dp2_eigen(cov, mean_S0)
            else:
                moment_field = gaussian.central_moment_polynomial(state, k, spec.quadruples)
                report = dpk_search(moment_field, k, grid, config.refine_tol)
            results[k] = _dp_entry(report)
        except UndefinedDPError as exc:
            logger.warning(f"P{k} undefined for {spec.label}: {exc.message}")
            results[k] = {"order": k, "dp": None, "error": {"code": exc.error_code, "message": exc.message}}
    return results


def _dp_text(meta: Dict[str, Any], exact: Dict[int, Dict], p2_closed: float, limits: Dict[int, float], mc=None) -> str:
    lines = [f"state {meta['state']}  eta={meta['eta']:g}  N={meta['nbar']:.6g}  M={meta['modes']}"]
    for k, entry in exact.items():
        value = "undefined" if entry["dp"] is None else f"{entry['dp']:.6f}"
        extra = ""
        if k == 2:
            extra = f"  (closed form {p2_closed:.6f})"
        elif k in limits:
            extra = f"  (Gaussian limit {limits[k]:.6f})"
        lines.append(f"P{k} = {value}{extra}")
    if mc is not None:
        for k, entry in mc.items():
            if entry["value"] is None:
                lines.append(f"MC P{k} = undefined")
            else:
                se = entry["standard_error"]
                lines.append(f"MC P{k} = {entry['value']:.6f} +- {se:.6f}" if se is not None else f"MC P{k} = {entry['value']:.6f}")
    return "\n".join(lines) + "\n"


def cmd_dp(config: RunConfig) -> CommandOutput:
    """
    Degrees of polarization for the configured state.

    Reports the engine values for every requested order, the closed-form P2,
    the Gaussian-limit value of each even order above 2 and, with ``mc``, the
    six-setting Monte Carlo estimates with batch-means uncertainties.
    """
    spec = config.to_spec()
    meta = _run_meta(config)
    exact = exact_dp(config)
    p2_closed = closed_form_p2(spec.family, spec.sign, config.eta, spec.nbar)
    limits = {k: gaussian_limit_dp(p2_closed, k) for k in config.orders if k > 2 and k % 2 == 0}

    mc = None
    if config.mc:
        result = monte_carlo_dp(
            spec,
            _detector(config, spec, config.seed),
            orders=[k for k in config.orders if k >= 3],
            n_batches=config.batches,
            subtract_noise=config.subtract_noise,
        )
        mc = {}
        for est in [result.p1, result.p2] + list(result.higher.values()):
            if est.order in config.orders:
                mc[est.order] = {"value": est.value, "standard_error": est.standard_error}
        meta["mc_mean_S0"] = result.mean_S0

    data = {
        **meta,
        "orders": list(config.orders),
        "exact": {str(k): v for k, v in exact.items()},
        "closed_form_p2": p2_closed,
        "gaussian_limit": {str(k): v for k, v in limits.items()},
        "monte_carlo": None if mc is None else {str(k): v for k, v in mc.items()},
    }
    report = wrap_report(data, f"Degrees of polarization for {spec.label}", SCHEMA_DP)
    files = []
    if config.out:
        files.append(str(write_json(config.out, report)))
        report["data"]["files"] = files
    return CommandOutput(report, _dp_text(meta, exact, p2_closed, limits, mc), files)


def cmd_simulate(config: RunConfig) -> CommandOutput:
    """
    One simulated pulse batch at (chi_h, chi_q): pulse CSV plus moments JSON.

    The moments file sits next to the pulse file as ``<stem>_moments.json``
    and carries the engine moments for the same direction for comparison.
    """
    spec = config.to_spec()
    setting = WaveplateSetting.from_degrees(config.chi_h, config.chi_q)
    direction = direction_from_waveplates(setting)
    k_max = max([4] + list(config.orders))

    detector = _detector(config, spec, config.seed)
    batch = sample_pulses(outcome_table(spec, setting, config.cutoff), spec.quadruples, detector)
    estimates = estimate_moments(batch, k_max, config.batches)
    noise = _noise_reference(config, spec, 1)
    if noise is not None:
        estimates = subtract_electronic_noise(estimates, noise)
    hist = histogram(batch, config.bins)
    exact = gaussian.central_moments(spec, config.eta, direction, k_max)

    data = {
        **_run_meta(config),
        "chi_h_deg": config.chi_h,
        "chi_q_deg": config.chi_q,
        "direction_deg": [direction.theta_deg, direction.phi_deg],
        "pulses": batch.pulses,
        "noise_sigma": detector.electronic_noise_sigma,
        "noise_subtracted": noise is not None,
        "over_subtracted": estimates.over_subtracted,
        "moments": {
            str(k): {"value": m.value, "standard_error": m.standard_error} for k, m in estimates.s_n.items()
        },
        "s0_mean": {"value": estimates.s0_mean.value, "standard_error": estimates.s0_mean.standard_error},
        "channel_means": [{"value": m.value, "standard_error": m.standard_error} for m in estimates.channel_means],
        "nrf": None if estimates.nrf is None else {
            "value": estimates.nrf.value, "standard_error": estimates.nrf.standard_error,
        },
        "exact": {
            "mean_S_n": exact.mean_S_n,
            "mean_S0": exact.mean_S0,
            "central": {str(k): v for k, v in exact.central_moments.items()},
            "nrf": exact.nrf,
        },
        "histogram": {
            "edges": hist.edges,
            "centers": hist.centers,
            "counts": hist.counts,
            "skewness": hist.skewness,
            "normality_pvalue": hist.normality_pvalue,
        },
    }
    report = wrap_report(data, f"Simulated {batch.pulses} pulses of {spec.label}", SCHEMA_MOMENTS)

    files = []
    if config.out:
        files.append(str(write_pulse_csv(config.out, batch)))
        files.append(str(write_json(_sibling(config.out, "_moments.json"), report)))
        report["data"]["files"] = files
    return CommandOutput(report, csv_text(SCHEMA_PULSES, PULSE_COLUMNS, batch.rows()), files)


def parse_model(text: str) -> CurveModel:
    """'psi+:hwp' -> CurveModel."""
    label, sep, plate = text.partition(":")
    if not sep:
        raise InvalidArgumentError(f"Model must look like 'psi+:hwp', got '{text}'")
    return CurveModel.from_label(label, plate)


def cmd_fit(inputs: Sequence[str], models: Sequence[str], out: Optional[str] = None) -> CommandOutput:
    """
    Joint (eta, N) fit of one or more NRF curve files.

    Args:
        inputs: CSV files with chi_degrees,nrf[,sigma]
        models: One 'state:plate' per input, or a single one for all inputs
        out: JSON output path; residuals go to ``<stem>_residuals.csv``

    Raises:
        InvalidArgumentError: if the model list does not match the inputs
        DataParseError: for unreadable input rows
        UnidentifiableParametersError: from the fit
    """
    if not inputs:
        raise InvalidArgumentError("At least one input file is required")
    if len(models) == 1:
        models = list(models) * len(inputs)
    if len(models) != len(inputs):
        raise InvalidArgumentError(
            "Give one model per input file or a single model for all",
            {"inputs": len(inputs), "models": len(models)},
        )

    datasets = [parse_fit_csv(path, parse_model(m)) for path, m in zip(inputs, models)]
    result = fit(datasets)
    curves = fitted_curves(result, datasets)

    residual_rows = []
    for index, (dataset, curve) in enumerate(zip(datasets, curves)):
        for chi, y, f in zip(np.degrees(dataset.chi), dataset.nrf, curve):
            residual_rows.append([index, chi, y, f, y - f])

    data = {
        "inputs": [str(p) for p in inputs],
        "models": [d.model.label for d in datasets],
        "eta": result.eta,
        "N": result.N,
        "eta_se": result.eta_se,
        "N_se": result.N_se,
        "covariance": result.covariance,
        "converged": result.converged,
        "iterations": result.iterations,
        "residual_norm": result.residual_norm,
        "chi_square": result.chi_square,
        "dof": result.dof,
        "residuals": [dict(zip(RESIDUAL_COLUMNS, row)) for row in residual_rows],
    }
    report = wrap_report(data, "Fit converged" if result.converged else "Fit did not converge", SCHEMA_FIT)
    files = []
    if out:
        files.append(str(write_json(out, report)))
        files.append(str(write_csv(_sibling(out, "_residuals.csv"), SCHEMA_FIT_RESIDUALS, RESIDUAL_COLUMNS, residual_rows)))
        report["data"]["files"] = files
    return CommandOutput(report, None, files)


def cmd_validate(suites: Optional[Sequence[str]] = None, out: Optional[str] = None) -> CommandOutput:
    """
    Run the self-check suites.

    Raises:
        ValidationFailedError: naming every failed suite, after the report is written
    """
    results = run_validation(suites)
    summaries = [r.summary() for r in results]
    failed = [r.name for r in results if not r.passed]
    data = {"suites": summaries, "failed": failed}
    message = "All suites passed" if not failed else f"Failed: {', '.join(failed)}"
    report = wrap_report(data, message, SCHEMA_VALIDATE)
    if out:
        write_json(out, report)
    if failed:
        raise ValidationFailedError(failed, summaries)
    return CommandOutput(report, None, [out] if out else [])
