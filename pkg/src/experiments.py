"""
Simulation, design and sweep drivers plus the canned experiment bundles
behind ``reproduce``.

Each bundle writes its tables into its own directory and records the
checks it evaluated in ``summary.json``. A failed check is a result, not
an error.
"""

import itertools
import math
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src.analysis import MetricsReport, Stability, compute_metrics
from src.kalman_sync import GridImpedance, KfVariant, build_kf_model, error_dynamics, steady_state_gain
from src.lqr import (
    REFERENCE_GAINS,
    REFERENCE_UNIT,
    REFERENCE_WEIGHTS,
    LclParams,
    compare_gains,
    design_lqr,
    design_report,
    dominant_entries_match,
    gain_symmetry_error,
)
from src.reporting import metrics_frame, write_csv, write_json, write_metrics_csv, write_trace_csv, write_yaml
from src.scenario import TraceRecord, filter_params, impedance_schedule, run_scenario
from src.schema import SCHEMA_ID, ScenarioConfig, validate_document, with_overrides
from src.utils.config import config
from src.utils.errors import ConfigError
from src.utils.logger import logger, run_log

WEAK_GRID = {"time": 0.0, "magnitude": 2.0, "angle_deg": 70.0}
STAIRCASE = [
    {"time": 0.0, "magnitude": 0.3, "angle_deg": 70.0},
    {"time": 0.08, "magnitude": 0.6, "angle_deg": 70.0},
    {"time": 0.16, "magnitude": 1.2, "angle_deg": 70.0},
    {"time": 0.24, "magnitude": 1.9, "angle_deg": 70.0},
    {"time": 0.32, "magnitude": 2.2, "angle_deg": 70.0},
]
Q_KF_VALUES = (1e-5, 1e-6, 1e-7)
QKF_INITIAL_OFFSET = 0.1
QKF_DURATION = 2.5
MODEL_ERRORS = (-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2)
FIVE_METHODS = ("CPLL", "CVI-PLL", "MVI-PLL", "CAEKF", "AAEKF-LQR")
MACHINE_METHODS = ("none", "CVI-PLL", "MVI-PLL", "AAEKF-LQR")
MACHINE_FREQUENCIES = (3.0, 8.0, 15.0)
# slower swings decay over longer windows
MACHINE_DURATIONS = {3.0: 6.0, 8.0: 2.0, 15.0: 1.0}
# decay constants at 8 Hz used as factor-of-two targets
DECAY_TARGETS_8HZ = {"none": 0.563, "AAEKF-LQR": 0.088}
# steady phase errors below this are numerically indistinguishable
PHASE_ERROR_FLOOR = 1e-5
# inverter current in the machine study; a 1 pu reference across the 2 pu tie leaves no lock point
MACHINE_STUDY_CURRENT = 0.3


def base_document(name: str, **sections: Any) -> Dict[str, Any]:
    document: Dict[str, Any] = {"schema": SCHEMA_ID, "scenario": {"name": name}}
    for key, value in sections.items():
        if key == "scenario":
            document["scenario"].update(value)
        else:
            document[key] = value
    return document


# ---------------------------------------------------------------------------
# single runs
# ---------------------------------------------------------------------------


def metrics_for(cfg: ScenarioConfig, trace: List[TraceRecord]) -> MetricsReport:
    a = cfg.analysis
    decay_start = cfg.machine.release_time if cfg.machine is not None else 0.0
    return compute_metrics(
        trace,
        settling_band=a.settling_band,
        oscillation_threshold=a.oscillation_threshold,
        final_window=a.final_window,
        convergence_threshold=a.convergence_threshold,
        decay_start=decay_start,
    )


def simulate(cfg: ScenarioConfig, out_dir: Path, seed: Optional[int] = None) -> Tuple[List[TraceRecord], MetricsReport]:
    """Run one scenario and write trace.csv, metrics.csv and the resolved config"""
    out_dir = Path(out_dir)
    with run_log(out_dir, cfg.scenario.name):
        trace = run_scenario(cfg, seed)
        if not trace:
            raise ConfigError("scenario produced no samples", field="scenario.duration")
        report = metrics_for(cfg, trace)
        if cfg.output.write_trace:
            write_trace_csv(trace, out_dir / "trace.csv")
        write_metrics_csv(report, out_dir / "metrics.csv", {"method": cfg.scenario.method.value})
        write_yaml(cfg.to_document(), out_dir / "config.resolved.yaml")
        logger.info(
            f"✓ {cfg.scenario.method.value}: {report.stability.value}, "
            f"steady phase error {report.steady_state_phase_error:.3e} rad"
        )
    return trace, report


def design(cfg: ScenarioConfig, out_dir: Path) -> Dict[str, Any]:
    """LQR design report, Kalman steady gain and A_error spectrum for a config"""
    out_dir = Path(out_dir)
    lqr = design_lqr(filter_params(cfg, cfg.lqr.unit), cfg.lqr.weights.as_tuple(), cfg.scenario.ts)
    write_csv(design_report(lqr), out_dir / "lqr_design.csv")
    write_csv(pd.DataFrame(lqr.K, columns=[f"k{j}" for j in range(6)]), out_dir / "lqr_gain.csv")

    z = impedance_schedule(cfg)[0][1]
    kf = build_kf_model(
        z,
        omega_g=2.0 * math.pi * cfg.grid.frequency,
        Ts=cfg.scenario.ts,
        q_kf=cfg.kalman.q_kf,
        Rkf=cfg.kalman.r_kf,
        variant=KfVariant.AAEKF,
    )
    K, P = steady_state_gain(kf)
    _, spectrum, stable = error_dynamics(kf, K)
    write_csv(pd.DataFrame(K, columns=["k_alpha", "k_beta"]), out_dir / "kalman_gain.csv")
    write_csv(pd.DataFrame(spectrum.as_rows()), out_dir / "aerror_eigenvalues.csv")

    summary = {
        "lqr_spectral_radius": lqr.spectral_radius,
        "lqr_gain_symmetry_error": gain_symmetry_error(lqr.K),
        "lqr_gain_row0": lqr.K[0].tolist(),
        "kalman_q_kf": cfg.kalman.q_kf,
        "aerror_spectral_radius": spectrum.spectral_radius,
        "aerror_stable": stable,
    }
    write_json(summary, out_dir / "design_summary.json")
    logger.info(
        f"✓ Design written to {out_dir}: LQR radius {lqr.spectral_radius:.6f}, "
        f"A_error radius {spectrum.spectral_radius:.6f}"
    )
    return summary


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def sweep_points(cfg: ScenarioConfig) -> List[Dict[str, Any]]:
    """Cartesian product of the sweep axes in declaration order"""
    if cfg.sweep is None:
        raise ConfigError("config has no sweep section", field="sweep")
    keys = list(cfg.sweep.axes.keys())
    return [dict(zip(keys, combo)) for combo in itertools.product(*cfg.sweep.axes.values())]


def _run_point(base: ScenarioConfig, point: Dict[str, Any], seed: Optional[int]):
    cfg = with_overrides(base, point.items())
    trace = run_scenario(cfg, seed)
    return trace, metrics_for(cfg, trace)


def run_sweep(
    cfg: ScenarioConfig,
    jobs: Optional[int] = None,
    seed: Optional[int] = None,
    out_dir: Optional[Path] = None,
) -> pd.DataFrame:
    """
    One metrics row per grid point, in grid order.

    Points run through joblib; per-point traces go to ``points/`` when an
    output directory is given.
    """
    points = sweep_points(cfg)
    if not points:
        raise ConfigError("sweep grid is empty", field="sweep.axes")
    base = with_overrides(cfg, [("sweep", None)])
    jobs = jobs or config.SWEEP_JOBS
    logger.info(f"Sweep over {len(points)} points with {jobs} job(s)")

    results = Parallel(n_jobs=jobs)(delayed(_run_point)(base, point, seed) for point in points)

    rows = []
    for index, (point, (trace, report)) in enumerate(zip(points, results)):
        if out_dir is not None and cfg.output.write_trace:
            write_trace_csv(trace, Path(out_dir) / "points" / f"point_{index:04d}.csv")
        rows.append({"point": index, **point, **report.to_row()})
    table = metrics_frame(rows, ["point", *points[0].keys()])
    if out_dir is not None:
        write_csv(table, Path(out_dir) / "metrics.csv")
    return table


# ---------------------------------------------------------------------------
# canned experiments
# ---------------------------------------------------------------------------


def reproduce_gains(out_dir: Path, **_) -> Dict[str, Any]:
    """Reference weight sets under both unit conventions"""
    checks: Dict[str, Any] = {}
    tables = []
    for name, weights in REFERENCE_WEIGHTS.items():
        matched_any = False
        for unit in ("pu", "si"):
            d = design_lqr(LclParams(unit=unit), weights, 1e-4)
            cmp = compare_gains(d.K, REFERENCE_GAINS[name])
            cmp.insert(0, "unit", unit)
            cmp.insert(0, "weights", name)
            tables.append(cmp)
            write_csv(design_report(d), out_dir / f"design_{name}_{unit}.csv")
            matched = dominant_entries_match(cmp)
            matched_any = matched_any or matched
            checks[f"{name}_{unit}_symmetric"] = bool(gain_symmetry_error(d.K) <= 1e-8)
            checks[f"{name}_{unit}_stable"] = bool(d.spectral_radius < 1.0)
            checks[f"{name}_{unit}_dominant_match"] = bool(matched)
        checks[f"{name}_dominant_match_any_unit"] = matched_any
    write_csv(pd.concat(tables, ignore_index=True), out_dir / "gain_comparison.csv")
    return checks


def reproduce_aerror(out_dir: Path, **_) -> Dict[str, Any]:
    """A_error spectra across q_kf at the 2∠70° pu grid"""
    z = GridImpedance.polar(2.0, math.radians(70.0))
    rows, checks = [], {}
    for q in Q_KF_VALUES:
        model = build_kf_model(z, q_kf=q, Rkf=np.eye(2))
        K, _ = steady_state_gain(model)
        _, spectrum, stable = error_dynamics(model, K)
        for lam in spectrum:
            rows.append({"q_kf": q, "real": lam.real, "imag": lam.imag, "magnitude": abs(lam)})
        checks[f"q_kf_{q:g}_radius_in_(0.99,1)"] = bool(0.99 < spectrum.spectral_radius < 1.0)
        checks[f"q_kf_{q:g}_stable"] = bool(stable)
    write_csv(pd.DataFrame(rows), out_dir / "aerror_eigenvalues.csv")
    return checks


def _run_labelled(documents: Dict[str, Dict[str, Any]], out_dir: Path, seed, jobs) -> Dict[str, Tuple]:
    cfgs = {label: validate_document(doc) for label, doc in documents.items()}
    traces = Parallel(n_jobs=jobs)(delayed(run_scenario)(cfg, seed) for cfg in cfgs.values())
    results = {}
    rows = []
    for (label, cfg), trace in zip(cfgs.items(), traces):
        report = metrics_for(cfg, trace)
        write_trace_csv(trace, out_dir / f"trace_{label}.csv")
        rows.append({"label": label, **report.to_row()})
        results[label] = (cfg, trace, report)
    write_csv(metrics_frame(rows, ["label"]), out_dir / "metrics.csv")
    return results


def reproduce_qkf(out_dir: Path, seed=None, jobs=1) -> Dict[str, Any]:
    """
    AAEKF-LQR phase error for three process-noise levels on a weak grid.

    The filter runs on its steady-state gain from a 0.1 rad offset, and the
    PCC voltage carries the grid inductance's L·di/dt, so the current
    start-up transient reaches the estimate through the gain.
    """
    documents = {
        f"q_kf_{q:g}": base_document(
            f"q_kf_{q:g}",
            scenario={"method": "AAEKF-LQR", "duration": QKF_DURATION},
            grid={"impedance_schedule": [WEAK_GRID], "initial_phase": -QKF_INITIAL_OFFSET, "pcc_model": "series"},
            kalman={"q_kf": q, "gain_mode": "steady_state"},
            lqr={"v_pcc_op": "nominal"},
        )
        for q in Q_KF_VALUES
    }
    results = _run_labelled(documents, out_dir, seed, jobs)
    reports = [results[f"q_kf_{q:g}"][2] for q in Q_KF_VALUES]
    conv = [r.convergence_time if r.convergence_time is not None else math.inf for r in reports]
    peaks = [r.max_abs_phase_error for r in reports]
    return {
        "convergence_time_decreasing_in_q_kf": all(a < b for a, b in zip(conv, conv[1:])),
        "peak_error_increasing_in_q_kf": all(a > b for a, b in zip(peaks, peaks[1:])),
        "all_steady_error_below_1e-3": all(r.steady_state_phase_error < 1e-3 for r in reports),
        "convergence_times": dict(zip(documents, conv)),
        "peak_errors": dict(zip(documents, peaks)),
    }


def reproduce_gain_step(out_dir: Path, seed=None, jobs=1) -> Dict[str, Any]:
    """PCC voltage settling with low and high LQR gains on the weak grid, gains designed in SI"""
    documents = {
        name: base_document(
            name,
            scenario={"method": "AAEKF-LQR", "duration": 0.2},
            grid={"impedance_schedule": [WEAK_GRID]},
            lqr={
                "weights": dict(zip(("q1", "q2", "q3", "r"), weights)),
                "unit": REFERENCE_UNIT,
                "v_sat": None,
            },
        )
        for name, weights in REFERENCE_WEIGHTS.items()
    }
    results = _run_labelled(documents, out_dir, seed, jobs)
    low = results["low_gain"][2].settling_time
    high = results["high_gain"][2].settling_time
    low_value = math.inf if low is None else low
    high_value = math.inf if high is None else high
    return {
        "high_gain_settles_first": high_value < low_value,
        "high_gain_within_0.01s": high_value <= 0.01,
        "low_gain_beyond_0.015s": low_value > 0.015,
        "settling_times": {"low_gain": low, "high_gain": high},
    }


def reproduce_model_error(out_dir: Path, seed=None, jobs=1) -> Dict[str, Any]:
    """AAEKF-LQR robustness to a mis-modelled grid impedance"""
    documents = {
        f"error_{e:+.2f}": base_document(
            f"error_{e:+.2f}",
            scenario={"method": "AAEKF-LQR", "duration": 0.4},
            grid={"impedance_schedule": [WEAK_GRID], "impedance_model_error": e},
        )
        for e in MODEL_ERRORS
    }
    results = _run_labelled(documents, out_dir, seed, jobs)
    reports = {e: results[f"error_{e:+.2f}"][2] for e in MODEL_ERRORS}
    by_magnitude: Dict[float, List[float]] = {}
    for e, r in reports.items():
        by_magnitude.setdefault(abs(e), []).append(r.steady_state_phase_error)
    ordered = [max(v) for _, v in sorted(by_magnitude.items())]
    return {
        "all_stable": all(r.stability is Stability.STABLE for r in reports.values()),
        "phase_error_nondecreasing_in_abs_error": all(a <= b for a, b in zip(ordered, ordered[1:])),
        "steady_phase_errors": {f"{e:+.2f}": r.steady_state_phase_error for e, r in reports.items()},
    }


def _first_saturation(trace: List[TraceRecord], v_sat: float, after: float = 0.0) -> float:
    """First time at or after ``after`` at which the controller output sits on the v_sat circle"""
    for r in trace:
        if r.t >= after and math.hypot(r.u_d, r.u_q) >= v_sat * (1.0 - 1e-9):
            return r.t
    return math.inf


def reproduce_staircase(out_dir: Path, seed=None, jobs=1) -> Dict[str, Any]:
    """
    Five synchronisers under the stepped grid impedance.

    Saturation is only looked for from the first impedance step on, so the
    start-up current transient does not count. Steady phase errors below
    PHASE_ERROR_FLOOR are treated as equal.
    """
    documents = {
        method: base_document(
            method,
            scenario={"method": method, "duration": 0.4},
            grid={"impedance_schedule": STAIRCASE},
        )
        for method in FIVE_METHODS
    }
    results = _run_labelled(documents, out_dir, seed, jobs)
    reports = {m: results[m][2] for m in FIVE_METHODS}
    v_sat = results["CVI-PLL"][0].lqr.v_sat or math.inf
    first_step = STAIRCASE[1]["time"]
    sat = {m: _first_saturation(results[m][1], v_sat, first_step) for m in ("CVI-PLL", "MVI-PLL")}
    errors = {m: r.steady_state_phase_error for m, r in reports.items() if r.stability is not Stability.DIVERGED}
    best = max(min(errors.values()), PHASE_ERROR_FLOOR) if errors else 0.0
    return {
        "aaekf_lqr_stable": reports["AAEKF-LQR"].stability is Stability.STABLE,
        "cpll_unstable": reports["CPLL"].stability is not Stability.STABLE,
        "aaekf_lqr_smallest_phase_error": "AAEKF-LQR" in errors and errors["AAEKF-LQR"] <= best,
        "cvi_saturates_before_mvi": math.isfinite(sat["CVI-PLL"]) and sat["CVI-PLL"] <= sat["MVI-PLL"],
        "first_saturation": sat,
        "steady_phase_errors": errors,
        "stability": {m: r.stability.value for m, r in reports.items()},
    }


def reproduce_machine(out_dir: Path, seed=None, jobs=1) -> Dict[str, Any]:
    """Electromechanical decay constants for three swing frequencies and four configurations"""
    documents = {
        f"{method}_{f:g}Hz": base_document(
            f"{method}_{f:g}Hz",
            scenario={"method": method, "duration": MACHINE_DURATIONS[f]},
            grid={"impedance_schedule": [WEAK_GRID]},
            reference={"magnitude": MACHINE_STUDY_CURRENT},
            machine={"target_frequency": f},
        )
        for f in MACHINE_FREQUENCIES
        for method in MACHINE_METHODS
    }
    results = _run_labelled(documents, out_dir, seed, jobs)

    def tau(method: str, f: float) -> float:
        value = results[f"{method}_{f:g}Hz"][2].decay_time_constant
        return math.inf if value is None else value

    checks: Dict[str, Any] = {}
    for f in (3.0, 8.0):
        checks[f"ordering_{f:g}Hz"] = tau("AAEKF-LQR", f) < tau("MVI-PLL", f) < min(tau("none", f), tau("CVI-PLL", f))
    for method, target in DECAY_TARGETS_8HZ.items():
        checks[f"{method}_8Hz_within_factor_2"] = 0.5 * target <= tau(method, 8.0) <= 2.0 * target
    checks["decay_constants"] = {label: r[2].decay_time_constant for label, r in results.items()}
    return checks


def _plain(value: Any) -> Any:
    """numpy scalars to Python scalars, recursively, so bool checks stay countable"""
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


EXPERIMENTS: Dict[str, Callable[..., Dict[str, Any]]] = {
    "fig3": reproduce_qkf,
    "fig4": reproduce_gain_step,
    "fig5": reproduce_model_error,
    "fig6_fig7": reproduce_staircase,
    "fig8_tableIV": reproduce_machine,
    "eq22_eq23": reproduce_gains,
    "aerror": reproduce_aerror,
}


def reproduce(experiment_id: str, out_dir: Path, seed: Optional[int] = None, jobs: int = 1) -> Dict[str, Any]:
    if experiment_id not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {experiment_id!r}; valid ids: {', '.join(EXPERIMENTS)}", field="experiment"
        )
    out_dir = Path(out_dir) / experiment_id
    with run_log(out_dir, experiment_id):
        logger.info(f"Reproducing {experiment_id} into {out_dir}")
        checks = _plain(EXPERIMENTS[experiment_id](out_dir, seed=seed, jobs=jobs))
        summary = {"experiment": experiment_id, "seed": seed, "checks": checks}
        write_json(summary, out_dir / "summary.json")
        passed = sum(1 for v in checks.values() if v is True)
        total = sum(1 for v in checks.values() if isinstance(v, bool))
        logger.info(f"✓ {experiment_id}: {passed}/{total} checks passed")
    return summary
