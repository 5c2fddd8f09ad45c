"""
Trace post-processing: phase-error statistics, settling and convergence
times, amplitude-decay time constant and stability classification.
"""

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.signal import find_peaks

from src.utils.config import config
from src.utils.errors import ConfigError, InsufficientOscillationError
from src.utils.logger import logger

MIN_EXTREMA = 3


class Stability(str, Enum):
    STABLE = "stable"
    OSCILLATORY = "oscillatory"
    DIVERGED = "diverged"


@dataclass(frozen=True)
class MetricsReport:
    """None marks a metric that does not apply (never settled, no oscillation)"""

    steady_state_phase_error: float
    settling_time: Optional[float]
    decay_time_constant: Optional[float]
    stability: Stability
    peak_overshoot: float
    convergence_time: Optional[float] = None
    max_abs_phase_error: float = 0.0
    duration: float = 0.0

    def to_row(self) -> dict:
        row = asdict(self)
        row["stability"] = self.stability.value
        return row


def trace_frame(trace) -> pd.DataFrame:
    """Trace records (or an already-built frame) as a DataFrame"""
    if isinstance(trace, pd.DataFrame):
        return trace
    return pd.DataFrame([asdict(r) for r in trace])


def _final_window(t: np.ndarray, fraction: float) -> np.ndarray:
    start = t[0] + (1.0 - fraction) * (t[-1] - t[0])
    return t >= start


def settling_time(t: Sequence[float], values: Sequence[float], target: float, band: float = 0.02) -> Optional[float]:
    """
    First time after which every sample stays within the band around target.

    The band is relative (band·|target|), or absolute when target is 0.
    Returns None when the last sample is still outside the band.
    """
    if band <= 0:
        raise ConfigError(f"band must be positive, got {band}", field="analysis.settling_band")
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size == 0:
        return None
    tol = band * abs(target) if target != 0 else band
    outside = ~(np.abs(v - target) <= tol)
    if not outside.any():
        return float(t[0])
    last_out = int(np.flatnonzero(outside)[-1])
    if last_out == t.size - 1:
        return None
    return float(t[last_out + 1])


def convergence_time(t: Sequence[float], phase_error: Sequence[float], threshold: float = 1e-2) -> Optional[float]:
    """First time after which |phase error| stays below ``threshold``"""
    return settling_time(t, np.abs(np.asarray(phase_error, dtype=float)), 0.0, threshold)


def decay_time_constant(t: Sequence[float], values: Sequence[float], min_peak_fraction: float = 0.01) -> float:
    """
    Time for the oscillation envelope to fall to 1/e of its initial value.

    The series is referred to the median of its final quarter, absolute
    peaks from the largest one onward are fitted with a log-linear least
    squares line, and peaks under ``min_peak_fraction`` of the maximum are
    dropped. An envelope that does not decay within the trace length gives
    ``math.inf``.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size < 2 * MIN_EXTREMA:
        raise InsufficientOscillationError(f"series too short ({t.size} samples)")

    tail = v[int(0.75 * v.size):]
    magnitude = np.abs(v - np.median(tail))
    peaks, _ = find_peaks(magnitude)
    if peaks.size < MIN_EXTREMA:
        raise InsufficientOscillationError(f"found {peaks.size} extrema, need {MIN_EXTREMA}")

    peaks = peaks[int(np.argmax(magnitude[peaks])):]
    heights = magnitude[peaks]
    keep = heights >= min_peak_fraction * heights.max()
    peaks, heights = peaks[keep], heights[keep]
    if peaks.size < MIN_EXTREMA:
        raise InsufficientOscillationError(f"only {peaks.size} extrema above the noise floor")

    slope, _ = np.polyfit(t[peaks], np.log(heights), 1)
    if slope >= 0:
        return math.inf
    tau = -1.0 / slope
    if tau > t[-1] - t[0]:
        return math.inf
    return float(tau)


def steady_state_phase_error(trace, window: float = 0.2) -> float:
    """Mean |phase error| over the final ``window`` fraction of the trace"""
    df = trace_frame(trace)
    if df.empty:
        raise ConfigError("trace is empty", field="trace")
    t = df["t"].to_numpy()
    mask = _final_window(t, window)
    return float(np.abs(df["phase_error"].to_numpy()[mask]).mean())


def peak_overshoot(values: Sequence[float], target: float) -> float:
    """Largest excursion past ``target`` in the direction of approach, 0 if none"""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return 0.0
    sign = 1.0 if target >= v[0] else -1.0
    return float(max(0.0, np.max(sign * (v - target))))


STATE_COLUMNS = [
    "v_pcc_d", "v_pcc_q", "i_inv_d", "i_inv_q", "i_pcc_d", "i_pcc_q", "v_c_d", "v_c_q", "u_d", "u_q",
]


def stability_classify(
    trace,
    oscillation_threshold: float = 0.05,
    window: float = 0.2,
    limit: Optional[float] = None,
) -> Stability:
    df = trace_frame(trace)
    if df.empty:
        raise ConfigError("trace is empty", field="trace")
    limit = config.DIVERGENCE_LIMIT if limit is None else limit

    states = df[STATE_COLUMNS].to_numpy(dtype=float)
    if df["diverged"].any() or not np.all(np.isfinite(states)) or np.abs(states).max() > limit:
        return Stability.DIVERGED

    mask = _final_window(df["t"].to_numpy(), window)
    tail = df["phase_error"].to_numpy()[mask]
    if np.ptp(tail) > oscillation_threshold:
        return Stability.OSCILLATORY
    return Stability.STABLE


def compute_metrics(
    trace,
    settling_band: float = 0.02,
    oscillation_threshold: float = 0.05,
    final_window: float = 0.2,
    convergence_threshold: float = 1e-2,
    decay_signal: str = "delta",
    decay_start: float = 0.0,
) -> MetricsReport:
    """
    Summarise a trace.

    Settling time and overshoot are measured on the d-axis PCC voltage
    against its final-window mean. The decay constant uses ``decay_signal``
    from ``decay_start`` on, falling back to the phase error when the trace
    has no machine.
    """
    df = trace_frame(trace)
    if df.empty:
        raise ConfigError("trace is empty", field="trace")
    t = df["t"].to_numpy(dtype=float)
    stability = stability_classify(df, oscillation_threshold, final_window)

    vd = df["v_pcc_d"].to_numpy(dtype=float)
    mask = _final_window(t, final_window)
    target = float(vd[mask].mean())

    signal = decay_signal
    if signal not in df or not np.all(np.isfinite(df[signal].to_numpy(dtype=float))):
        signal = "phase_error"
    after = t >= decay_start
    try:
        tau = decay_time_constant(t[after], df[signal].to_numpy(dtype=float)[after])
        decay = None if math.isinf(tau) else tau
    except InsufficientOscillationError as e:
        logger.debug(f"No decay constant for {signal}: {e}")
        decay = None

    phase_error = df["phase_error"].to_numpy(dtype=float)
    return MetricsReport(
        steady_state_phase_error=steady_state_phase_error(df, final_window),
        settling_time=settling_time(t, vd, target, settling_band),
        decay_time_constant=decay,
        stability=stability,
        peak_overshoot=peak_overshoot(vd, target),
        convergence_time=convergence_time(t, phase_error, convergence_threshold),
        max_abs_phase_error=float(np.abs(phase_error).max()),
        duration=float(t[-1] - t[0]) if t.size > 1 else 0.0,
    )
