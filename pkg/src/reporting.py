"""
Output files: trace and metric CSVs, design tables, resolved configs and
experiment summaries.

CSVs are UTF-8, comma-separated, LF-terminated, with reals printed to 17
significant digits so a read-back reproduces every value exactly.
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import pandas as pd
import yaml

from src.scenario import TRACE_COLUMNS, TraceRecord
from src.analysis import MetricsReport, trace_frame
from src.utils.logger import logger

FLOAT_FORMAT = "%.17g"

METRIC_COLUMNS = [
    "steady_state_phase_error",
    "settling_time",
    "decay_time_constant",
    "stability",
    "peak_overshoot",
    "convergence_time",
    "max_abs_phase_error",
    "duration",
]

PathLike = Union[str, Path]


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_csv(df: pd.DataFrame, path: PathLike) -> Path:
    path = _prepare(path)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")
    logger.debug(f"Wrote {len(df)} rows to {path}")
    return path


def write_trace_csv(trace: Sequence[TraceRecord], path: PathLike) -> Path:
    df = trace_frame(trace) if trace else pd.DataFrame(columns=TRACE_COLUMNS)
    return write_csv(df[TRACE_COLUMNS], path)


def read_trace_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def metrics_frame(rows: Iterable[Dict[str, Any]], leading: Optional[List[str]] = None) -> pd.DataFrame:
    """Metric rows with any sweep/label columns first, then the fixed metric order"""
    df = pd.DataFrame(list(rows))
    leading = leading or [c for c in df.columns if c not in METRIC_COLUMNS]
    return df.reindex(columns=leading + METRIC_COLUMNS)


def write_metrics_csv(report: MetricsReport, path: PathLike, labels: Optional[Dict[str, Any]] = None) -> Path:
    row = {**(labels or {}), **report.to_row()}
    return write_csv(metrics_frame([row], list((labels or {}).keys())), path)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(data: Dict[str, Any], path: PathLike) -> Path:
    path = _prepare(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(_jsonable(data), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_yaml(document: Dict[str, Any], path: PathLike) -> Path:
    path = _prepare(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        yaml.safe_dump(document, f, sort_keys=False)
    return path
