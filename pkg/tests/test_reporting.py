import json
import math

import numpy as np
import pandas as pd
import yaml

from src.analysis import MetricsReport, Stability
from src.reporting import (
    METRIC_COLUMNS,
    metrics_frame,
    read_trace_csv,
    write_csv,
    write_json,
    write_metrics_csv,
    write_trace_csv,
    write_yaml,
)
from src.scenario import TRACE_COLUMNS, TraceRecord


def record(t, value):
    return TraceRecord(
        t=t, v_pcc_d=value, v_pcc_q=-value / 3, v_pcc_alpha=math.pi, v_pcc_beta=1e-17,
        theta_true=0.1, theta_hat=0.1 + value, phase_error=value, i_inv_d=1 / 7, i_inv_q=0.0,
        i_pcc_d=2 / 3, i_pcc_q=0.0, v_c_d=1.0, v_c_q=0.0, u_d=1.0, u_q=0.0,
        delta=math.nan, omega_m=math.nan, z_active=0.3,
    )


def test_trace_csv_reads_back_exactly(tmp_path):
    trace = [record(k * 1e-4, 0.1 * k / 3) for k in range(5)]
    path = write_trace_csv(trace, tmp_path / "nested" / "trace.csv")
    df = read_trace_csv(path)
    assert list(df.columns) == TRACE_COLUMNS
    assert df["v_pcc_q"].tolist() == [r.v_pcc_q for r in trace]
    assert df["i_inv_d"].iloc[0] == 1 / 7
    assert df["delta"].isna().all()
    assert not df["diverged"].any()


def test_csv_layout(tmp_path):
    path = write_csv(pd.DataFrame({"a": [1.0, 2.5], "b": ["x", "y"]}), tmp_path / "t.csv")
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    assert raw.splitlines()[0] == b"a,b"


def test_empty_trace_writes_header_only(tmp_path):
    path = write_trace_csv([], tmp_path / "empty.csv")
    assert path.read_text(encoding="utf-8").strip() == ",".join(TRACE_COLUMNS)


def test_metrics_columns_follow_labels(tmp_path):
    report = MetricsReport(1e-4, 0.012, None, Stability.STABLE, 0.05, 0.1, 0.4, 0.5)
    path = write_metrics_csv(report, tmp_path / "metrics.csv", {"method": "AAEKF-LQR"})
    df = pd.read_csv(path)
    assert list(df.columns) == ["method"] + METRIC_COLUMNS
    assert df.loc[0, "stability"] == "stable"
    assert np.isnan(df.loc[0, "decay_time_constant"])


def test_metrics_frame_orders_leading_columns():
    rows = [{"duration": 1.0, "point": 0, "kalman.q_kf": 1e-6}]
    df = metrics_frame(rows, ["point", "kalman.q_kf"])
    assert list(df.columns[:2]) == ["point", "kalman.q_kf"]
    assert list(df.columns[2:]) == METRIC_COLUMNS


def test_json_replaces_non_finite(tmp_path):
    path = write_json({"tau": math.inf, "ok": True, "gain": np.float64(0.5), "rows": (1, 2)}, tmp_path / "s.json")
    data = json.loads(path.read_text(encoding="utf-8"))
    assert data == {"gain": 0.5, "ok": True, "rows": [1, 2], "tau": None}


def test_yaml_keeps_key_order(tmp_path):
    path = write_yaml({"schema": "gfl-sync-lab/v1", "scenario": {"name": "x"}}, tmp_path / "c.yaml")
    text = path.read_text(encoding="utf-8")
    assert text.startswith("schema:")
    assert yaml.safe_load(text)["scenario"]["name"] == "x"
