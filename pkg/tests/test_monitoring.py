import math

import numpy as np
import pandas as pd
import pytest

from src.core.errors import ConfigError, DomainError
from src.data.serialization import read_glued_field, read_json, trace_frame, write_glued_field, write_json, write_sweep
from src.gluing.config import GluingConfig, GluingPoint, GridResolution, SummandSpec
from src.gluing.factor import approximate_factor
from src.gluing.manifold import build_connected_sum
from src.monitoring.solve_monitor import SolveMonitor
from src.versioning.run_versioning import RunVersioning


class TestSolveMonitor:
    def test_ratios(self):
        monitor = SolveMonitor(window=2)
        monitor.log_iteration(0, 1.0, float("nan"))
        monitor.log_iteration(1, 0.5, 0.4)
        monitor.log_iteration(2, 0.1, 0.1)
        ratios = monitor.ratio_trace()
        assert math.isnan(ratios[0]) and math.isnan(ratios[1])
        assert ratios[2] == pytest.approx(0.25)
        assert monitor.residuals() == [1.0, 0.5, 0.1]

    def test_insufficient_data(self):
        monitor = SolveMonitor(window=3)
        monitor.log_iteration(0, 1.0, float("nan"))
        monitor.log_iteration(1, 0.9, 0.5)
        assert monitor.detect_divergence()["status"] == "insufficient_data"

    def test_divergence(self):
        monitor = SolveMonitor(window=2)
        for k, increment in enumerate([1.0, 1.2, 1.5, 2.0]):
            monitor.log_iteration(k, 1.0, increment)
        result = monitor.detect_divergence()
        assert result["status"] == "diverging"
        assert result["max_ratio"] == pytest.approx(2.0 / 1.5)

    def test_contraction_summary(self):
        monitor = SolveMonitor(window=2)
        for k, increment in enumerate([1.0, 0.5, 0.25, 0.125]):
            monitor.log_iteration(k, increment, increment, damping=1.0)
        assert monitor.detect_divergence()["status"] == "contracting"
        summary = monitor.summary()
        assert summary["iterations"] == 4
        assert summary["contraction_estimate"] == pytest.approx(0.5)
        assert list(monitor.to_frame().columns) == ["iteration", "residual", "increment", "ratio"]

    def test_entry_cap(self):
        monitor = SolveMonitor(max_entries=5)
        for k in range(8):
            monitor.log_iteration(k, 1.0, 1.0)
        assert [e["iteration"] for e in monitor.entries] == [3, 4, 5, 6, 7]


class TestRunVersioning:
    def test_create_and_verify(self, tmp_path):
        artifact = tmp_path / "factor.csv"
        artifact.write_text("chart,value\nbody0,1.0\n")
        versioning = RunVersioning(tmp_path / "runs")
        config = {"gluing": {"n": 3}}
        version = versioning.create_version("solve", config, [str(artifact)], {"seed": 0})
        assert version.startswith("v")
        assert version.endswith(RunVersioning.config_hash(config)[:8])
        latest = versioning.latest("solve")
        assert latest["version"] == version
        assert all(versioning.verify_artifacts("solve").values())

        artifact.write_text("chart,value\nbody0,2.0\n")
        assert not any(versioning.verify_artifacts("solve").values())

    def test_unknown_command(self, tmp_path):
        versioning = RunVersioning(tmp_path)
        assert versioning.list_versions("sweep") == []
        assert versioning.verify_artifacts("sweep") == {}

    def test_config_hash_is_order_independent(self):
        assert RunVersioning.config_hash({"a": 1, "b": 2}) == RunVersioning.config_hash({"b": 2, "a": 1})


@pytest.fixture(scope="module")
def single_body():
    summand = SummandSpec(n=3, eps=0.4, gluing_point=GluingPoint(0.0))
    grid = GridResolution(h_body=0.2, n_theta=21, h_neck=0.2, n_psi=21, end_periods=2.0)
    return build_connected_sum(GluingConfig((summand,), (), 1.0, grid))


def test_glued_field_round_trip(tmp_path, single_body):
    u_T = approximate_factor(single_body)
    csv_path, charts_path = write_glued_field(tmp_path, u_T, "u_T")
    np.testing.assert_array_equal(read_glued_field(csv_path, single_body), u_T.values)
    headers = read_json(charts_path)["charts"]
    assert len(headers) == len(single_body.patches)


def test_glued_field_layout_checks(tmp_path, single_body):
    csv_path, _ = write_glued_field(tmp_path, approximate_factor(single_body), "u_T")
    frame = pd.read_csv(csv_path)
    frame.iloc[:-1].to_csv(tmp_path / "short.csv", index=False)
    with pytest.raises(DomainError):
        read_glued_field(tmp_path / "short.csv", single_body)
    frame.drop(columns=["value"]).to_csv(tmp_path / "bare.csv", index=False)
    with pytest.raises(ConfigError):
        read_glued_field(tmp_path / "bare.csv", single_body)


def test_trace_frame_orders_columns():
    frame = trace_frame([{"ratio": 0.5, "iteration": 1, "damping": 1.0}])
    assert list(frame.columns) == ["iteration", "residual", "increment", "ratio", "damping"]
    assert frame["residual"].isna().all()


def test_write_json_is_plain(tmp_path):
    path = write_json(tmp_path / "out" / "payload.json", {
        "array": np.arange(3),
        "scalar": np.float64(1.5),
        "flag": np.bool_(True),
        "missing": float("nan"),
        "root": complex(1.0, -2.0),
    })
    payload = read_json(path)
    assert payload == {"array": [0, 1, 2], "scalar": 1.5, "flag": True, "missing": None, "root": [1.0, -2.0]}


def test_read_json_errors(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("[1,")
    with pytest.raises(ConfigError):
        read_json(path)


def test_sweep_without_inverse_norms(tmp_path):
    path = write_sweep(tmp_path, [8.0, 10.0], f_norms=[1e-2, 5e-3])
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["T", "f_norm", "inverse_norm"]
    assert frame["inverse_norm"].isna().all()
