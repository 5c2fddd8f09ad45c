from pathlib import Path

import pytest

from src.schema import (
    SCHEMA_ID,
    ControllerKind,
    Method,
    apply_overrides,
    load_scenario,
    parse_override,
    read_document,
    set_dotted,
    validate_document,
    with_overrides,
)
from src.utils.errors import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def test_defaults():
    cfg = validate_document({"schema": SCHEMA_ID})
    assert cfg.scenario.method is Method.AAEKF_LQR
    assert cfg.scenario.resolved_controller is ControllerKind.LQR
    assert cfg.grid.impedance_schedule[0].magnitude == pytest.approx(0.3)
    assert cfg.lqr.v_sat == pytest.approx(2.5)
    assert cfg.machine is None
    assert cfg.grid.pcc_model == "phasor"
    assert cfg.scenario.delay_compensation is True


@pytest.mark.parametrize(
    "method, controller",
    [("CPLL", ControllerKind.PI), ("MVI-PLL", ControllerKind.PI), ("CAEKF", ControllerKind.LQR), ("none", ControllerKind.PI)],
)
def test_default_controller_per_method(make_config, method, controller):
    assert make_config(scenario={"method": method}).scenario.resolved_controller is controller


def test_explicit_controller_wins(make_config):
    cfg = make_config(scenario={"method": "CPLL", "controller": "LQR"})
    assert cfg.scenario.resolved_controller is ControllerKind.LQR


def test_missing_schema_key():
    with pytest.raises(ConfigError) as err:
        validate_document({"scenario": {"name": "x"}})
    assert err.value.field == "schema"


def test_wrong_schema_id():
    with pytest.raises(ConfigError) as err:
        validate_document({"schema": "something/v0"})
    assert err.value.field == "schema"


def test_unknown_key_names_the_field(make_document):
    with pytest.raises(ConfigError) as err:
        validate_document(make_document(grid={"bogus": 1}))
    assert err.value.field == "grid.bogus"


def test_non_mapping_document():
    with pytest.raises(ConfigError):
        validate_document(["schema"])


@pytest.mark.parametrize(
    "sections",
    [
        {"scenario": {"duration": 0.0}},
        {"scenario": {"seed": -1}},
        {"pll": {"kappa": 1.5}},
        {"lqr": {"unit": "kA"}},
        {"kalman": {"gain_mode": "adaptive"}},
        {"grid": {"pcc_model": "nodal"}},
        {"grid": {"impedance_schedule": []}},
        {"grid": {"impedance_schedule": [{"time": 0.1, "magnitude": 1.0}, {"time": 0.0, "magnitude": 0.3}]}},
        {"sweep": {"axes": {}}},
        {"sweep": {"axes": {"kalman.q_kf": []}}},
    ],
)
def test_invalid_documents(make_document, sections):
    with pytest.raises(ConfigError):
        validate_document(make_document(**sections))


def test_machine_needs_grid_reactance(make_document):
    doc = make_document(grid={"impedance_schedule": [{"time": 0.0, "magnitude": 0.3, "angle_deg": 0.0}]}, machine={})
    with pytest.raises(ConfigError):
        validate_document(doc)


def test_parse_override_types():
    assert parse_override("kalman.q_kf=1e-7") == ("kalman.q_kf", pytest.approx(1e-7))
    assert parse_override("scenario.method=CPLL") == ("scenario.method", "CPLL")
    assert parse_override("grid.track_impedance=false") == ("grid.track_impedance", False)
    assert parse_override("lqr.weights={q1: 1000}") == ("lqr.weights", {"q1": 1000})


@pytest.mark.parametrize("item", ["no_equals", "=1"])
def test_parse_override_rejects(item):
    with pytest.raises(ConfigError):
        parse_override(item)


def test_apply_overrides_leaves_input_untouched():
    doc = {"schema": SCHEMA_ID, "kalman": {"q_kf": 1e-6}}
    merged = apply_overrides(doc, ["kalman.q_kf=1e-5", ("grid.v_g", 1.05)])
    assert merged["kalman"]["q_kf"] == pytest.approx(1e-5)
    assert merged["grid"]["v_g"] == 1.05
    assert doc["kalman"]["q_kf"] == 1e-6
    assert "grid" not in doc


def test_set_dotted_refuses_scalar_parent():
    with pytest.raises(ConfigError):
        set_dotted({"scenario": 3}, "scenario.name", "x")


def test_document_round_trip(make_config):
    cfg = make_config(scenario={"method": "CVI-PLL"}, lqr={"v_sat": None}, machine={"target_frequency": 3.0})
    again = validate_document(cfg.to_document())
    assert again == cfg
    assert cfg.to_document()["schema"] == SCHEMA_ID


def test_with_overrides(make_config):
    cfg = make_config()
    changed = with_overrides(cfg, ["scenario.method=MVI-PLL", "pll.kappa=0.25"])
    assert changed.scenario.method is Method.MVI_PLL
    assert changed.pll.kappa == pytest.approx(0.25)
    assert cfg.scenario.method is Method.AAEKF_LQR


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    cfg = load_scenario(path)
    assert cfg.schema_id == SCHEMA_ID


def test_load_scenario_with_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(f"schema: {SCHEMA_ID}\nscenario:\n  name: from_file\n  duration: 0.1\n", encoding="utf-8")
    cfg = load_scenario(path, ["scenario.duration=0.2"])
    assert cfg.scenario.name == "from_file"
    assert cfg.scenario.duration == pytest.approx(0.2)


def test_read_document_errors(tmp_path):
    with pytest.raises(ConfigError):
        read_document(tmp_path / "missing.yaml")
    broken = tmp_path / "broken.yaml"
    broken.write_text("schema: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        read_document(broken)
