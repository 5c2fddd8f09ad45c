"""
Scenario configuration documents.

YAML in, pydantic models out. Every section forbids unknown keys, and the
document must open with ``schema: gfl-sync-lab/v1``.
"""

import copy
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.utils.errors import ConfigError
from src.utils.logger import logger

SCHEMA_ID = "gfl-sync-lab/v1"


class Method(str, Enum):
    CPLL = "CPLL"
    CVI_PLL = "CVI-PLL"
    MVI_PLL = "MVI-PLL"
    CAEKF = "CAEKF"
    AAEKF_LQR = "AAEKF-LQR"
    NONE = "none"


class ControllerKind(str, Enum):
    LQR = "LQR"
    PI = "PI"


DEFAULT_CONTROLLER = {
    Method.CPLL: ControllerKind.PI,
    Method.CVI_PLL: ControllerKind.PI,
    Method.MVI_PLL: ControllerKind.PI,
    Method.CAEKF: ControllerKind.LQR,
    Method.AAEKF_LQR: ControllerKind.LQR,
    Method.NONE: ControllerKind.PI,
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScenarioSection(_Section):
    name: str = "scenario"
    method: Method = Method.AAEKF_LQR
    controller: Optional[ControllerKind] = None
    duration: float = Field(0.4, gt=0)
    ts: float = Field(1e-4, gt=0)
    seed: Optional[int] = Field(None, ge=0)
    # rotate the held inverter voltage by ω·Ts/2 to cancel the hold lag
    delay_compensation: bool = True

    @property
    def resolved_controller(self) -> ControllerKind:
        return self.controller or DEFAULT_CONTROLLER[self.method]


class ImpedanceStep(_Section):
    time: float = Field(ge=0)
    magnitude: float = Field(ge=0)
    angle_deg: float = 70.0

    @property
    def angle(self) -> float:
        return math.radians(self.angle_deg)


class GridSection(_Section):
    v_g: float = Field(1.0, gt=0)
    frequency: float = Field(50.0, gt=0)
    initial_phase: float = 0.0
    impedance_schedule: List[ImpedanceStep] = Field(
        default_factory=lambda: [ImpedanceStep(time=0.0, magnitude=0.3)]
    )
    impedance_model_error: float = Field(0.0, gt=-1.0)
    track_impedance: bool = True
    pcc_model: str = "phasor"

    @field_validator("pcc_model")
    @classmethod
    def _known_pcc_model(cls, v: str) -> str:
        if v not in ("phasor", "series"):
            raise ValueError("pcc_model must be phasor or series")
        return v

    @field_validator("impedance_schedule")
    @classmethod
    def _schedule_ordered(cls, steps: List[ImpedanceStep]) -> List[ImpedanceStep]:
        if not steps:
            raise ValueError("impedance_schedule needs at least one entry")
        times = [s.time for s in steps]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("impedance_schedule times must be nondecreasing")
        return steps


class FilterSection(_Section):
    l_f1: float = Field(500e-6, gt=0)
    l_f2: float = Field(500e-6, gt=0)
    c_f: float = Field(100e-6, gt=0)
    v_base: float = Field(415.0, gt=0)
    s_base: float = Field(110e3, gt=0)
    r_f1: float = Field(0.0, ge=0)
    r_f2: float = Field(0.0, ge=0)


class ReferenceSection(_Section):
    magnitude: float = Field(1.0, ge=0)
    angle_deg: float = 30.0


class KalmanSection(_Section):
    q_kf: float = Field(1e-6, gt=0)
    r_kf: float = Field(1.0, gt=0)
    gain_mode: str = "time_varying"

    @field_validator("gain_mode")
    @classmethod
    def _known_mode(cls, v: str) -> str:
        if v not in ("time_varying", "steady_state"):
            raise ValueError("gain_mode must be time_varying or steady_state")
        return v


class PllSection(_Section):
    kp: float = Field(5.0, ge=0)
    ki: float = Field(5.0, ge=0)
    kappa: float = Field(0.5, ge=0, le=1)
    windup_limit: float = Field(2.0 * math.pi * 10.0, gt=0)


class LqrWeightsSection(_Section):
    q1: float = Field(10.0, ge=0)
    q2: float = Field(10.0, ge=0)
    q3: float = Field(10.0, ge=0)
    r: float = Field(1e-2, gt=0)

    def as_tuple(self):
        return (self.q1, self.q2, self.q3, self.r)


class LqrSection(_Section):
    weights: LqrWeightsSection = Field(default_factory=LqrWeightsSection)
    unit: str = "pu"
    v_sat: Optional[float] = Field(2.5, gt=0)
    feedforward: bool = True
    v_pcc_op: str = "measured"

    @field_validator("unit")
    @classmethod
    def _known_unit(cls, v: str) -> str:
        if v not in ("pu", "si"):
            raise ValueError("unit must be pu or si")
        return v

    @field_validator("v_pcc_op")
    @classmethod
    def _known_op(cls, v: str) -> str:
        if v not in ("measured", "nominal"):
            raise ValueError("v_pcc_op must be measured or nominal")
        return v


class PiSection(_Section):
    bandwidth_hz: float = Field(500.0, gt=0)


class NoiseSection(_Section):
    voltage_std: float = Field(0.0, ge=0)
    current_std: float = Field(0.0, ge=0)


class MachineSection(_Section):
    target_frequency: float = Field(8.0, gt=0)
    e: float = Field(1.0, gt=0)
    l_sync: float = Field(300e-6, gt=0)
    r_stator: float = Field(2.9e-2, ge=0)
    c_node: float = Field(1e-6, gt=0)
    damping: Optional[float] = Field(None, ge=0)
    reference_frequency: float = Field(8.0, gt=0)
    reference_decay: float = Field(0.563, gt=0)
    release_time: float = Field(0.2, ge=0)
    kick: float = 0.1


class AnalysisSection(_Section):
    settling_band: float = Field(0.02, gt=0)
    oscillation_threshold: float = Field(0.05, gt=0)
    final_window: float = Field(0.2, gt=0, le=1)
    convergence_threshold: float = Field(1e-2, gt=0)


class SweepSection(_Section):
    axes: Dict[str, List[Any]]

    @field_validator("axes")
    @classmethod
    def _non_empty(cls, axes: Dict[str, List[Any]]) -> Dict[str, List[Any]]:
        if not axes:
            raise ValueError("sweep needs at least one axis")
        for key, values in axes.items():
            if not values:
                raise ValueError(f"sweep axis {key!r} is empty")
        return axes


class OutputSection(_Section):
    dir: Optional[str] = None
    write_trace: bool = True


class ScenarioConfig(_Section):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    schema_id: str = Field(SCHEMA_ID, alias="schema")
    scenario: ScenarioSection = Field(default_factory=ScenarioSection)
    grid: GridSection = Field(default_factory=GridSection)
    filter: FilterSection = Field(default_factory=FilterSection)
    reference: ReferenceSection = Field(default_factory=ReferenceSection)
    kalman: KalmanSection = Field(default_factory=KalmanSection)
    pll: PllSection = Field(default_factory=PllSection)
    lqr: LqrSection = Field(default_factory=LqrSection)
    pi: PiSection = Field(default_factory=PiSection)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    machine: Optional[MachineSection] = None
    analysis: AnalysisSection = Field(default_factory=AnalysisSection)
    sweep: Optional[SweepSection] = None
    output: OutputSection = Field(default_factory=OutputSection)

    @field_validator("schema_id")
    @classmethod
    def _known_schema(cls, v: str) -> str:
        if v != SCHEMA_ID:
            raise ValueError(f"unsupported schema {v!r}, expected {SCHEMA_ID!r}")
        return v

    @model_validator(mode="after")
    def _machine_needs_reactance(self) -> "ScenarioConfig":
        if self.machine is not None:
            for step in self.grid.impedance_schedule:
                if step.magnitude * math.sin(step.angle) <= 0:
                    raise ValueError("machine studies need a grid impedance with positive reactance")
        return self

    def to_document(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True)


def _coerce(value: Any) -> Any:
    """YAML 1.1 reads '1e-6' as a string; treat numeric strings as numbers"""
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def parse_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override must look like key=value, got {item!r}", field="--set")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override has an empty key: {item!r}", field="--set")
    return key, _coerce(yaml.safe_load(raw))


def set_dotted(document: Dict[str, Any], key: str, value: Any) -> None:
    node = document
    parts = key.split(".")
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        if not isinstance(child, dict):
            raise ConfigError(f"cannot descend into non-mapping {part!r}", field=key)
        node = child
    node[parts[-1]] = value


def apply_overrides(document: Dict[str, Any], overrides: Iterable[Union[str, tuple]]) -> Dict[str, Any]:
    """Copy of ``document`` with dotted overrides applied ("a.b=1" strings or (key, value) pairs)"""
    merged = copy.deepcopy(document)
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        set_dotted(merged, key, value)
    return merged


def _field_name(error: Dict[str, Any]) -> str:
    return ".".join(str(p) for p in error.get("loc", ())) or "document"


def validate_document(document: Dict[str, Any]) -> ScenarioConfig:
    if not isinstance(document, dict):
        raise ConfigError("configuration must be a mapping", field="document")
    if "schema" not in document:
        raise ConfigError(f"missing schema key (expected {SCHEMA_ID!r})", field="schema")
    try:
        return ScenarioConfig.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        logger.error(f"Invalid configuration: {e}")
        raise ConfigError(first.get("msg", "invalid value"), field=_field_name(first)) from e


def read_document(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", field="config")
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML parse error: {e}", field="config") from e
    return document or {}


def load_scenario(path: Union[str, Path], overrides: Iterable[str] = ()) -> ScenarioConfig:
    document = apply_overrides(read_document(path), overrides)
    cfg = validate_document(document)
    logger.info(f"✓ Loaded scenario {cfg.scenario.name!r} from {path}")
    return cfg


def with_overrides(cfg: ScenarioConfig, overrides: Iterable[Union[str, tuple]]) -> ScenarioConfig:
    """Re-validate a config with overrides applied on its document form"""
    return validate_document(apply_overrides(cfg.to_document(), overrides))
