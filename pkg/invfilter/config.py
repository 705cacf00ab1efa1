"""
Configuration module for invfilter

Scenario and experiment configuration as pydantic models, JSON files parsed
with orjson, and the named experiment presets.
"""

import math
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Union

import numpy as np
import orjson
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from invfilter.constants import (
    DEFAULT_DT,
    DEFAULT_GAIN_TOL,
    DEFAULT_PARTICLES,
    DEFAULT_TRAJECTORIES,
)
from invfilter.errors import ConfigError, DimensionError
from invfilter.lie import SO3_GROUP, GroupDescriptor
from invfilter.models import (
    GRAVITY,
    DiscreteModel,
    NoiseSpec,
    OutputKind,
    OutputMap,
    Scenario,
    earth_rate,
    linear_equivalence_inputs,
    table3_rate,
)
from invfilter.utils import as_covariance

CovarianceValue = Union[float, List[List[float]]]

Vector3 = List[float]

FilterName = Literal["iekf", "ienkf", "fixed-gain", "mekf", "asymptotic-iekf"]

FILTER_NAMES = ("iekf", "ienkf", "fixed-gain", "mekf", "asymptotic-iekf")


class ScenarioConfig(BaseModel):
    """Scenario description.

    ``Qw`` is the per-step process covariance; ``Qv`` and ``P0`` are the
    observation and prior covariances. Covariances accept a scalar variance
    (times identity) or a full matrix. ``upsilon`` and ``omega`` are constant
    left/right algebra inputs per unit time; ``omega_profile="table3"`` uses the
    time-varying body rate of the two-vector benchmark instead.
    """

    model_config = ConfigDict(extra="forbid")

    name: str = "custom"
    group: str = "SO3"
    output_kind: OutputKind = OutputKind.TWO_VECTOR
    b1: Vector3 = Field(default_factory=lambda: [1.0, 0.0, 0.0])
    b2: Vector3 = Field(default_factory=lambda: [0.0, 1.0, 0.0])
    g_ref: Vector3 = Field(default_factory=lambda: [0.0, 0.0, 1.0])
    H: Optional[List[List[float]]] = None
    Qw: CovarianceValue = 0.0
    Qv: CovarianceValue = 0.0
    P0: CovarianceValue = 0.0
    N: int = Field(50, ge=1)
    dt: float = Field(DEFAULT_DT, gt=0)
    outlier_prob: float = Field(0.0, ge=0.0, le=1.0)
    outlier_std: float = Field(0.0, ge=0.0)
    seed: int = Field(0, ge=0)
    num_trajectories: int = Field(DEFAULT_TRAJECTORIES, ge=1)
    upsilon: Optional[List[float]] = None
    omega: Optional[List[float]] = None
    omega_profile: Literal["constant", "table3"] = "constant"

    @model_validator(mode="after")
    def _check_output(self) -> "ScenarioConfig":
        if self.output_kind is OutputKind.LINEAR and self.H is None:
            raise ValueError("linear outputs need an H matrix")
        for key in ("b1", "b2", "g_ref"):
            if len(getattr(self, key)) != 3:
                raise ValueError(f"{key} must have three entries")
        return self

    def output_map(self) -> OutputMap:
        if self.output_kind is OutputKind.TWO_VECTOR:
            return OutputMap.two_vector(self.b1, self.b2)
        if self.output_kind is OutputKind.SINGLE_VECTOR:
            return OutputMap.single_vector(self.g_ref)
        if self.output_kind is OutputKind.VELOCITY_SE3:
            return OutputMap.velocity_se3()
        return OutputMap.linear(self.H)

    def build_scenario(self) -> Scenario:
        try:
            descriptor = GroupDescriptor.from_id(self.group)
            output = self.output_map()
            if output.descriptor != descriptor:
                raise ConfigError(
                    f"{self.output_kind.value} outputs live on "
                    f"{output.descriptor.group_id}, not {descriptor.group_id}"
                )
            d, p = descriptor.algebra_dim, output.obs_dim
            noise = NoiseSpec(
                process_cov=as_covariance(self.Qw, d, "Qw") / self.dt,
                obs_cov=as_covariance(self.Qv, p, "Qv"),
                outlier_prob=self.outlier_prob,
                outlier_std=self.outlier_std,
            )
            left = (
                descriptor.identity()
                if self.upsilon is None
                else descriptor.exp(self.dt * np.asarray(self.upsilon, dtype=float))
            )
            model = DiscreteModel(
                descriptor, left, self._right_inputs(descriptor), noise, output, self.dt
            )
            return Scenario(self.name, model, self.N, prior_cov=as_covariance(self.P0, d, "P0"))
        except ConfigError:
            raise
        except (ValueError, DimensionError) as e:
            raise ConfigError(f"invalid scenario `{self.name}`: {e}") from e

    def _right_inputs(self, descriptor: GroupDescriptor) -> np.ndarray:
        if self.omega_profile == "table3":
            if descriptor != SO3_GROUP:
                raise ConfigError("the table3 rate profile is defined on SO3 only")
            times = self.dt * np.arange(self.N)
            return descriptor.exp(self.dt * table3_rate(times))
        if self.omega is None:
            return descriptor.identity()
        return descriptor.exp(self.dt * np.asarray(self.omega, dtype=float))


class FilterParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k1: float = 0.3
    k2: float = 0.3
    k: float = 0.1202
    lam: float = 0.0029
    particles: int = Field(DEFAULT_PARTICLES, ge=2)
    centered: bool = False
    schedule_seed: Optional[int] = None
    obs_inflation: float = Field(1.0, gt=0.0)
    qw_form: Literal["printed", "adjoint"] = "printed"
    gain_tol: float = Field(DEFAULT_GAIN_TOL, gt=0.0)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: ScenarioConfig
    filter: FilterName = "iekf"
    params: FilterParams = Field(default_factory=FilterParams)
    n_trajectories: Optional[int] = Field(None, ge=1)
    seed: Optional[int] = Field(None, ge=0)

    @property
    def trajectories(self) -> int:
        return self.n_trajectories or self.scenario.num_trajectories

    @property
    def master_seed(self) -> int:
        return self.scenario.seed if self.seed is None else self.seed


def _table3() -> ScenarioConfig:
    return ScenarioConfig(
        name="exp-table3",
        group="SO3",
        output_kind=OutputKind.TWO_VECTOR,
        b1=[1.0, 0.0, 0.0],
        b2=[0.0, 1.0, 0.0],
        Qw=0.01745**2,
        Qv=0.0873**2,
        P0=0.5236**2,
        N=50,
        dt=DEFAULT_DT,
        omega_profile="table3",
        num_trajectories=1000,
    )


def _horizon() -> ScenarioConfig:
    return ScenarioConfig(
        name="exp-horizon",
        group="SO3",
        output_kind=OutputKind.SINGLE_VECTOR,
        g_ref=[0.0, 0.0, 1.0],
        Qw=1.75e-4**2,
        Qv=1.75e-3**2,
        P0=0.05**2,
        N=1000,
        dt=DEFAULT_DT,
        outlier_prob=0.01,
        outlier_std=math.radians(30.0),
        omega_profile="table3",
        num_trajectories=500,
    )


def _linear_equivalence() -> ScenarioConfig:
    H, drift = linear_equivalence_inputs()
    return ScenarioConfig(
        name="exp-linear-equiv",
        group="T4",
        output_kind=OutputKind.LINEAR,
        H=H.tolist(),
        Qw=0.01,
        Qv=0.04,
        P0=1.0,
        N=100,
        dt=DEFAULT_DT,
        omega=drift.tolist(),
        num_trajectories=100,
    )


def _round_earth() -> ScenarioConfig:
    return ScenarioConfig(
        name="exp-round-earth",
        group="SO3",
        output_kind=OutputKind.SINGLE_VECTOR,
        g_ref=[0.0, 0.0, 1.0],
        Qw=1.0e-4**2,
        Qv=1.0e-3**2,
        P0=0.1**2,
        N=500,
        dt=DEFAULT_DT,
        upsilon=earth_rate().tolist(),
        omega_profile="table3",
        num_trajectories=200,
    )


def _se3_velocity() -> ScenarioConfig:
    gyro_std, accel_std = 0.01, 0.05
    return ScenarioConfig(
        name="exp-se3-velocity",
        group="SE3",
        output_kind=OutputKind.VELOCITY_SE3,
        Qw=(np.diag([gyro_std**2] * 3 + [accel_std**2] * 3) * DEFAULT_DT).tolist(),
        Qv=0.1**2,
        P0=0.1**2,
        N=200,
        dt=DEFAULT_DT,
        upsilon=[-0.1, 0.05, -0.2, 0.3, 0.0, 9.81],
        omega=[0.0, 0.0, 0.0] + GRAVITY.tolist(),
        num_trajectories=200,
    )


PRESETS: Dict[str, Callable[[], ScenarioConfig]] = {
    "exp-table3": _table3,
    "exp-horizon": _horizon,
    "exp-linear-equiv": _linear_equivalence,
    "exp-round-earth": _round_earth,
    "exp-se3-velocity": _se3_velocity,
}


def preset_names() -> List[str]:
    return list(PRESETS)


def load_scenario_config(ref: Union[str, Path]) -> ScenarioConfig:
    """A preset name or the path of a JSON scenario file."""
    if str(ref) in PRESETS:
        return PRESETS[str(ref)]()

    path = Path(ref)
    if not path.exists():
        raise FileNotFoundError(f"scenario file `{path}` does not exist")
    try:
        data = orjson.loads(path.read_bytes())
    except orjson.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    data.setdefault("name", path.stem)
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid scenario file {path}: {e}") from e


def dump_scenario_config(config: ScenarioConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(
        orjson.dumps(config.model_dump(mode="json"), option=orjson.OPT_INDENT_2)
    )
    return path
