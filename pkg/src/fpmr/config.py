"""Experiment configuration: YAML documents validated by pydantic models.

Every physical quantity carries its unit in the field name (``rate_hz``,
``field_t``, ``duration_s``, ``shift_ppm``...). Unknown keys are rejected.
"""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

Vec3 = tuple[float, float, float]
PosFloat = Annotated[float, Field(gt=0)]
NonNegFloat = Annotated[float, Field(ge=0)]


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration documents."""


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# --------------------------------------------------------------------------
# spin system

class CsaModel(Strict):
    aniso_ppm: float = 0.0
    aniso_hz: float | None = None
    eta: Annotated[float, Field(ge=0, le=1)] = 0.0
    euler_deg: Vec3 = (0.0, 0.0, 0.0)


class GTensorModel(Strict):
    principal: Vec3
    euler_deg: Vec3 = (0.0, 0.0, 0.0)


class QuadrupoleModel(Strict):
    cq_hz: float
    eta: Annotated[float, Field(ge=0, le=1)] = 0.0
    euler_deg: Vec3 = (0.0, 0.0, 0.0)


class SpinModel(Strict):
    isotope: str
    offset_hz: float = 0.0
    shift_ppm: float | None = None
    csa: CsaModel | None = None
    g: GTensorModel | None = None
    quadrupole: QuadrupoleModel | None = None
    frame: Literal["rotating", "lab"] = "rotating"
    frame_hz: PosFloat | None = None

    @model_validator(mode="after")
    def _exclusive(self):
        if self.shift_ppm is not None and self.offset_hz:
            raise ValueError("give either shift_ppm or offset_hz, not both")
        if self.g is not None and (self.shift_ppm is not None or self.csa is not None):
            raise ValueError("g-tensor and chemical shift are mutually exclusive")
        if self.frame == "lab" and self.frame_hz is not None:
            raise ValueError("frame_hz only applies to rotating-frame spins")
        return self


class DipolarModel(Strict):
    distance_m: PosFloat
    direction: Vec3 = (0.0, 0.0, 1.0)


class CouplingModel(Strict):
    spins: tuple[int, int]
    j_hz: float = 0.0
    dipolar: DipolarModel | None = None
    tensor_hz: tuple[Vec3, Vec3, Vec3] | None = None

    @field_validator("spins")
    @classmethod
    def _distinct(cls, v):
        if v[0] == v[1]:
            raise ValueError("a coupling needs two different spins")
        return v


class RelaxationModel(Strict):
    t1_s: PosFloat | list[PosFloat] | None = None
    t2_s: PosFloat | list[PosFloat] | None = None


class SpinSystemModel(Strict):
    field_t: NonNegFloat
    spins: Annotated[list[SpinModel], Field(min_length=1)]
    couplings: list[CouplingModel] = []
    relaxation: RelaxationModel | None = None
    secular: bool = True

    @model_validator(mode="after")
    def _indices(self):
        n = len(self.spins)
        for c in self.couplings:
            if not all(0 <= k < n for k in c.spins):
                raise ValueError(f"coupling {list(c.spins)} refers to a spin outside 0..{n - 1}")
        if self.relaxation is not None:
            for name in ("t1_s", "t2_s"):
                v = getattr(self.relaxation, name)
                if isinstance(v, list) and len(v) != n:
                    raise ValueError(f"relaxation.{name} needs one value per spin ({n})")
        return self


# --------------------------------------------------------------------------
# shared experiment pieces

class OperatorModel(Strict):
    """Sum of single-spin operators: ``operator`` on the listed ``spins``,
    or on every spin of ``isotope``, or on all rotating-frame spins."""

    operator: Literal["x", "y", "z", "+", "-"] = "x"
    spins: list[int] | None = None
    isotope: str | None = None


class PowderModel(Strict):
    scheme: Literal["single", "two_angle_spiral", "user_list"] = "single"
    points: Annotated[int, Field(ge=1)] = 1
    orientations_deg: list[Vec3] | None = None
    weights: list[PosFloat] | None = None


class SweepModel(Strict):
    center_hz: float = 0.0
    width_hz: PosFloat
    points: Annotated[int, Field(ge=2)] = 400


class DetectionModel(Strict):
    domain: Literal["time", "frequency"] = "time"
    points: Annotated[int, Field(ge=1)] = 512
    dwell_s: PosFloat | None = None
    sweep: SweepModel | None = None
    coil: OperatorModel = OperatorModel(operator="+")

    @model_validator(mode="after")
    def _needs(self):
        if self.domain == "time" and self.dwell_s is None:
            raise ValueError("time-domain detection needs dwell_s")
        if self.domain == "frequency" and self.sweep is None:
            raise ValueError("frequency-domain detection needs a sweep")
        return self


class OutputModel(Strict):
    directory: str = "out"
    formats: list[Literal["csv", "json"]] = ["csv"]
    plot: bool = False


class ConvergenceModel(Strict):
    tolerance: PosFloat = 1e-3
    max_doublings: Annotated[int, Field(ge=0)] = 6


# --------------------------------------------------------------------------
# experiments

class MasExperiment(Strict):
    kind: Literal["mas", "static"]
    rate_hz: float = 0.0
    axis: Vec3 = (1.0, 1.0, 1.0)
    rotor_points: Annotated[int, Field(ge=3)] = 16
    orientation_deg: Vec3 = (0.0, 0.0, 0.0)
    powder: PowderModel = PowderModel()
    initial: OperatorModel = OperatorModel()

    @model_validator(mode="after")
    def _static(self):
        if self.kind == "static" and self.rate_hz != 0:
            raise ValueError("static experiments have rate_hz = 0")
        return self


class DorExperiment(Strict):
    kind: Literal["dor"]
    outer_rate_hz: float
    inner_rate_hz: float
    outer_angle_deg: float = float(np.degrees(np.arccos(1 / np.sqrt(3))))
    inner_angle_deg: float = 30.56
    outer_points: Annotated[int, Field(ge=3)] = 16
    inner_points: Annotated[int, Field(ge=1)] = 16
    orientation_deg: Vec3 = (0.0, 0.0, 0.0)
    powder: PowderModel = PowderModel()
    initial: OperatorModel = OperatorModel()


class CoordinateModel(Strict):
    points: Annotated[int, Field(ge=3)]
    length_m: PosFloat
    boundary: Literal["periodic", "reflective", "absorptive"] = "absorptive"
    stencil: Annotated[int, Field(ge=2)] = 5


class PgseExperiment(Strict):
    kind: Literal["pgse"]
    gradient_t_per_m: float
    delta_s: PosFloat
    big_delta_s: PosFloat
    diffusion_m2_s: NonNegFloat
    grid: CoordinateModel
    initial: OperatorModel = OperatorModel()

    @model_validator(mode="after")
    def _timing(self):
        if self.big_delta_s < self.delta_s:
            raise ValueError("big_delta_s must be at least delta_s")
        return self


class RfModel(Strict):
    amplitude_hz: NonNegFloat
    phase_deg: float = 0.0
    offset_hz: float = 0.0


class ChirpModel(Strict):
    """WURST-shaped linear frequency sweep centred on ``offset_hz``."""

    amplitude_hz: NonNegFloat
    bandwidth_hz: PosFloat
    smoothing: Annotated[float, Field(gt=0)] = 40.0
    offset_hz: float = 0.0
    phase_deg: float = 0.0


class EventModel(Strict):
    duration_s: PosFloat
    slices: Annotated[int, Field(ge=1)] = 1
    rf: RfModel | None = None
    chirp: ChirpModel | None = None
    gradient_t_per_m: float = 0.0

    @model_validator(mode="after")
    def _one_rf(self):
        if self.rf is not None and self.chirp is not None:
            raise ValueError("an event carries either rf or chirp, not both")
        return self


class AcquisitionModel(Strict):
    """Readout: ``loops`` blocks of ``points`` samples under a gradient whose
    sign alternates between loops when ``alternate`` is set."""

    points: Annotated[int, Field(ge=1)]
    dwell_s: PosFloat
    gradient_t_per_m: float = 0.0
    loops: Annotated[int, Field(ge=1)] = 1
    alternate: bool = True


class SpatiotemporalExperiment(Strict):
    kind: Literal["spatiotemporal"]
    grid: CoordinateModel
    diffusion_m2_s: NonNegFloat = 0.0
    flow_m_s: float = 0.0
    rf_phase_points: Annotated[int, Field(ge=3)] | None = None
    events: list[EventModel] = []
    acquisition: AcquisitionModel | None = None
    initial: OperatorModel = OperatorModel(operator="z")


class MwPulseModel(Strict):
    duration_s: PosFloat
    amplitude_hz: NonNegFloat
    frequency_hz: PosFloat
    phase_deg: float = 0.0


class EchoModel(Strict):
    points: Annotated[int, Field(ge=1)] = 100
    window_s: PosFloat = 100e-9


class DeerExperiment(Strict):
    kind: Literal["deer"]
    pulses: Annotated[list[MwPulseModel], Field(min_length=3, max_length=3)]
    gap_s: PosFloat
    steps: Annotated[int, Field(ge=2)] = 100
    echo: EchoModel = EchoModel()
    mw_phase_points: Annotated[int, Field(ge=1)] = 9
    powder: PowderModel = PowderModel()
    orientation_deg: Vec3 = (0.0, 0.0, 0.0)
    initial: OperatorModel = OperatorModel(operator="z")

    @model_validator(mode="after")
    def _fits(self):
        p = self.pulses
        if p[0].duration_s + p[1].duration_s > self.gap_s:
            raise ValueError("the first and second pulses do not fit inside gap_s")
        return self


class CpModel(Strict):
    duration_s: PosFloat
    n_amplitude_hz: NonNegFloat
    n_frequency_hz: float
    h_amplitude_hz: NonNegFloat
    rf_points: Annotated[int, Field(ge=3)] = 5


class OvertoneExperiment(Strict):
    kind: Literal["overtone_cp"]
    rate_hz: float
    rotor_points: Annotated[int, Field(ge=3)] = 15
    both_directions: bool = False
    cp: CpModel | None = None
    nucleus: int | None = None
    orientation_deg: Vec3 = (0.0, 0.0, 0.0)
    powder: PowderModel = PowderModel()
    initial: OperatorModel = OperatorModel(operator="x")


Experiment = Annotated[
    Union[MasExperiment, DorExperiment, PgseExperiment, SpatiotemporalExperiment,
          DeerExperiment, OvertoneExperiment],
    Field(discriminator="kind"),
]


class OracleModel(Strict):
    """Settings of the time-sliced reference propagation."""

    dt_s: PosFloat = 1e-7
    phase_points: Annotated[int, Field(ge=1)] | None = None


class ExperimentConfig(Strict):
    spin_system: SpinSystemModel
    experiment: Experiment
    detection: DetectionModel | None = None
    output: OutputModel = OutputModel()
    convergence: ConvergenceModel | None = None
    oracle: OracleModel = OracleModel()

    @model_validator(mode="after")
    def _detection(self):
        kind = self.experiment.kind
        if kind in ("mas", "static", "dor", "overtone_cp") and self.detection is None:
            raise ValueError(f"{kind} experiments need a detection section")
        for k, s in enumerate(self.spin_system.spins):
            if s.quadrupole is not None and _multiplicity(s.isotope) < 3:
                raise ValueError(f"spin {k} ({s.isotope}) is spin-1/2 and cannot carry a quadrupole")
        return self


def _multiplicity(label):
    from .constants import ISOTOPES
    if label not in ISOTOPES:
        raise ValueError(f"unknown isotope {label!r}; known: {sorted(ISOTOPES)}")
    return ISOTOPES[label][0]


# --------------------------------------------------------------------------
# loading

def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"])
        lines.append(f"{path or '<root>'}: {e['msg']}")
    return "\n".join(lines)


def parse_config(data: dict, source: str = "<config>") -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{source}: invalid configuration\n{_format_validation(exc)}") from None


def load_config(path) -> ExperimentConfig:
    """Read and validate a YAML experiment configuration."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}: YAML parse error{where}: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return parse_config(data, str(path))


def shipped_configs() -> dict:
    """Name -> path of the example configurations bundled with the package."""
    root = Path(__file__).parent / "configs"
    return {p.stem: p for p in sorted(root.glob("*.yaml"))}
