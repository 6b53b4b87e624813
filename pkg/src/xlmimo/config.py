"""YAML run configuration.

Each command has its own model, selected by the top-level ``command`` key.
Unknown keys are rejected. Lengths accept metres as plain numbers or
wavelength multiples written like ``"200lambda"``; they are resolved
against the carrier before use, and the manifest records resolved values.
"""
from __future__ import annotations

import re
from typing import Annotated, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator, model_validator

from .geometry import wavelength_from_ghz
from .scenarios import SystemSetup, table2_setups

_LENGTH = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(lambda|λ|m)?\s*$")

Length = Union[float, str]


def parse_length(value: Length, wavelength: float) -> float:
    """Metres from a number or a string such as ``"200lambda"`` or ``"12m"``."""
    if isinstance(value, (int, float)):
        out = float(value)
    else:
        m = _LENGTH.match(value)
        if not m:
            raise ValueError(f"cannot read length {value!r}")
        out = float(m.group(1)) * (wavelength if m.group(2) in ("lambda", "λ") else 1.0)
    if not out > 0:
        raise ValueError(f"length must be positive, got {value!r}")
    return out


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Range(_Strict):
    """Inclusive evenly spaced grid: either ``step`` or ``count`` is given."""

    start: float
    stop: float
    step: Optional[float] = None
    count: Optional[int] = None

    @model_validator(mode="after")
    def _one_spacing(self):
        if (self.step is None) == (self.count is None):
            raise ValueError("give exactly one of 'step' or 'count'")
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")
        if self.count is not None and self.count < 1:
            raise ValueError("count must be at least 1")
        if self.stop < self.start:
            raise ValueError("stop must not be below start")
        return self

    def values(self) -> list[float]:
        if self.count is not None:
            return [float(x) for x in np.linspace(self.start, self.stop, self.count)]
        n = int(np.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return [float(self.start + i * self.step) for i in range(n)]


Grid = Union[list[float], Range]


def grid_values(grid: Grid) -> list[float]:
    vals = grid.values() if isinstance(grid, Range) else [float(v) for v in grid]
    if not vals:
        raise ValueError("grid is empty")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ValueError("grid must be strictly ascending")
    return vals


class OutputBlock(_Strict):
    directory: str = "out"
    emit_plots: bool = False


class _Run(_Strict):
    seed: int = Field(0, ge=0, le=2**64 - 1)
    trials: int = Field(10_000, ge=1)
    threads: int = Field(1, ge=1)
    output: OutputBlock = OutputBlock()
    tool_version: Optional[str] = None


# ---------------------------------------------------------------------------
# corr / delta-map
# ---------------------------------------------------------------------------

class SpectrumBlock(_Strict):
    distance: Length
    angle: float
    concentration_inv: float = Field(gt=0)


class _ArrayRun(_Run):
    carrier_ghz: float = Field(7.0, gt=0)
    n_elements: int = Field(ge=1)

    @property
    def wavelength(self) -> float:
        return wavelength_from_ghz(self.carrier_ghz)


class LengthRange(_Strict):
    start: Length
    stop: Length
    step: Optional[Length] = None
    count: Optional[int] = None


class DeltaGridInput(_Strict):
    distances: Union[list[Length], LengthRange]
    angles: Grid

    def resolved(self, lam: float) -> "DeltaGridInput":
        d = self.distances
        if isinstance(d, LengthRange):
            d = LengthRange(start=parse_length(d.start, lam), stop=parse_length(d.stop, lam),
                            step=None if d.step is None else parse_length(d.step, lam), count=d.count)
            Range(**d.model_dump())  # spacing checks
        else:
            d = [parse_length(v, lam) for v in d]
        out = DeltaGridInput(distances=d, angles=self.angles)
        out.distance_values()
        grid_values(self.angles)
        return out

    def distance_values(self) -> list[float]:
        d = self.distances
        return grid_values(Range(**d.model_dump()) if isinstance(d, LengthRange) else [float(v) for v in d])


class CorrConfig(_ArrayRun):
    command: Literal["corr"]
    spectrum: Optional[SpectrumBlock] = None
    delta_grid: Optional[DeltaGridInput] = None

    @model_validator(mode="after")
    def _resolve(self):
        if self.spectrum is None and self.delta_grid is None:
            raise ValueError("corr needs a 'spectrum' block, a 'delta_grid' block, or both")
        lam = self.wavelength
        if self.spectrum is not None:
            self.spectrum.distance = parse_length(self.spectrum.distance, lam)
        if self.delta_grid is not None:
            self.delta_grid = self.delta_grid.resolved(lam)
        return self


class DeltaMapConfig(_ArrayRun):
    command: Literal["delta-map"]
    delta_grid: DeltaGridInput
    crossing_tolerance: float = Field(1e-3, gt=0)

    @model_validator(mode="after")
    def _resolve(self):
        self.delta_grid = self.delta_grid.resolved(self.wavelength)
        return self


# ---------------------------------------------------------------------------
# se / outage
# ---------------------------------------------------------------------------

Route = Literal["ss", "ds", "analytical"]


class AnalysisScenario(_Strict):
    route: Route
    carrier_ghz: float = Field(7.0, gt=0)
    n_rx: int = Field(ge=1)
    n_tx: int = Field(ge=1)
    clusters: int = Field(ge=1)
    concentration_inv: Optional[float] = Field(None, gt=0)
    layout_seed: Optional[int] = Field(None, ge=0, le=2**64 - 1)
    rx_angles: Optional[list[float]] = None
    tx_angles: Optional[list[float]] = None
    coupling: Optional[Literal["diagonal", "dense"]] = None

    @model_validator(mode="after")
    def _defaults(self):
        if self.concentration_inv is None:
            self.concentration_inv = 1e-8 if self.route == "ss" else 0.01
        if self.coupling is None:
            self.coupling = "diagonal" if self.route == "ss" else "dense"
        if self.route == "ss" and self.coupling != "diagonal":
            raise ValueError("the 'ss' route needs diagonal coupling")
        if self.route == "ds" and self.coupling != "dense":
            raise ValueError("the 'ds' route needs dense coupling")
        for name in ("rx_angles", "tx_angles"):
            v = getattr(self, name)
            if v is not None:
                if len(v) != self.clusters:
                    raise ValueError(f"{name} must list one angle per cluster")
                if any(not -np.pi / 2 < a < np.pi / 2 for a in v):
                    raise ValueError(f"{name} must lie inside (-pi/2, pi/2)")
        return self


ClosedForm = Literal["approx", "upper"]
DS_BOUND_MAX_DIM = 12

_DEFINED = {
    "se": {"ss": {"approx", "upper"}, "ds": {"upper"}, "analytical": set()},
    "outage": {"ss": {"approx"}, "ds": set(), "analytical": set()},
}


class _MetricRun(_Run):
    scenario: AnalysisScenario
    closed_forms: Optional[list[ClosedForm]] = None

    @model_validator(mode="after")
    def _check_forms(self):
        sc = self.scenario
        allowed = _DEFINED[self.command][sc.route]
        if self.closed_forms is None:
            self.closed_forms = sorted(allowed)
            if sc.route == "ds" and max(sc.n_rx, sc.n_tx, sc.clusters) > DS_BOUND_MAX_DIM:
                self.closed_forms = []
        bad = set(self.closed_forms) - allowed
        if bad:
            raise ValueError(f"closed form(s) {sorted(bad)} are not defined for route "
                             f"'{sc.route}' in command '{self.command}'")
        if sc.route == "ds" and "upper" in self.closed_forms and max(sc.n_rx, sc.n_tx, sc.clusters) > DS_BOUND_MAX_DIM:
            raise ValueError(f"the double-scattering bound needs n_rx, n_tx and clusters <= {DS_BOUND_MAX_DIM}; "
                             "drop 'upper' and rely on Monte-Carlo")
        return self


def _checked_grid(v):
    grid_values(v)
    return v


class SeConfig(_MetricRun):
    command: Literal["se"]
    power_db: Grid

    _grid = field_validator("power_db")(_checked_grid)


class OutageConfig(_MetricRun):
    command: Literal["outage"]
    threshold_db: Grid
    transmit_power_db: float = 0.0

    _grid = field_validator("threshold_db")(_checked_grid)


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

class SetupBlock(_Strict):
    name: str
    carrier_ghz: float
    n_tx: int
    n_rx: int
    bandwidth_mhz: float
    coupling_mode: Literal["diagonal", "dense"] = "diagonal"
    tx_rx_distance_m: float = 20.0
    cluster_distance_m: tuple[float, float] = (10.0, 15.0)
    cluster_angle_rad: tuple[float, float] = (-np.pi / 3, np.pi / 3)
    rays_per_cluster: int = 5
    ray_concentration_inv: float = 0.01
    distance_mode: Literal["exact", "fresnel"] = "exact"

    @model_validator(mode="after")
    def _valid(self):
        self.to_setup()
        return self

    def to_setup(self) -> SystemSetup:
        return SystemSetup(**self.model_dump())


class CompareConfig(_Run):
    command: Literal["compare"]
    trials: int = Field(1000, ge=100)
    drops: int = Field(20, ge=1)
    transmit_power_db: float = 40.0
    setups: Union[Literal["table2"], list[SetupBlock]] = Field("table2", validate_default=True)

    @field_validator("setups", mode="after")
    @classmethod
    def _expand(cls, v):
        if v == "table2":
            v = [SetupBlock(**s.__dict__) for s in table2_setups()]
        if len(v) < 2:
            raise ValueError("compare needs at least two setups")
        names = [s.name for s in v]
        if len(set(names)) != len(names):
            raise ValueError("setup names must be unique")
        return v

    @model_validator(mode="after")
    def _drops(self):
        if self.drops > self.trials:
            raise ValueError("drops cannot exceed trials")
        return self


RunConfig = Annotated[Union[CorrConfig, DeltaMapConfig, SeConfig, OutageConfig, CompareConfig],
                      Field(discriminator="command")]
_ADAPTER = TypeAdapter(RunConfig)


def parse_config(data: dict):
    return _ADAPTER.validate_python(data)


def load_config(path: str):
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError("configuration must be a mapping at the top level")
    return parse_config(data)


def dump_config(cfg) -> str:
    data = cfg.model_dump(mode="json")
    return yaml.safe_dump(data, sort_keys=False)
