"""Scenario files: TOML in, validated models out, and the canonical writer."""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import Literal

import numpy as np
import tomli
import tomli_w
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    field_validator,
    model_validator,
)

BUNDLED = ("flat_sheared_mold",)


class ConfigError(ValueError):
    """Invalid or unreadable scenario; ``fields`` lists dotted paths of bad entries."""

    def __init__(self, message: str, fields: tuple[str, ...] = ()):
        self.fields = fields
        super().__init__(message)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridConfig(_Section):
    rows: PositiveInt
    cols: PositiveInt
    spacing: PositiveFloat
    initial_height: PositiveFloat

    @model_validator(mode="after")
    def _enough_grippers(self):
        if self.rows * self.cols < 2:
            raise ValueError("grid needs at least 2 grippers")
        return self


class MaterialConfig(_Section):
    m: float = Field(ge=0)
    g: PositiveFloat
    E: PositiveFloat
    I: PositiveFloat  # noqa: E741


class MoldConfig(_Section):
    kind: Literal["sheared_plane", "heightfield"] = "sheared_plane"
    z0: float = 0.0
    shear_deg: float = 0.0
    size: tuple[PositiveFloat, PositiveFloat] = (1.0, 1.0)
    center: tuple[float, float] = (0.0, 0.0)
    path: str | None = None

    @field_validator("shear_deg")
    @classmethod
    def _shear_range(cls, v: float) -> float:
        if not -90.0 < v < 90.0:
            raise ValueError("shear angle must lie in (-90, 90) degrees")
        return v

    @model_validator(mode="after")
    def _path_for_heightfield(self):
        if self.kind == "heightfield" and not self.path:
            raise ValueError("heightfield mold needs 'path'")
        return self


class TrajectoryConfig(_Section):
    n_steps: PositiveInt


class SolverConfig(_Section):
    max_iter: int = Field(default=100, ge=0)
    kkt_tol: float = Field(default=1e-6, gt=0, le=1e-6)
    constraint_tol: float = Field(default=1e-10, gt=0, le=1e-6)
    slope_limit_deg: float = Field(default=40.0, gt=0, lt=90)


class TolerancesConfig(_Section):
    contact_tol: PositiveFloat = 1e-3
    w_tol: PositiveFloat = 2e-3
    r_tol: PositiveFloat = 0.02
    n_pt: int = Field(default=151, ge=3)
    eps_coincide: PositiveFloat = 1e-4


class ShearModelConfig(_Section):
    coefficients: tuple[float, ...] = (1.0,)


class OutputConfig(_Section):
    formats: tuple[Literal["csv", "vtk", "svg", "report"], ...] = ("report",)
    svg_iterations: tuple[PositiveInt, ...] = ()


class Scenario(_Section):
    name: str = "scenario"
    cell_length: PositiveFloat
    grid: GridConfig
    material: MaterialConfig
    mold: MoldConfig
    trajectory: TrajectoryConfig
    solver: SolverConfig = SolverConfig()
    tolerances: TolerancesConfig = TolerancesConfig()
    shear_model: ShearModelConfig = ShearModelConfig()
    output: OutputConfig = OutputConfig()


def _field_path(loc) -> str:
    return ".".join(str(p) for p in loc)


def scenario_from_dict(data: dict, source: str = "<scenario>") -> Scenario:
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        fields = tuple(_field_path(e["loc"]) for e in exc.errors())
        lines = [f"{_field_path(e['loc']) or '<root>'}: {e['msg']}" for e in exc.errors()]
        raise ConfigError(f"{source}: " + "; ".join(lines), fields) from None


def resolve_scenario_path(path: str | Path) -> Path:
    """The file itself, ``<path>.toml``, or a bundled scenario of the same name."""
    p = Path(path)
    if p.is_file():
        return p
    if p.with_suffix(".toml").is_file():
        return p.with_suffix(".toml")
    stem = p.stem
    if stem in BUNDLED:
        res = resources.files("catdrape") / "scenarios" / f"{stem}.toml"
        with resources.as_file(res) as real:
            return Path(real)
    raise ConfigError(f"{path}: scenario file not found")


def parse_scenario(path: str | Path) -> tuple[Scenario, Path]:
    """Read and validate a scenario; returns it with the directory paths resolve against."""
    file = resolve_scenario_path(path)
    try:
        text = file.read_text()
    except OSError as exc:
        raise ConfigError(f"{file}: {exc}") from None
    return parse_scenario_text(text, str(file)), file.parent


def parse_scenario_text(text: str, source: str = "<scenario>") -> Scenario:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return scenario_from_dict(data, source)


def emit_scenario(scenario: Scenario) -> str:
    """Canonical TOML text; ``parse_scenario_text(emit_scenario(s)) == s``."""
    data = scenario.model_dump(mode="json", exclude_none=True)
    return tomli_w.dumps(data)


def build_simulation(scenario: Scenario, base_dir: Path | None = None):
    """Network, mold, material and trajectory described by the scenario."""
    from .assembly import GripperGrid, ShearModel, build_network
    from .catenary import Material
    from .mold import (
        Heightfield,
        ShearedPlane,
        lattice,
        load_heightfield_csv,
        target_points,
    )
    from .simulation import DrapeSimulation, SimulationSettings, Trajectory
    from .solver import SqpOptions

    g, mo = scenario.grid, scenario.mold
    if mo.kind == "sheared_plane":
        mold = ShearedPlane(mo.z0, math.radians(mo.shear_deg), tuple(mo.size), tuple(mo.center))
        center = np.array(mo.center)
        targets = target_points(mold, g.rows, g.cols, scenario.cell_length)
    else:
        path = Path(mo.path)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        try:
            mold = load_heightfield_csv(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"mold.path: {exc}", ("mold.path",)) from None
        assert isinstance(mold, Heightfield)
        center = np.array([0.5 * (mold.xs[0] + mold.xs[-1]), 0.5 * (mold.ys[0] + mold.ys[-1])])
        targets = target_points(mold, g.rows, g.cols, scenario.cell_length, math.radians(mo.shear_deg))
    xy = lattice(center, g.rows, g.cols, g.spacing, 0.0)
    base = float(np.max(targets[:, 2]))
    start = np.column_stack([xy, np.full(len(xy), base + g.initial_height)])

    slope_limit = math.tan(math.radians(scenario.solver.slope_limit_deg))
    grid = GripperGrid(g.rows, g.cols, start, slope_limit)
    net = build_network(grid, scenario.cell_length, ShearModel(tuple(scenario.shear_model.coefficients)))
    m = scenario.material
    try:
        material = Material(m.m, m.g, m.E, m.I)
    except ValueError as exc:
        raise ConfigError(f"material: {exc}", ("material",)) from None
    t = scenario.tolerances
    sv = scenario.solver
    settings = SimulationSettings(
        n_pt=t.n_pt,
        contact_tol=t.contact_tol,
        w_tol=t.w_tol,
        r_tol=t.r_tol,
        eps_coincide=t.eps_coincide,
        sqp=SqpOptions(max_iter=sv.max_iter, kkt_tol=sv.kkt_tol, constraint_tol=sv.constraint_tol),
    )
    sim = DrapeSimulation(net, mold, material, targets, settings)
    return sim, Trajectory(start, targets, scenario.trajectory.n_steps)
