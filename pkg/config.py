"""
Run configuration.

A run is described by one JSON document validated with pydantic. Every
spec model knows how to build the domain object it describes.
"""

import json
import os
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from crack import CrackSet, straight_path
from domain import (
    BoundaryInterval,
    BoundaryPartition,
    Mesh,
    assign_boundary,
    build_disk_mesh,
    build_rect_mesh,
    read_mesh,
    rect_side_intervals,
)
from errors import ConfigError
from evolution import MinimizerStrategy, Problem, Schedule
from sif import mode3_field
from solver import LoadTrace

load_dotenv()

OUTPUT_ENV = "QSF_OUTPUT_DIR"
Label = Literal["dirichlet", "neumann"]
Side = Literal["bottom", "right", "top", "left"]


class SpecModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MeshSpec(SpecModel):
    kind: Literal["rect", "disk", "file"] = "rect"
    width: float = Field(1.0, gt=0)
    height: float = Field(1.0, gt=0)
    radius: float = Field(1.0, gt=0)
    h: float = Field(0.25, gt=0)
    origin: Tuple[float, float] = (0.0, 0.0)
    path: Optional[str] = None

    @model_validator(mode="after")
    def _file_exists(self):
        if self.kind == "file":
            if not self.path:
                raise ValueError("mesh kind 'file' needs a path")
            if not Path(self.path).exists():
                raise ValueError(f"mesh file not found: {self.path}")
        return self

    def build(self) -> Mesh:
        if self.kind == "rect":
            return build_rect_mesh(self.width, self.height, self.h, origin=self.origin)
        if self.kind == "disk":
            return build_disk_mesh(self.radius, self.h, center=self.origin)
        return read_mesh(self.path)


class IntervalSpec(SpecModel):
    start: float = Field(ge=0, le=1)
    end: float = Field(ge=0, le=1)
    label: Label


class BoundarySpec(SpecModel):
    """Either named rectangle sides or explicit arclength intervals"""

    sides: Optional[Dict[Side, Label]] = None
    intervals: Optional[List[IntervalSpec]] = None
    default: Label = "dirichlet"

    @model_validator(mode="after")
    def _one_form(self):
        if self.sides is not None and self.intervals is not None:
            raise ValueError("give either 'sides' or 'intervals', not both")
        return self

    def build(self, mesh: Mesh, mesh_spec: MeshSpec) -> BoundaryPartition:
        if self.intervals is not None:
            return assign_boundary(mesh, [BoundaryInterval(iv.start, iv.end, iv.label) for iv in self.intervals])
        if self.sides is not None:
            if mesh_spec.kind != "rect":
                raise ConfigError("named boundary sides need a rectangular mesh", ["boundary.sides: not a rect mesh"])
            return assign_boundary(mesh, rect_side_intervals(mesh_spec.width, mesh_spec.height, self.sides, self.default))
        return assign_boundary(mesh, [BoundaryInterval(0.0, 1.0, self.default)])


class FieldSpec(SpecModel):
    """
    Nodal field on the mesh.

    affine: c0 + cx x + cy y
    step:   `below` where the coordinate along `axis` is < `at`, `above` otherwise
    tear:   the step values scaled by c0 + cx x + cy y
    mode3:  kappa sqrt(2 rho/pi) sin(theta/2) around `tip` with `tangent`
    table:  explicit nodal values
    """

    kind: Literal["affine", "step", "tear", "mode3", "table"] = "affine"
    c0: float = 0.0
    cx: float = 0.0
    cy: float = 0.0
    axis: Literal["x", "y"] = "y"
    at: float = 0.0
    below: float = -1.0
    above: float = 1.0
    tip: Tuple[float, float] = (0.0, 0.0)
    tangent: Tuple[float, float] = (1.0, 0.0)
    kappa: float = 1.0
    values: Optional[List[float]] = None

    def evaluate(self, mesh: Mesh) -> np.ndarray:
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        if self.kind == "affine":
            return self.c0 + self.cx * x + self.cy * y
        if self.kind in ("step", "tear"):
            coordinate = x if self.axis == "x" else y
            values = np.where(coordinate < self.at, self.below, self.above).astype(float)
            return values if self.kind == "step" else values * (self.c0 + self.cx * x + self.cy * y)
        if self.kind == "mode3":
            return mode3_field(mesh.nodes, self.tip, self.tangent, self.kappa)
        if self.values is None or len(self.values) != mesh.n_nodes:
            raise ConfigError(
                "table field needs one value per node",
                [f"field.values: expected {mesh.n_nodes} values, got {0 if self.values is None else len(self.values)}"],
            )
        return np.asarray(self.values, dtype=float)


class LoadSpec(SpecModel):
    """
    separable: g(t) = phi(t) * field, phi given by (profile_times, profile_values)
    table: g(t_k) = fields[k] at times[k]
    surfing: a mode3 field whose tip moves by t * velocity, sampled at
             `samples` equally spaced times
    zero: g = 0
    """

    kind: Literal["separable", "table", "surfing", "zero"] = "separable"
    profile_times: List[float] = [0.0, 1.0]
    profile_values: List[float] = [0.0, 1.0]
    field: Optional[FieldSpec] = None
    times: Optional[List[float]] = None
    fields: Optional[List[FieldSpec]] = None
    velocity: Tuple[float, float] = (0.0, 0.0)
    samples: int = Field(2, ge=2)

    @model_validator(mode="after")
    def _complete(self):
        if self.kind == "surfing" and (self.field is None or self.field.kind != "mode3"):
            raise ValueError("surfing load needs a mode3 'field'")
        if self.kind == "separable":
            if self.field is None:
                raise ValueError("separable load needs 'field'")
            if len(self.profile_times) != len(self.profile_values):
                raise ValueError("profile_times and profile_values differ in length")
        if self.kind == "table":
            if not self.times or not self.fields or len(self.times) != len(self.fields):
                raise ValueError("table load needs matching 'times' and 'fields'")
        return self

    def build(self, mesh: Mesh) -> LoadTrace:
        if self.kind == "zero":
            return LoadTrace.zero(mesh.n_nodes)
        if self.kind == "separable":
            return LoadTrace.separable(self.profile_times, self.profile_values, self.field.evaluate(mesh))
        if self.kind == "surfing":
            times = np.linspace(0.0, 1.0, self.samples)
            start, velocity = np.asarray(self.field.tip), np.asarray(self.velocity)
            tips = [tuple(start + t * velocity) for t in times]
            return LoadTrace.from_samples(
                times, np.stack([self.field.model_copy(update={"tip": tip}).evaluate(mesh) for tip in tips])
            )
        return LoadTrace.from_samples(self.times, np.stack([spec.evaluate(mesh) for spec in self.fields]))


class CrackSpec(SpecModel):
    kind: Literal["empty", "point", "edges", "segment"] = "empty"
    node: Optional[int] = None
    point: Optional[Tuple[float, float]] = None
    edges: List[Tuple[int, int]] = []
    start: Optional[Tuple[float, float]] = None
    end: Optional[Tuple[float, float]] = None

    @model_validator(mode="after")
    def _complete(self):
        if self.kind == "point" and self.node is None and self.point is None:
            raise ValueError("point crack needs 'node' or 'point'")
        if self.kind == "segment" and (self.start is None or self.end is None):
            raise ValueError("segment crack needs 'start' and 'end'")
        return self

    def build(self, mesh: Mesh) -> CrackSet:
        if self.kind == "empty":
            return CrackSet.empty()
        if self.kind == "point":
            node = self.node if self.node is not None else mesh.nearest_node(self.point)
            return CrackSet.at_node(mesh, node)
        if self.kind == "edges":
            return CrackSet.from_node_pairs(mesh, self.edges)
        return straight_path(mesh, self.start, self.end)


class StrategySpec(SpecModel):
    kind: Literal["brute", "greedy"] = "brute"
    budget: int = Field(1, ge=0)
    depth: int = Field(1, ge=1)
    patience: int = Field(0, ge=0)
    compare: bool = False

    @model_validator(mode="after")
    def _compare_greedy(self):
        if self.compare and self.kind != "greedy":
            raise ValueError("'compare' runs brute force next to the greedy strategy; kind must be 'greedy'")
        return self

    def build(self) -> MinimizerStrategy:
        return MinimizerStrategy(
            self.kind, budget=self.budget, depth=self.depth, patience=self.patience, compare=self.compare
        )


class AuditSpec(SpecModel):
    discrete_estimate: bool = True
    apriori: bool = True
    monotone_load: bool = True
    energy_balance: bool = True
    stationarity: bool = False
    griffith: bool = False
    release_rate: bool = False
    griffith_tol: float = Field(0.15, gt=0)


class RunConfig(SpecModel):
    mesh: MeshSpec = MeshSpec()
    boundary: BoundarySpec = BoundarySpec()
    load: LoadSpec = LoadSpec(kind="zero")
    initial_crack: CrackSpec = CrackSpec()
    delta: float = Field(0.1, gt=0, le=1)
    strategy: StrategySpec = StrategySpec()
    audits: AuditSpec = AuditSpec()
    output_dir: str = "runs/default"
    snapshot_every: int = Field(1, ge=1)
    dump_fields: bool = False
    # draws the monotone-load audit's pair sample
    seed: int = 0
    threads: int = Field(1, ge=1)
    backend: Literal["cg", "direct"] = "cg"

    @field_validator("output_dir")
    @classmethod
    def _non_empty(cls, value):
        if not value.strip():
            raise ValueError("output_dir must not be empty")
        return value

    def build_problem(self) -> Problem:
        mesh = self.mesh.build()
        return Problem(
            mesh=mesh,
            partition=self.boundary.build(mesh, self.mesh),
            load=self.load.build(mesh),
            initial_crack=self.initial_crack.build(mesh),
        )

    def build_schedule(self) -> Schedule:
        return Schedule(self.delta)

    def resolved_output_dir(self, override: Optional[Union[str, Path]] = None) -> Path:
        """QSF_OUTPUT_DIR from the environment wins over `override`, which wins over the config"""
        return Path(os.getenv(OUTPUT_ENV) or override or self.output_dir)


def _diagnostics(error: ValidationError) -> List[str]:
    return [f"{'.'.join(str(part) for part in item['loc']) or '<root>'}: {item['msg']}" for item in error.errors()]


def parse_config(data: Union[dict, str]) -> RunConfig:
    """Validate a config given as a dict or a JSON string"""
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as e:
            raise ConfigError(
                f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}",
                [f"line {e.lineno}, column {e.colno}: {e.msg}"],
            ) from e
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        diagnostics = _diagnostics(e)
        raise ConfigError("invalid run configuration:\n  " + "\n  ".join(diagnostics), diagnostics) from e


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}", [f"{path}: not found"])
    return parse_config(path.read_text())
