"""
Crack-tip analysis: mode-III stress intensity factor, energy release rate
and Griffith's criterion along a computed evolution.

Angles are measured counterclockwise from the tip tangent, with the branch
cut behind the tip; dofs lying on the cut take the angle of the crack face
their triangles sit on.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd

from crack import CrackSet, Tip, collinear_edges, point_segment_distances, tip_arm, tips
from domain import BoundaryPartition, Mesh
from errors import CrackGeometryError, InsufficientDataError, InvalidGeometryError
from solver import CrackedMesh, DisplacementField, LoadTrace, evaluate_crack, total_energy

MIN_FIT_DOFS = 8
GRIFFITH_TOL = 0.15
BASES = ("standard", "williams")


@dataclass(frozen=True)
class TipFrame:
    tip: Tuple[float, float]
    tangent: Tuple[float, float]
    r_in: float
    r_out: float
    node: Optional[int] = None


@dataclass(frozen=True)
class SifEstimate:
    kappa: float
    residual: float
    n_dofs: int


def build_tip_frame(
    mesh: Mesh,
    crack: CrackSet,
    tip: Tip,
    r_in: Optional[float] = None,
    r_out: Optional[float] = None,
) -> TipFrame:
    """
    Fitting annulus around a tip.

    r_out defaults to the distance from the tip to the boundary and to the
    rest of the crack, minus one element layer; r_in to 4h, or 2h when the
    annulus would be too thin.
    """
    h = mesh.h
    position = np.asarray(tip.position, dtype=float)
    limit = point_segment_distances(position[None, :], mesh.boundary_segments)[0]
    arm = set(tip_arm(crack, mesh, tip.node))
    rest = [e for e in crack.edge_tuple if e not in arm]
    if rest:
        limit = min(limit, point_segment_distances(position[None, :], mesh.nodes[mesh.edges[rest]])[0])
    limit -= h

    if r_out is None:
        r_out = limit
    if r_in is None:
        r_in = 4.0 * h if 4.0 * h < 0.5 * r_out else 2.0 * h
    if r_in < 2.0 * h * (1.0 - 1e-9):
        raise InvalidGeometryError(f"inner radius {r_in:.4g} is inside the unresolved core (2h = {2 * h:.4g})")
    if r_out > limit + 1e-12:
        raise InvalidGeometryError(f"outer radius {r_out:.4g} exceeds the admissible {limit:.4g}")
    if r_out <= r_in:
        raise InvalidGeometryError(f"empty fitting annulus [{r_in:.4g}, {r_out:.4g}]")
    return TipFrame(tuple(map(float, position)), tuple(map(float, tip.tangent)), float(r_in), float(r_out), tip.node)


def _local_coordinates(points, tip, tangent):
    tangent = np.asarray(tangent, dtype=float)
    tangent = tangent / np.linalg.norm(tangent)
    normal = np.array([-tangent[1], tangent[0]])
    rel = np.asarray(points, dtype=float) - np.asarray(tip, dtype=float)
    return rel @ tangent, rel @ normal


def mode3_field(points: np.ndarray, tip: Sequence[float], tangent: Sequence[float], kappa: float = 1.0) -> np.ndarray:
    """kappa * sqrt(2 rho / pi) * sin(theta / 2), theta in (-pi, pi]"""
    x, y = _local_coordinates(points, tip, tangent)
    rho, theta = np.hypot(x, y), np.arctan2(y, x)
    return kappa * np.sqrt(2.0 * rho / np.pi) * np.sin(0.5 * theta)


def dof_polar(cm: CrackedMesh, tip: Sequence[float], tangent: Sequence[float]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Polar coordinates of every dof around a tip.

    Returns (rho, theta, used) where `used` marks dofs referenced by at
    least one triangle.
    """
    mesh = cm.mesh
    x, y = _local_coordinates(mesh.nodes[cm.dof_nodes], tip, tangent)
    rho, theta = np.hypot(x, y), np.arctan2(y, x)

    centroids = mesh.nodes[mesh.triangles].mean(axis=1)
    sums = np.zeros((cm.n_dofs, 2))
    counts = np.zeros(cm.n_dofs)
    np.add.at(sums, cm.triangle_dofs.ravel(), np.repeat(centroids, 3, axis=0))
    np.add.at(counts, cm.triangle_dofs.ravel(), 1.0)
    used = counts > 0
    mean = np.divide(sums, counts[:, None], out=np.zeros_like(sums), where=used[:, None])
    _, side = _local_coordinates(mean, tip, tangent)

    on_cut = (np.abs(y) <= 1e-9 * np.maximum(1.0, rho)) & (x < 0)
    theta[on_cut] = np.where(side[on_cut] >= 0, np.pi, -np.pi)
    return rho, theta, used


def analytic_field(
    cm: CrackedMesh, tip: Sequence[float], tangent: Sequence[float], kappa: float = 1.0
) -> DisplacementField:
    """The singular mode-III field evaluated at every dof, crack sides respected"""
    rho, theta, _ = dof_polar(cm, tip, tangent)
    return DisplacementField(cm, kappa * np.sqrt(2.0 * rho / np.pi) * np.sin(0.5 * theta))


def extract_sif(u: DisplacementField, frame: TipFrame, basis: str = "standard") -> SifEstimate:
    """
    Least-squares fit of u over the annulus dofs against
    {1, rho cos, rho sin, sqrt(2 rho/pi) sin(theta/2)} (plus
    rho^1.5 sin(3 theta/2), rho^2 cos(2 theta) for the williams basis);
    kappa is the coefficient of the singular term.
    """
    if basis not in BASES:
        raise ValueError(f"unknown basis '{basis}', expected one of {BASES}")
    rho, theta, used = dof_polar(u.cracked_mesh, frame.tip, frame.tangent)
    inside = used & (rho >= frame.r_in) & (rho <= frame.r_out)
    n_dofs = int(inside.sum())
    if n_dofs < MIN_FIT_DOFS:
        raise InsufficientDataError(
            f"only {n_dofs} dofs in the annulus [{frame.r_in:.4g}, {frame.r_out:.4g}], need {MIN_FIT_DOFS}"
        )

    r, t = rho[inside], theta[inside]
    columns = [np.ones(n_dofs), r * np.cos(t), r * np.sin(t), np.sqrt(2.0 * r / np.pi) * np.sin(0.5 * t)]
    if basis == "williams":
        columns += [r ** 1.5 * np.sin(1.5 * t), r ** 2 * np.cos(2.0 * t)]
    design = np.column_stack(columns)
    target = u.values[inside]
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    residual = math.sqrt(float(np.mean((design @ coef - target) ** 2)))
    return SifEstimate(float(coef[3]), residual, n_dofs)


def energy_release_rate(
    mesh: Mesh,
    bp: BoundaryPartition,
    g: np.ndarray,
    crack: CrackSet,
    tip: Tip,
    richardson: bool = True,
    backend: str = "cg",
) -> float:
    """
    Forward difference of the total energy when the crack is extended by
    mesh edges along the tip tangent; with two such edges the two
    differences are extrapolated to zero extension.
    """
    steps = collinear_edges(mesh, tip.node, tip.tangent, count=2 if richardson else 1, exclude=crack.edge_ids)
    if not steps:
        raise CrackGeometryError(
            f"no mesh edge continues the crack at node {tip.node} along {tip.tangent}; "
            "align the mesh with the crack path"
        )
    base = total_energy(mesh, bp, g, crack, backend).total
    s1 = float(mesh.edge_lengths[steps[0]])
    d1 = (total_energy(mesh, bp, g, crack.extended(mesh, steps[:1]), backend).total - base) / s1
    if len(steps) < 2:
        return d1
    s2 = s1 + float(mesh.edge_lengths[steps[1]])
    d2 = (total_energy(mesh, bp, g, crack.extended(mesh, steps), backend).total - base) / s2
    return (s2 * d1 - s1 * d2) / (s2 - s1)


@dataclass(frozen=True)
class TipMotion:
    tip: Tip
    sigma_dot: float
    status: str


def _classify_step(previous: CrackSet, current: CrackSet, mesh: Mesh, dt: float) -> Optional[List[TipMotion]]:
    current_tips = {tip.node: tip for tip in tips(current, mesh)}
    if current == previous:
        return [TipMotion(tip, 0.0, "frozen") for tip in current_tips.values()]
    if previous.n_edges == 0:
        return None

    graph = nx.Graph()
    for e in current.edge_ids - previous.edge_ids:
        a, b = (int(n) for n in mesh.edges[e])
        graph.add_edge(a, b, length=float(mesh.edge_lengths[e]))
    previous_tips = {tip.node for tip in tips(previous, mesh)}
    previous_nodes = previous.nodes(mesh)

    motions, moved = [], set()
    for component in nx.connected_components(graph):
        branch = graph.subgraph(component)
        degree = dict(branch.degree())
        ends = [n for n, d in degree.items() if d == 1]
        attached = [n for n in component if n in previous_nodes]
        if max(degree.values()) > 2 or len(ends) != 2 or len(attached) != 1:
            return None
        start = attached[0]
        if start not in previous_tips or start in moved or degree[start] != 1:
            return None
        end = ends[0] if ends[1] == start else ends[1]
        if end not in current_tips:
            return None
        moved.add(start)
        grown = sum(data["length"] for _, _, data in branch.edges(data=True))
        motions.append(TipMotion(current_tips[end], grown / dt, "growth"))

    for node in sorted(previous_tips - moved):
        if node in current_tips:
            motions.append(TipMotion(current_tips[node], 0.0, "frozen"))
    return motions


def tip_trajectories(records, mesh: Mesh, initial_crack: Optional[CrackSet] = None) -> Dict[int, Optional[List[TipMotion]]]:
    """
    Tip-wise motion of every step; None marks steps whose growth is not a
    set of simple paths leaving distinct tips (nucleation, branching,
    coalescence, jumps onto the boundary).
    """
    trajectories = {}
    for i, record in enumerate(records):
        if i == 0:
            previous = initial_crack if initial_crack is not None else record.crack
            dt = records[1].time - records[0].time if len(records) > 1 else 1.0
        else:
            previous = records[i - 1].crack
            dt = record.time - records[i - 1].time
        trajectories[record.step] = _classify_step(previous, record.crack, mesh, dt)
    return trajectories


@dataclass(frozen=True, eq=False)
class GriffithReport:
    table: pd.DataFrame = field(repr=False)
    unclassifiable: List[int]
    unresolved: List[Tuple[int, int]]
    worst_growth: float
    worst_frozen: float
    passed: bool


def griffith_audit(
    records,
    mesh: Mesh,
    bp: BoundaryPartition,
    load: LoadTrace,
    trajectories: Optional[Dict[int, Optional[List[TipMotion]]]] = None,
    initial_crack: Optional[CrackSet] = None,
    tol: float = GRIFFITH_TOL,
    with_release_rate: bool = False,
    backend: str = "cg",
) -> GriffithReport:
    """
    Griffith's criterion per step and tip: sigma_dot >= 0 everywhere,
    kappa^2 <= 1 + tol at frozen tips, |1 - kappa^2| <= tol at growing tips.

    Steps whose growth is not tip-wise are listed as unclassifiable and do
    not count against the verdict. A classified tip whose kappa cannot be
    extracted is listed as unresolved (step, tip node) and fails it.
    """
    if trajectories is None:
        trajectories = tip_trajectories(records, mesh, initial_crack)

    rows, unclassifiable, unresolved = [], [], []
    for record in records:
        motions = trajectories.get(record.step)
        if motions is None:
            unclassifiable.append(record.step)
            continue
        g = load.at(record.time)
        u = record.field if record.field is not None else evaluate_crack(mesh, bp, g, record.crack, backend)[0]
        for motion in motions:
            kappa, residual = math.nan, math.nan
            try:
                estimate = extract_sif(u, build_tip_frame(mesh, record.crack, motion.tip))
                kappa, residual = estimate.kappa, estimate.residual
            except (InvalidGeometryError, InsufficientDataError):
                unresolved.append((record.step, motion.tip.node))
            rate = math.nan
            if with_release_rate:
                try:
                    rate = energy_release_rate(mesh, bp, g, record.crack, motion.tip, backend=backend)
                except CrackGeometryError:
                    pass
            rows.append(
                {
                    "step": record.step,
                    "tip_x": motion.tip.position[0],
                    "tip_y": motion.tip.position[1],
                    "kappa": kappa,
                    "residual": residual,
                    "release_rate": rate,
                    "sigma_dot": motion.sigma_dot,
                    "status": motion.status,
                }
            )

    columns = ["step", "tip_x", "tip_y", "kappa", "residual", "release_rate", "sigma_dot", "status"]
    table = pd.DataFrame(rows, columns=columns)
    k2 = table["kappa"].astype(float) ** 2
    growth = (table["status"] == "growth") & k2.notna()
    frozen = (table["status"] == "frozen") & k2.notna()
    worst_growth = float((1.0 - k2[growth]).abs().max()) if growth.any() else 0.0
    worst_frozen = float((k2[frozen] - 1.0).max()) if frozen.any() else -1.0
    passed = bool(
        not unresolved and (table["sigma_dot"] >= 0).all() and worst_growth <= tol and worst_frozen <= tol
    )
    return GriffithReport(table, unclassifiable, unresolved, worst_growth, worst_frozen, passed)
