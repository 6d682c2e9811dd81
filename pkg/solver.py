"""
Anti-plane equilibrium on a cracked mesh.

The crack is represented by node splitting: triangle corners around a node
are glued across every interior edge that is not a crack edge, and each
resulting group of corners becomes one degree of freedom. Both crack faces
are then traction free without any extra condition. Dirichlet data are
imposed by eliminating the constrained dofs.
"""

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix, diags
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import cg, spsolve

from crack import CrackSet, is_continuum, length
from domain import BoundaryPartition, Mesh, gradient_norm, nodal_gradients
from errors import (
    InvalidCrackError,
    InvalidLoadError,
    InvalidReferenceError,
    NumericalFailureError,
)

CG_RTOL = 1e-10
CG_MAXITER_PER_DOF = 50
COMPLIANCE_TOL = 1e-10
SPLIT_CACHE_SIZE = 64
BACKENDS = ("cg", "direct")


@dataclass(frozen=True, eq=False)
class CrackedMesh:
    """
    Degree-of-freedom layout of the mesh cut along a crack.

    Dof i < n_nodes is the primary copy of node i; extra copies of split
    nodes are numbered from n_nodes on, in node order. dof_sides gives the
    copy rank (0 for the primary copy).
    """

    mesh: Mesh = field(repr=False)
    crack: CrackSet
    triangle_dofs: np.ndarray = field(repr=False)
    dof_nodes: np.ndarray = field(repr=False)
    dof_sides: np.ndarray = field(repr=False)

    @property
    def n_dofs(self) -> int:
        return len(self.dof_nodes)

    @cached_property
    def split_nodes(self) -> np.ndarray:
        return np.unique(self.dof_nodes[self.dof_sides > 0])

    @cached_property
    def released_nodes(self) -> np.ndarray:
        """Nodes touched by crack edges; they lose any Dirichlet constraint"""
        if not self.crack.edge_ids:
            return np.zeros(0, dtype=np.int64)
        return np.unique(self.mesh.edges[list(self.crack.edge_ids)].ravel())

    @cached_property
    def stiffness(self):
        """Assembled P1 Laplace matrix, entries sum area * grad(phi_i) . grad(phi_j)"""
        mesh = self.mesh
        local = mesh.areas[:, None, None] * np.einsum("tid,tjd->tij", mesh.gradients, mesh.gradients)
        shape = (mesh.n_triangles, 3, 3)
        rows = np.broadcast_to(self.triangle_dofs[:, :, None], shape)
        cols = np.broadcast_to(self.triangle_dofs[:, None, :], shape)
        return coo_matrix(
            (local.ravel(), (rows.ravel(), cols.ravel())), shape=(self.n_dofs, self.n_dofs)
        ).tocsr()

    @cached_property
    def dof_components(self) -> np.ndarray:
        """Connected component label of every dof in the cut domain"""
        tri = self.triangle_dofs
        rows = np.concatenate([tri[:, 0], tri[:, 1]])
        cols = np.concatenate([tri[:, 1], tri[:, 2]])
        graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_dofs, self.n_dofs))
        return connected_components(graph, directed=False)[1]


def split_mesh(mesh: Mesh, crack: CrackSet) -> CrackedMesh:
    """Duplicate dofs along the crack so that its two faces decouple"""
    if not is_continuum(crack, mesh):
        raise InvalidCrackError("crack is not connected; cannot split the mesh along it")
    return _split_mesh(mesh, crack)


def clear_split_cache() -> None:
    """Drop memoized splits; each one holds its stiffness matrix once assembled"""
    _split_mesh.cache_clear()


@lru_cache(maxsize=SPLIT_CACHE_SIZE)
def _split_mesh(mesh: Mesh, crack: CrackSet) -> CrackedMesh:
    triangles = mesh.triangles
    n_tri, n_nodes = mesh.n_triangles, mesh.n_nodes
    n_corners = 3 * n_tri

    glued = mesh.edge_multiplicity == 2
    if crack.edge_ids:
        glued = glued.copy()
        glued[list(crack.edge_ids)] = False
    edge_ids = np.flatnonzero(glued)
    first, second = mesh.edge_triangles[edge_ids].T

    rows, cols = [], []
    for end in mesh.edges[edge_ids].T:
        k1 = np.argmax(triangles[first] == end[:, None], axis=1)
        k2 = np.argmax(triangles[second] == end[:, None], axis=1)
        rows.append(3 * first + k1)
        cols.append(3 * second + k2)
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_corners, n_corners))
    n_groups, labels = connected_components(graph, directed=False)

    group_node = np.empty(n_groups, dtype=np.int64)
    group_node[labels] = triangles.ravel()
    group_first = np.full(n_groups, n_corners, dtype=np.int64)
    np.minimum.at(group_first, labels, np.arange(n_corners))

    order = np.lexsort((group_first, group_node))
    ordered_nodes = group_node[order]
    starts = np.r_[True, ordered_nodes[1:] != ordered_nodes[:-1]]
    rank = np.arange(n_groups) - np.maximum.accumulate(np.where(starts, np.arange(n_groups), 0))

    group_dof = np.empty(n_groups, dtype=np.int64)
    primary = rank == 0
    group_dof[order[primary]] = ordered_nodes[primary]
    copies = order[~primary]
    group_dof[copies] = n_nodes + np.arange(len(copies))

    dof_nodes = np.concatenate([np.arange(n_nodes), group_node[copies]])
    dof_sides = np.concatenate([np.zeros(n_nodes, dtype=np.int64), rank[~primary]])
    return CrackedMesh(mesh, crack, group_dof[labels].reshape(n_tri, 3), dof_nodes, dof_sides)


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Dof values of an equilibrium solution on a cracked mesh"""

    cracked_mesh: CrackedMesh = field(repr=False)
    values: np.ndarray

    @property
    def crack(self) -> CrackSet:
        return self.cracked_mesh.crack

    @cached_property
    def gradients(self) -> np.ndarray:
        """(T, 2) gradient per triangle, taken on the triangle's side of the crack"""
        cm = self.cracked_mesh
        return np.einsum("tk,tkd->td", self.values[cm.triangle_dofs], cm.mesh.gradients)

    def to_records(self) -> List[List]:
        """(node id, side tag, value) triples for the JSON displacement dump"""
        cm = self.cracked_mesh
        return [
            [int(node), int(side), float(value)]
            for node, side, value in zip(cm.dof_nodes, cm.dof_sides, self.values)
        ]


@dataclass(frozen=True)
class Energies:
    bulk: float
    surface: float
    total: float


def constrained_dofs(cm: CrackedMesh, bp: BoundaryPartition) -> np.ndarray:
    """Mask of dofs pinned to the load: Dirichlet nodes not touched by the crack"""
    if bp.mesh is not cm.mesh:
        raise InvalidReferenceError("boundary partition was built for a different mesh")
    pinned = np.zeros(cm.mesh.n_nodes, dtype=bool)
    pinned[bp.dirichlet_nodes] = True
    pinned[cm.released_nodes] = False
    return pinned[cm.dof_nodes]


def _solve_reduced(matrix, rhs, backend, rtol, maxiter, x0=None):
    if not np.any(rhs):
        return np.zeros(len(rhs))
    if backend == "direct":
        solution = spsolve(matrix.tocsc(), rhs)
        if not np.all(np.isfinite(solution)):
            raise NumericalFailureError("direct solve produced non-finite values", residual=float("inf"))
        return solution

    preconditioner = diags(1.0 / matrix.diagonal())
    maxiter = maxiter or CG_MAXITER_PER_DOF * len(rhs)
    solution, info = cg(matrix, rhs, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=preconditioner)
    residual = float(np.linalg.norm(rhs - matrix @ solution) / np.linalg.norm(rhs))
    if info != 0 and residual > rtol:
        raise NumericalFailureError(
            f"conjugate gradients stopped after {maxiter} iterations at relative residual {residual:.3e}",
            residual=residual,
        )
    return solution


def bulk_energy(u: DisplacementField) -> float:
    """Sum over triangles of area * |grad u|^2"""
    areas = u.cracked_mesh.mesh.areas
    return float(np.dot(areas, np.einsum("td,td->t", u.gradients, u.gradients)))


def transfer_field(guess: DisplacementField, cm: CrackedMesh) -> np.ndarray:
    """
    Dof values of `guess` carried over to another split of the same mesh,
    corner by corner.
    """
    values = np.empty(cm.n_dofs)
    values[cm.triangle_dofs.ravel()] = guess.values[guess.cracked_mesh.triangle_dofs.ravel()]
    return values


def solve_equilibrium(
    cm: CrackedMesh,
    bp: BoundaryPartition,
    g: np.ndarray,
    backend: str = "cg",
    rtol: float = CG_RTOL,
    maxiter: Optional[int] = None,
    guess: Optional[DisplacementField] = None,
) -> DisplacementField:
    """
    Minimize the bulk energy over fields equal to g on the constrained dofs.

    Components of the cut domain without any constrained dof get the
    constant 0. `guess`, a solution on another split of the same mesh,
    starts the iterative backend. The result may not hold more bulk energy
    than g itself; a solve that does raises NumericalFailureError.
    """
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend '{backend}', expected one of {BACKENDS}")
    g = np.asarray(g, dtype=float)
    if g.shape != (cm.mesh.n_nodes,):
        raise InvalidLoadError(f"load must have one value per node ({cm.mesh.n_nodes}), got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise InvalidLoadError("load contains non-finite values")

    fixed = constrained_dofs(cm, bp)
    labels = cm.dof_components
    anchored = np.zeros(labels.max() + 1, dtype=bool)
    anchored[labels[fixed]] = True
    free = ~fixed & anchored[labels]

    values = np.zeros(cm.n_dofs)
    values[fixed] = g[cm.dof_nodes[fixed]]
    if free.any():
        free_idx, fixed_idx = np.flatnonzero(free), np.flatnonzero(fixed)
        rows = cm.stiffness[free_idx]
        rhs = -(rows[:, fixed_idx] @ values[fixed_idx])
        x0 = None
        if guess is not None and guess.cracked_mesh.mesh is cm.mesh and backend == "cg":
            x0 = transfer_field(guess, cm)[free_idx]
        values[free_idx] = _solve_reduced(rows[:, free_idx], rhs, backend, rtol, maxiter, x0)

    u = DisplacementField(cm, values)
    bound = bulk_energy(DisplacementField(cm, g[cm.dof_nodes]))
    excess = bulk_energy(u) - bound
    if excess > COMPLIANCE_TOL * max(1.0, bound):
        raise NumericalFailureError(
            f"solution exceeds the compliance bound {bound:.6e} by {excess:.3e}", residual=excess
        )
    return u


def evaluate_crack(
    mesh: Mesh,
    bp: BoundaryPartition,
    g: np.ndarray,
    crack: CrackSet,
    backend: str = "cg",
    guess: Optional[DisplacementField] = None,
) -> Tuple[DisplacementField, Energies]:
    """Equilibrium field and energies of one crack under one load"""
    u = solve_equilibrium(split_mesh(mesh, crack), bp, g, backend=backend, guess=guess)
    bulk = bulk_energy(u)
    surface = length(crack)
    return u, Energies(bulk, surface, bulk + surface)


def total_energy(
    mesh: Mesh, bp: BoundaryPartition, g: np.ndarray, crack: CrackSet, backend: str = "cg"
) -> Energies:
    return evaluate_crack(mesh, bp, g, crack, backend=backend)[1]


def work_rate(u: DisplacementField, gdot: np.ndarray, crack: Optional[CrackSet] = None) -> float:
    """2 (grad u | grad gdot), with gdot interpolated on both crack sides"""
    if crack is not None and crack != u.crack:
        raise InvalidCrackError("displacement was solved for a different crack")
    mesh = u.cracked_mesh.mesh
    rate_gradients = nodal_gradients(mesh, gdot)
    return 2.0 * float(np.dot(mesh.areas, np.einsum("td,td->t", u.gradients, rate_gradients)))


def boundary_power(u: DisplacementField, bp: BoundaryPartition, gdot: np.ndarray) -> float:
    """2 * sum of reactions times gdot over the constrained dofs"""
    cm = u.cracked_mesh
    fixed = constrained_dofs(cm, bp)
    reactions = cm.stiffness @ u.values
    return 2.0 * float(np.dot(reactions[fixed], np.asarray(gdot, dtype=float)[cm.dof_nodes[fixed]]))


@dataclass(frozen=True, eq=False)
class LoadTrace:
    """
    Boundary load sampled in time, linearly interpolated between samples.

    A separable trace stores g(t) = profile(t) * shape; its samples are
    exactly profile(t_k) * shape.
    """

    times: np.ndarray
    values: np.ndarray = field(repr=False)
    profile: Optional[np.ndarray] = None
    shape: Optional[np.ndarray] = field(default=None, repr=False)
    _norms: Dict[int, np.ndarray] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        values = np.array(self.values, dtype=float)
        if times.ndim != 1 or len(times) < 2:
            raise InvalidLoadError("a load trace needs at least two sample times")
        if abs(times[0]) > 1e-12 or abs(times[-1] - 1.0) > 1e-12:
            raise InvalidLoadError(f"sample times must run from 0 to 1, got [{times[0]}, {times[-1]}]")
        if np.any(np.diff(times) <= 0):
            raise InvalidLoadError("sample times must be strictly increasing")
        if values.ndim != 2 or values.shape[0] != len(times):
            raise InvalidLoadError(f"expected one nodal field per sample time, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidLoadError("load samples contain non-finite values")
        times[0], times[-1] = 0.0, 1.0
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_samples(cls, times: Sequence[float], values: np.ndarray) -> "LoadTrace":
        return cls(np.asarray(times, dtype=float), np.asarray(values, dtype=float))

    @classmethod
    def separable(cls, times: Sequence[float], profile: Sequence[float], shape: np.ndarray) -> "LoadTrace":
        profile = np.asarray(profile, dtype=float)
        shape = np.asarray(shape, dtype=float)
        if profile.shape != (len(times),):
            raise InvalidLoadError("profile needs one value per sample time")
        return cls(np.asarray(times, dtype=float), profile[:, None] * shape[None, :], profile, shape)

    @classmethod
    def zero(cls, n_nodes: int) -> "LoadTrace":
        return cls.separable([0.0, 1.0], [0.0, 0.0], np.zeros(n_nodes))

    @property
    def is_separable(self) -> bool:
        return self.profile is not None

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    def _interval(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(k, 0), len(self.times) - 2)

    def phi(self, t: float) -> float:
        if not self.is_separable:
            raise InvalidLoadError("load trace is not separable")
        return float(np.interp(t, self.times, self.profile))

    def at(self, t: float) -> np.ndarray:
        if self.is_separable:
            return self.phi(t) * self.shape
        k = self._interval(t)
        t0, t1 = self.times[k], self.times[k + 1]
        if t == t0:
            return self.values[k].copy()
        w = (t - t0) / (t1 - t0)
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def rate(self, t: float) -> np.ndarray:
        """Time derivative on the sample interval starting at t (ending at t = 1)"""
        k = self._interval(t)
        dt = self.times[k + 1] - self.times[k]
        if self.is_separable:
            return (self.profile[k + 1] - self.profile[k]) / dt * self.shape
        return (self.values[k + 1] - self.values[k]) / dt

    def rate_norms(self, mesh: Mesh) -> np.ndarray:
        """||grad gdot|| on every sample interval"""
        key = id(mesh)
        if key not in self._norms:
            dt = np.diff(self.times)
            self._norms[key] = np.array(
                [gradient_norm(mesh, self.values[k + 1] - self.values[k]) / dt[k] for k in range(len(dt))]
            )
        return self._norms[key]

    def gradient_variation(self, mesh: Mesh, a: float, b: float) -> float:
        """Integral of ||grad gdot|| over [a, b]"""
        norms = self.rate_norms(mesh)
        overlap = np.clip(np.minimum(b, self.times[1:]) - np.maximum(a, self.times[:-1]), 0.0, None)
        return float(np.dot(overlap, norms))

    def max_gradient_norm(self, mesh: Mesh, times: Sequence[float] = ()) -> float:
        """max ||grad g(t)|| over the samples and the given times"""
        sampled = [gradient_norm(mesh, row) for row in self.values]
        extra = [gradient_norm(mesh, self.at(t)) for t in times]
        return max(sampled + extra)
