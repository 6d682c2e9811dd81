"""
Triangulated domain and boundary partition.

A Mesh is immutable: connectivity (edges, edge-to-triangle incidence,
boundary cycle, P1 shape gradients) is derived once from the node and
triangle arrays and then shared read-only by every solve.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from errors import InvalidGeometryError, InvalidPartitionError, InvalidReferenceError

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
LABELS = (DIRICHLET, NEUMANN)
RECT_SIDES = ("bottom", "right", "top", "left")

# Local edge k of a triangle joins corners k and k+1.
_LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


def _frozen(array):
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    P1 triangle mesh of the reference configuration.

    Parameters:
    -----------
    nodes : (N, 2) array of coordinates
    triangles : (T, 3) array of node ids, counterclockwise
    h : nominal element size (defaults to the longest edge)

    Derived arrays
    --------------
    edges : (E, 2) node pairs (i < j), sorted lexicographically
    edge_lengths : (E,)
    edge_triangles : (E, 2) adjacent triangles, -1 when absent
    edge_multiplicity : (E,) number of triangles sharing the edge
    triangle_edges : (T, 3) edge id of local edge k (corners k, k+1)
    boundary_edges : ids of edges owned by exactly one triangle
    areas : (T,) signed areas
    gradients : (T, 3, 2) gradients of the barycentric shape functions
    """

    nodes: np.ndarray
    triangles: np.ndarray
    h: Optional[float] = None
    edges: np.ndarray = field(init=False, repr=False)
    edge_lengths: np.ndarray = field(init=False, repr=False)
    edge_triangles: np.ndarray = field(init=False, repr=False)
    edge_multiplicity: np.ndarray = field(init=False, repr=False)
    triangle_edges: np.ndarray = field(init=False, repr=False)
    boundary_edges: np.ndarray = field(init=False, repr=False)
    areas: np.ndarray = field(init=False, repr=False)
    gradients: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        triangles = np.array(self.triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2 or len(nodes) == 0:
            raise InvalidGeometryError(f"nodes must be an (N, 2) array, got shape {nodes.shape}")
        if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) == 0:
            raise InvalidGeometryError(f"triangles must be a (T, 3) array, got shape {triangles.shape}")
        if not np.all(np.isfinite(nodes)):
            raise InvalidGeometryError("node coordinates must be finite")
        if triangles.min() < 0 or triangles.max() >= len(nodes):
            raise InvalidReferenceError("triangle references a node id outside the node array")

        n_tri = len(triangles)
        pairs = triangles[:, _LOCAL_EDGES].reshape(-1, 2)
        edges, inverse, counts = np.unique(
            np.sort(pairs, axis=1), axis=0, return_inverse=True, return_counts=True
        )
        inverse = inverse.ravel()

        owners = np.repeat(np.arange(n_tri), 3)
        order = np.argsort(inverse, kind="stable")
        first = np.searchsorted(inverse[order], np.arange(len(edges)))
        edge_triangles = np.full((len(edges), 2), -1, dtype=np.int64)
        edge_triangles[:, 0] = owners[order][first]
        shared = counts >= 2
        edge_triangles[shared, 1] = owners[order][first[shared] + 1]

        corners = nodes[triangles]
        x0, y0 = corners[:, 0, 0], corners[:, 0, 1]
        x1, y1 = corners[:, 1, 0], corners[:, 1, 1]
        x2, y2 = corners[:, 2, 0], corners[:, 2, 1]
        area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        b = np.stack([y1 - y2, y2 - y0, y0 - y1], axis=1)
        c = np.stack([x2 - x1, x0 - x2, x1 - x0], axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            gradients = np.stack([b, c], axis=2) / area2[:, None, None]

        edge_lengths = np.linalg.norm(nodes[edges[:, 1]] - nodes[edges[:, 0]], axis=1)
        h = float(self.h) if self.h is not None else float(edge_lengths.max())

        object.__setattr__(self, "nodes", _frozen(nodes))
        object.__setattr__(self, "triangles", _frozen(triangles))
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "edges", _frozen(edges.astype(np.int64)))
        object.__setattr__(self, "edge_lengths", _frozen(edge_lengths))
        object.__setattr__(self, "edge_triangles", _frozen(edge_triangles))
        object.__setattr__(self, "edge_multiplicity", _frozen(counts.astype(np.int64)))
        object.__setattr__(self, "triangle_edges", _frozen(inverse.reshape(n_tri, 3)))
        object.__setattr__(self, "boundary_edges", _frozen(np.flatnonzero(counts == 1)))
        object.__setattr__(self, "areas", _frozen(0.5 * area2))
        object.__setattr__(self, "gradients", _frozen(gradients))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def edge_index(self) -> Dict[Tuple[int, int], int]:
        """Lookup from a sorted node pair to its edge id"""
        return {(int(a), int(b)): e for e, (a, b) in enumerate(self.edges)}

    @cached_property
    def node_edges(self) -> Tuple[np.ndarray, ...]:
        """Edge ids incident to each node, ascending"""
        ends = self.edges.ravel()
        ids = np.repeat(np.arange(self.n_edges), 2)
        order = np.argsort(ends, kind="stable")
        splits = np.searchsorted(ends[order], np.arange(1, self.n_nodes))
        return tuple(np.sort(chunk) for chunk in np.split(ids[order], splits))

    @cached_property
    def boundary_node_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.edges[self.boundary_edges].ravel()] = True
        return _frozen(mask)

    @cached_property
    def boundary_cycle(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Boundary as one counterclockwise cycle.

        Returns:
        --------
        (cycle_nodes, cycle_edges) where cycle_edges[k] joins cycle_nodes[k]
        and cycle_nodes[k+1] (cyclically). The cycle starts at the
        lexicographically smallest boundary node.
        """
        successor = {}
        tri_ids, local = np.nonzero(self.edge_multiplicity[self.triangle_edges] == 1)
        for t, k in zip(tri_ids, local):
            a = int(self.triangles[t, k])
            b = int(self.triangles[t, (k + 1) % 3])
            if self.areas[t] < 0:
                a, b = b, a
            if a in successor:
                raise InvalidGeometryError(f"boundary node {a} has more than two boundary edges")
            successor[a] = (b, int(self.triangle_edges[t, k]))

        if not successor:
            raise InvalidGeometryError("mesh has no boundary edges")
        candidates = np.array(sorted(successor))
        coords = self.nodes[candidates]
        start = int(candidates[np.lexsort((coords[:, 1], coords[:, 0]))[0]])

        cycle_nodes, cycle_edges = [], []
        current = start
        while True:
            if current not in successor:
                raise InvalidGeometryError(f"boundary is open at node {current}")
            cycle_nodes.append(current)
            current, edge = successor[current]
            cycle_edges.append(edge)
            if current == start:
                break
            if len(cycle_nodes) > len(successor):
                raise InvalidGeometryError("boundary does not close into a cycle")
        if len(cycle_nodes) != len(successor):
            raise InvalidGeometryError("boundary consists of more than one cycle")
        return _frozen(np.array(cycle_nodes)), _frozen(np.array(cycle_edges))

    @cached_property
    def boundary_segments(self) -> np.ndarray:
        """(B, 2, 2) coordinates of the boundary edges"""
        return _frozen(self.nodes[self.edges[self.boundary_edges]])

    def nearest_node(self, point: Sequence[float]) -> int:
        distances = np.linalg.norm(self.nodes - np.asarray(point, dtype=float), axis=1)
        return int(np.argmin(distances))


@dataclass(frozen=True)
class BoundaryInterval:
    """Labeled interval [start, end] of normalized boundary arclength"""

    start: float
    end: float
    label: str


@dataclass(frozen=True, eq=False)
class BoundaryPartition:
    """
    Split of the boundary cycle into Dirichlet and Neumann arcs.

    Arcs are maximal cyclic runs of boundary edge ids in cycle order.
    Separator nodes are the junctions between a Dirichlet and a Neumann run;
    they never carry a Dirichlet constraint.
    """

    mesh: Mesh = field(repr=False)
    edge_labels: Tuple[str, ...]
    dirichlet_arcs: Tuple[Tuple[int, ...], ...]
    neumann_arcs: Tuple[Tuple[int, ...], ...]
    separator_nodes: Tuple[int, ...]

    @cached_property
    def dirichlet_nodes(self) -> np.ndarray:
        """Nodes of Dirichlet edges, separators excluded, ascending"""
        edge_ids = [e for arc in self.dirichlet_arcs for e in arc]
        if not edge_ids:
            return _frozen(np.zeros(0, dtype=np.int64))
        nodes = np.unique(self.mesh.edges[edge_ids].ravel())
        nodes = np.setdiff1d(nodes, np.array(self.separator_nodes, dtype=np.int64))
        return _frozen(nodes)


IntervalLike = Union[BoundaryInterval, Tuple[float, float, str], Dict[str, object]]


def _coerce_interval(item: IntervalLike) -> BoundaryInterval:
    if isinstance(item, BoundaryInterval):
        interval = item
    elif isinstance(item, dict):
        interval = BoundaryInterval(float(item["start"]), float(item["end"]), str(item["label"]))
    else:
        start, end, label = item
        interval = BoundaryInterval(float(start), float(end), str(label))
    label = interval.label.lower()
    if label not in LABELS:
        raise InvalidPartitionError(f"unknown boundary label '{interval.label}', expected one of {LABELS}")
    if not interval.end > interval.start:
        raise InvalidPartitionError(f"empty boundary interval [{interval.start}, {interval.end}]")
    return BoundaryInterval(interval.start, interval.end, label)


def assign_boundary(mesh: Mesh, intervals: Iterable[IntervalLike], tol: float = 1e-9) -> BoundaryPartition:
    """
    Label every boundary edge by the interval containing its midpoint.

    Intervals are given in normalized arclength along the counterclockwise
    boundary cycle, starting at its lexicographically smallest node. They
    must tile [0, 1] without gaps or overlaps.
    """
    spec = sorted((_coerce_interval(item) for item in intervals), key=lambda iv: iv.start)
    if not spec:
        raise InvalidPartitionError("boundary spec is empty")
    if abs(spec[0].start) > tol or abs(spec[-1].end - 1.0) > tol:
        raise InvalidPartitionError(
            f"boundary spec must cover [0, 1], got [{spec[0].start}, {spec[-1].end}]"
        )
    for left, right in zip(spec, spec[1:]):
        if right.start > left.end + tol:
            raise InvalidPartitionError(f"gap in boundary spec between {left.end} and {right.start}")
        if right.start < left.end - tol:
            raise InvalidPartitionError(f"overlap in boundary spec between {right.start} and {left.end}")

    cycle_nodes, cycle_edges = mesh.boundary_cycle
    lengths = mesh.edge_lengths[cycle_edges]
    offsets = np.concatenate([[0.0], np.cumsum(lengths)])
    midpoints = (offsets[:-1] + 0.5 * lengths) / offsets[-1]
    starts = np.array([iv.start for iv in spec])
    which = np.clip(np.searchsorted(starts, midpoints, side="right") - 1, 0, len(spec) - 1)
    labels = tuple(spec[k].label for k in which)

    m = len(labels)
    breaks = [k for k in range(m) if labels[k] != labels[k - 1]]
    if not breaks:
        arcs = {DIRICHLET: [], NEUMANN: []}
        arcs[labels[0]].append(tuple(int(e) for e in cycle_edges))
        return BoundaryPartition(mesh, labels, tuple(arcs[DIRICHLET]), tuple(arcs[NEUMANN]), ())

    arcs = {DIRICHLET: [], NEUMANN: []}
    for run_start, run_end in zip(breaks, breaks[1:] + [breaks[0] + m]):
        run = tuple(int(cycle_edges[k % m]) for k in range(run_start, run_end))
        arcs[labels[run_start]].append(run)
    separators = tuple(sorted(int(cycle_nodes[k]) for k in breaks))
    return BoundaryPartition(mesh, labels, tuple(arcs[DIRICHLET]), tuple(arcs[NEUMANN]), separators)


def rect_side_intervals(
    width: float, height: float, sides: Dict[str, str], default: str = DIRICHLET
) -> List[BoundaryInterval]:
    """Boundary spec of a rectangle from labels of its named sides"""
    unknown = set(sides) - set(RECT_SIDES)
    if unknown:
        raise InvalidPartitionError(f"unknown rectangle sides {sorted(unknown)}")
    perimeter = 2.0 * (width + height)
    cuts = [0.0, width, width + height, 2.0 * width + height, perimeter]
    return [
        BoundaryInterval(cuts[k] / perimeter, cuts[k + 1] / perimeter, sides.get(side, default))
        for k, side in enumerate(RECT_SIDES)
    ]


def build_rect_mesh(
    width: float, height: float, h: float, origin: Tuple[float, float] = (0.0, 0.0)
) -> Mesh:
    """
    Structured right-triangle mesh of a rectangle.

    Nodes are numbered row-major from the origin corner; each cell
    (i, j) is split by its diagonal from (i, j) to (i+1, j+1).
    """
    for name, value in (("width", width), ("height", height), ("h", h)):
        if not (math.isfinite(value) and value > 0):
            raise InvalidGeometryError(f"{name} must be positive, got {value}")
    if h > min(width, height) * (1.0 + 1e-12):
        raise InvalidGeometryError(f"h={h} exceeds the smaller rectangle side {min(width, height)}")

    nx = math.ceil(width / h - 1e-9)
    ny = math.ceil(height / h - 1e-9)
    xs = origin[0] + width * np.arange(nx + 1) / nx
    ys = origin[1] + height * np.arange(ny + 1) / ny
    grid_x, grid_y = np.meshgrid(xs, ys)
    nodes = np.column_stack([grid_x.ravel(), grid_y.ravel()])

    index = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    n00 = index[:-1, :-1].ravel()
    n10 = index[:-1, 1:].ravel()
    n11 = index[1:, 1:].ravel()
    n01 = index[1:, :-1].ravel()
    triangles = np.empty((2 * len(n00), 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([n00, n10, n11])
    triangles[1::2] = np.column_stack([n00, n11, n01])
    return Mesh(nodes, triangles, h=float(h))


def build_disk_mesh(radius: float, h: float, center: Tuple[float, float] = (0.0, 0.0)) -> Mesh:
    """
    Structured disk mesh made of concentric rings.

    Ring k (1..n, n = ceil(radius/h)) carries 6k equally spaced nodes
    starting at angle 0. The rays at multiples of pi/3 are chains of mesh
    edges, so slits along them can be represented exactly.
    """
    for name, value in (("radius", radius), ("h", h)):
        if not (math.isfinite(value) and value > 0):
            raise InvalidGeometryError(f"{name} must be positive, got {value}")
    if h > radius * (1.0 + 1e-12):
        raise InvalidGeometryError(f"h={h} exceeds the radius {radius}")

    n_rings = math.ceil(radius / h - 1e-9)
    coords = [np.array([center], dtype=float)]
    for k in range(1, n_rings + 1):
        angles = 2.0 * np.pi * np.arange(6 * k) / (6 * k)
        r = radius * k / n_rings
        coords.append(np.column_stack([center[0] + r * np.cos(angles), center[1] + r * np.sin(angles)]))
    nodes = np.concatenate(coords)

    def ring_node(k, j):
        return 0 if k == 0 else 1 + 3 * k * (k - 1) + j % (6 * k)

    triangles = []
    for k in range(1, n_rings + 1):
        for sextant in range(6):
            inner = [ring_node(k - 1, sextant * (k - 1) + i) for i in range(k)]
            outer = [ring_node(k, sextant * k + i) for i in range(k + 1)]
            triangles.extend((inner[i], outer[i], outer[i + 1]) for i in range(k))
            triangles.extend((inner[i], outer[i + 1], inner[i + 1]) for i in range(k - 1))
    triangles = np.array(triangles, dtype=np.int64)

    corners = nodes[triangles]
    area2 = (corners[:, 1, 0] - corners[:, 0, 0]) * (corners[:, 2, 1] - corners[:, 0, 1]) - (
        corners[:, 2, 0] - corners[:, 0, 0]
    ) * (corners[:, 1, 1] - corners[:, 0, 1])
    flip = area2 < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    return Mesh(nodes, triangles, h=radius / n_rings)


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str


def validate(mesh: Mesh) -> List[Violation]:
    """Report every broken mesh invariant; empty list when the mesh is sound"""
    violations = []
    for t in np.flatnonzero(mesh.areas <= 0):
        violations.append(Violation("negative-area", f"triangle {t} has area {mesh.areas[t]:.3e}"))
    for e in np.flatnonzero(mesh.edge_lengths <= 0):
        violations.append(Violation("degenerate-edge", f"edge {e} {tuple(mesh.edges[e])} has zero length"))
    for e in np.flatnonzero(mesh.edge_multiplicity > 2):
        violations.append(
            Violation(
                "non-manifold-edge",
                f"edge {e} {tuple(mesh.edges[e])} is shared by {mesh.edge_multiplicity[e]} triangles",
            )
        )

    boundary = mesh.edges[mesh.boundary_edges]
    degree = np.bincount(boundary.ravel(), minlength=mesh.n_nodes)
    bad = np.flatnonzero((degree != 0) & (degree != 2))
    if len(bad):
        violations.append(Violation("non-cycle", f"boundary nodes {bad.tolist()} do not have degree 2"))
    elif len(boundary):
        graph = coo_matrix(
            (np.ones(len(boundary)), (boundary[:, 0], boundary[:, 1])), shape=(mesh.n_nodes, mesh.n_nodes)
        )
        _, component = connected_components(graph, directed=False)
        if len(np.unique(component[np.flatnonzero(degree)])) != 1:
            violations.append(Violation("non-cycle", "boundary edges form more than one cycle"))
    else:
        violations.append(Violation("non-cycle", "mesh has no boundary edges"))
    return violations


def nodal_gradients(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """(T, 2) constant gradient of a P1 nodal field on each triangle"""
    values = np.asarray(values, dtype=float)
    return np.einsum("tk,tkd->td", values[mesh.triangles], mesh.gradients)


def gradient_norm(mesh: Mesh, values: np.ndarray) -> float:
    """L2 norm of the gradient of a nodal field"""
    grad = nodal_gradients(mesh, values)
    return math.sqrt(float(np.dot(mesh.areas, np.einsum("td,td->t", grad, grad))))


def write_mesh(mesh: Mesh, path: Union[str, Path]) -> Path:
    """Plain-text export: header, N lines 'x y', T lines 'i j k'"""
    path = Path(path)
    lines = [f"nodes {mesh.n_nodes} triangles {mesh.n_triangles}"]
    lines.extend(f"{x:.17g} {y:.17g}" for x, y in mesh.nodes)
    lines.extend(f"{i} {j} {k}" for i, j, k in mesh.triangles)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_mesh(path: Union[str, Path], h: Optional[float] = None) -> Mesh:
    """Parse the plain-text mesh format written by write_mesh"""
    path = Path(path)
    if not path.exists():
        raise InvalidGeometryError(f"mesh file not found: {path}")
    rows = [(number, line.split()) for number, line in enumerate(path.read_text().splitlines(), 1)]
    rows = [(number, parts) for number, parts in rows if parts]
    if not rows:
        raise InvalidGeometryError(f"{path}: empty mesh file")

    number, header = rows[0]
    if len(header) != 4 or header[0] != "nodes" or header[2] != "triangles":
        raise InvalidGeometryError(f"{path}:{number}: expected 'nodes N triangles T'")
    try:
        n_nodes, n_triangles = int(header[1]), int(header[3])
        body = rows[1:]
        if len(body) != n_nodes + n_triangles:
            raise InvalidGeometryError(
                f"{path}: expected {n_nodes + n_triangles} data lines, found {len(body)}"
            )
        nodes = [[float(v) for v in parts] for _, parts in body[:n_nodes]]
        triangles = [[int(v) for v in parts] for _, parts in body[n_nodes:]]
    except ValueError as e:
        raise InvalidGeometryError(f"{path}: malformed mesh file ({e})") from e
    return Mesh(np.array(nodes), np.array(triangles), h=h)
