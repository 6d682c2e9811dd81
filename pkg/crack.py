"""
Crack sets on a mesh.

A crack is a connected union of mesh edges (a discrete continuum), a single
node (zero-length seed) or empty. This module measures cracks, compares them
in the capped Hausdorff metric and enumerates the connected supersets that
form the admissible family of one evolution step.
"""

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import pandas as pd

from domain import Mesh
from errors import CrackGeometryError, InvalidCrackError, InvalidReferenceError

COLLINEAR_TOL = 1e-9


@dataclass(frozen=True)
class CrackSet:
    """
    Immutable crack: a set of edge ids, or a single node, or nothing.

    Build instances with from_edges / at_node / empty so that cached_length
    is consistent with the mesh.
    """

    edge_ids: FrozenSet[int] = frozenset()
    point: Optional[int] = None
    cached_length: float = field(default=0.0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "edge_ids", frozenset(int(e) for e in self.edge_ids))
        if self.edge_ids and self.point is not None:
            raise InvalidCrackError("a crack is either a single node or a set of edges, not both")

    @classmethod
    def empty(cls) -> "CrackSet":
        return cls()

    @classmethod
    def at_node(cls, mesh: Mesh, node: int) -> "CrackSet":
        node = int(node)
        if not 0 <= node < mesh.n_nodes:
            raise InvalidReferenceError(f"node {node} does not exist (mesh has {mesh.n_nodes} nodes)")
        return cls(point=node)

    @classmethod
    def from_edges(cls, mesh: Mesh, edge_ids: Iterable[int]) -> "CrackSet":
        ids = frozenset(int(e) for e in edge_ids)
        bad = sorted(e for e in ids if not 0 <= e < mesh.n_edges)
        if bad:
            raise InvalidReferenceError(f"unknown edge ids {bad} (mesh has {mesh.n_edges} edges)")
        length = float(np.sum(mesh.edge_lengths[sorted(ids)])) if ids else 0.0
        return cls(ids, None, length)

    @classmethod
    def from_node_pairs(cls, mesh: Mesh, pairs: Iterable[Sequence[int]]) -> "CrackSet":
        ids = []
        for pair in pairs:
            a, b = sorted(int(n) for n in pair)
            if (a, b) not in mesh.edge_index:
                raise InvalidReferenceError(f"nodes ({a}, {b}) are not joined by a mesh edge")
            ids.append(mesh.edge_index[(a, b)])
        return cls.from_edges(mesh, ids)

    def extended(self, mesh: Mesh, extra: Iterable[int]) -> "CrackSet":
        return CrackSet.from_edges(mesh, self.edge_ids.union(int(e) for e in extra))

    @property
    def is_empty(self) -> bool:
        return not self.edge_ids and self.point is None

    @property
    def n_edges(self) -> int:
        return len(self.edge_ids)

    @property
    def edge_tuple(self) -> Tuple[int, ...]:
        return tuple(sorted(self.edge_ids))

    @property
    def sort_key(self) -> Tuple[int, Tuple[int, ...], int]:
        """Total order: fewer edges, then lexicographic edge ids, then seed node"""
        return (self.n_edges, self.edge_tuple, -1 if self.point is None else self.point)

    def nodes(self, mesh: Mesh) -> FrozenSet[int]:
        if self.point is not None:
            return frozenset([self.point])
        if not self.edge_ids:
            return frozenset()
        return frozenset(np.unique(mesh.edges[list(self.edge_ids)]).tolist())

    def node_pairs(self, mesh: Mesh) -> List[List[int]]:
        """Sorted list of [i, j] node pairs, the serialized form of the crack"""
        return sorted([int(a), int(b)] for a, b in mesh.edges[list(self.edge_ids)]) if self.edge_ids else []


def length(crack: CrackSet) -> float:
    return crack.cached_length


def _check_references(crack: CrackSet, mesh: Mesh):
    if crack.point is not None and not 0 <= crack.point < mesh.n_nodes:
        raise InvalidReferenceError(f"node {crack.point} does not exist")
    bad = sorted(e for e in crack.edge_ids if not 0 <= e < mesh.n_edges)
    if bad:
        raise InvalidReferenceError(f"unknown edge ids {bad} (mesh has {mesh.n_edges} edges)")


def crack_graph(crack: CrackSet, mesh: Mesh) -> nx.Graph:
    """Edge subgraph of the crack, edges annotated with their mesh edge id"""
    graph = nx.Graph()
    if crack.point is not None:
        graph.add_node(crack.point)
    for e in crack.edge_tuple:
        a, b = mesh.edges[e]
        graph.add_edge(int(a), int(b), edge_id=e)
    return graph


def is_continuum(crack: CrackSet, mesh: Mesh) -> bool:
    _check_references(crack, mesh)
    if crack.n_edges <= 1:
        return True
    return nx.is_connected(crack_graph(crack, mesh))


def is_subset(inner: CrackSet, outer: CrackSet, mesh: Mesh) -> bool:
    """Set inclusion of the point sets of two cracks"""
    if inner.is_empty:
        return True
    if inner.point is not None:
        return inner.point == outer.point or inner.point in outer.nodes(mesh)
    return inner.edge_ids <= outer.edge_ids


def crack_segments(crack: CrackSet, mesh: Mesh) -> np.ndarray:
    """(M, 2, 2) segment coordinates; a seed node is one degenerate segment"""
    if crack.point is not None:
        return mesh.nodes[[crack.point, crack.point]][None, :, :]
    if not crack.edge_ids:
        return np.zeros((0, 2, 2))
    return mesh.nodes[mesh.edges[list(crack.edge_tuple)]]


def polyline_segments(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return np.stack([points[:-1], points[1:]], axis=1)


def _distance_matrix(points: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """(P, M) distances from every point to every segment"""
    start = segments[:, 0, :]
    direction = segments[:, 1, :] - start
    norm2 = np.einsum("md,md->m", direction, direction)
    safe = np.where(norm2 > 0, norm2, 1.0)
    rel = points[:, None, :] - start[None, :, :]
    s = np.clip(np.einsum("cmd,md->cm", rel, direction) / safe, 0.0, 1.0)
    s[:, norm2 == 0] = 0.0
    diff = rel - s[:, :, None] * direction[None, :, :]
    return np.sqrt(np.einsum("cmd,cmd->cm", diff, diff))


def point_segment_distances(points: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """Distance from every point to the union of the segments"""
    points = np.asarray(points, dtype=float)
    chunk = max(1, (1 << 21) // max(len(segments), 1))
    distances = np.empty(len(points))
    for lo in range(0, len(points), chunk):
        distances[lo:lo + chunk] = _distance_matrix(points[lo:lo + chunk], segments).min(axis=1)
    return distances


def _switch_parameters(origin: np.ndarray, direction: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """
    Parameters s in [0, 1] along origin + s * direction where the nearest
    feature of `segments` may change.

    Features are end points and the interiors of nondegenerate segments.
    Every feature distance is convex along the line, so the farthest point
    from their union sits at s = 0, s = 1 or one of these parameters.
    """
    points = np.unique(segments.reshape(-1, 2), axis=0)
    tangent = segments[:, 1] - segments[:, 0]
    lengths = np.linalg.norm(tangent, axis=1)
    keep = lengths > 0
    start, lengths = segments[keep, 0], lengths[keep]
    tangent = tangent[keep] / lengths[:, None]
    normal = np.column_stack([-tangent[:, 1], tangent[:, 0]])

    offset = origin[None, :] - start
    qn, dn = np.einsum("md,md->m", offset, normal), normal @ direction
    qt, dt = np.einsum("md,md->m", offset, tangent), tangent @ direction
    rel = origin[None, :] - points

    found = [np.array([0.0, 1.0])]
    with np.errstate(divide="ignore", invalid="ignore"):
        # end point vs end point: perpendicular bisector
        i, j = np.triu_indices(len(points), 1)
        gap = points[j] - points[i]
        rhs = np.einsum("kd,kd->k", points[j], points[j]) - np.einsum("kd,kd->k", points[i], points[i])
        found.append((rhs - 2.0 * (gap @ origin)) / (2.0 * (gap @ direction)))

        # ends of the slab where an interior is the nearest feature
        found.append(-qt / dt)
        found.append((lengths - qt) / dt)

        # interior vs interior: angle bisectors
        i, j = np.triu_indices(len(start), 1)
        found.append((qn[j] - qn[i]) / (dn[i] - dn[j]))
        found.append(-(qn[i] + qn[j]) / (dn[i] + dn[j]))

        # end point vs interior: |r + s d|^2 = (qn + s dn)^2
        lead = float(direction @ direction) - dn[None, :] ** 2
        half = (rel @ direction)[:, None] - qn[None, :] * dn[None, :]
        const = np.einsum("pd,pd->p", rel, rel)[:, None] - qn[None, :] ** 2
        root = np.sqrt(half ** 2 - lead * const)
        found.append(((-half + root) / lead).ravel())
        found.append(((-half - root) / lead).ravel())
        found.append((-const / (2.0 * half)).ravel())
    s = np.concatenate(found)
    return np.unique(np.clip(s[np.isfinite(s)], 0.0, 1.0))


def _directed_distance(a: np.ndarray, b: np.ndarray) -> float:
    """sup over the segments `a` of the distance to the union of `b`"""
    worst = 0.0
    for a0, a1 in a:
        # any single b segment bounds the sup from above, by convexity
        bound = _distance_matrix(np.stack([a0, a1]), b).max(axis=0).min()
        reach = _distance_matrix((0.5 * (a0 + a1))[None, :], b)[0] - 0.5 * float(np.linalg.norm(a1 - a0))
        near = b[reach <= bound + 1e-12]
        s = _switch_parameters(a0, a1 - a0, near)
        worst = max(worst, float(point_segment_distances(a0 + s[:, None] * (a1 - a0), near).max()))
    return worst


CrackLike = Union[CrackSet, np.ndarray, Sequence]


def _as_segments(item: CrackLike, mesh: Optional[Mesh]) -> np.ndarray:
    if isinstance(item, CrackSet):
        if mesh is None:
            raise InvalidReferenceError("a mesh is required to measure a CrackSet")
        return crack_segments(item, mesh)
    array = np.asarray(item, dtype=float)
    if array.size == 0:
        return np.zeros((0, 2, 2))
    if array.ndim == 2:
        return np.stack([array, array], axis=1)
    return array


def hausdorff_distance(first: CrackLike, second: CrackLike, mesh: Optional[Mesh] = None) -> float:
    """
    Capped Hausdorff distance min(1, d_H) between two compact sets.

    Sets are cracks (with their mesh), (M, 2, 2) segment arrays or (M, 2)
    point arrays. d(empty, empty) = 0 and d(empty, K) = 1 for nonempty K.
    Exact for segments: each directed supremum is taken over the end points
    and the switch points of the nearest feature.
    """
    a = _as_segments(first, mesh)
    b = _as_segments(second, mesh)
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        return 1.0
    forward = _directed_distance(a, b)
    backward = _directed_distance(b, a)
    return float(min(1.0, max(forward, backward)))


def _grow(sets: Iterable[FrozenSet[int]], node_edges, edge_nodes) -> set:
    grown = set()
    for edge_set in sets:
        touched = {n for e in edge_set for n in edge_nodes[e]}
        for node in touched:
            for e in node_edges[node]:
                if e not in edge_set:
                    grown.add(edge_set | {e})
    return grown


def connected_supersets(crack: CrackSet, mesh: Mesh, max_extra_edges: int) -> List[CrackSet]:
    """
    All continua K containing `crack` with at most `max_extra_edges` new edges.

    Each continuum appears once, ordered by CrackSet.sort_key. From an
    empty crack the seeds are every single node and every single edge.
    """
    if max_extra_edges < 0:
        raise InvalidCrackError(f"max_extra_edges must be non-negative, got {max_extra_edges}")
    if not is_continuum(crack, mesh):
        raise InvalidCrackError("initial crack is not connected")

    results = [crack]
    if max_extra_edges == 0:
        return results

    node_edges = [chunk.tolist() for chunk in mesh.node_edges]
    edge_nodes = mesh.edges.tolist()
    if crack.is_empty:
        results.extend(CrackSet.at_node(mesh, n) for n in range(mesh.n_nodes))
        frontier = {frozenset([e]) for e in range(mesh.n_edges)}
    elif crack.point is not None:
        frontier = {frozenset([e]) for e in node_edges[crack.point]}
    else:
        frontier = _grow([crack.edge_ids], node_edges, edge_nodes)

    level = 1
    while frontier:
        results.extend(CrackSet.from_edges(mesh, edge_set) for edge_set in frontier)
        if level == max_extra_edges:
            break
        frontier = _grow(frontier, node_edges, edge_nodes)
        level += 1
    return sorted(results, key=lambda k: k.sort_key)


@dataclass(frozen=True)
class Tip:
    """Crack tip node with the unit tangent pointing out of the crack"""

    node: int
    position: Tuple[float, float]
    tangent: Tuple[float, float]


def tips(crack: CrackSet, mesh: Mesh) -> List[Tip]:
    """Interior nodes of crack-degree one, with the discrete tangent"""
    if not crack.edge_ids:
        return []
    degree = Counter(int(n) for n in mesh.edges[list(crack.edge_ids)].ravel())
    neighbor = {}
    for e in crack.edge_ids:
        a, b = (int(n) for n in mesh.edges[e])
        neighbor[a], neighbor[b] = b, a

    found = []
    for node in sorted(degree):
        if degree[node] != 1 or mesh.boundary_node_mask[node]:
            continue
        vector = mesh.nodes[node] - mesh.nodes[neighbor[node]]
        tangent = vector / np.linalg.norm(vector)
        found.append(Tip(node, tuple(map(float, mesh.nodes[node])), tuple(map(float, tangent))))
    return found


def tip_arm(crack: CrackSet, mesh: Mesh, tip_node: int) -> List[int]:
    """Edges reached from a tip by walking through crack nodes of degree two"""
    graph = crack_graph(crack, mesh)
    arm, previous, current = [], None, tip_node
    while True:
        onward = [n for n in graph.neighbors(current) if n != previous]
        if len(onward) != 1 or (previous is not None and graph.degree(current) != 2):
            break
        nxt = onward[0]
        arm.append(graph.edges[current, nxt]["edge_id"])
        previous, current = current, nxt
        if current == tip_node:
            break
    return arm


def collinear_edges(
    mesh: Mesh,
    node: int,
    direction: Sequence[float],
    count: int = 1,
    exclude: Iterable[int] = (),
) -> List[int]:
    """Up to `count` consecutive mesh edges leaving `node` straight along `direction`"""
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    skip = set(int(e) for e in exclude)
    path, current = [], int(node)
    for _ in range(count):
        step = None
        for e in mesh.node_edges[current]:
            if e in skip:
                continue
            a, b = (int(n) for n in mesh.edges[e])
            other = b if a == current else a
            vector = mesh.nodes[other] - mesh.nodes[current]
            if np.dot(vector, direction) >= (1.0 - COLLINEAR_TOL) * np.linalg.norm(vector):
                step = (int(e), other)
                break
        if step is None:
            break
        path.append(step[0])
        skip.add(step[0])
        current = step[1]
    return path


def straight_path(mesh: Mesh, start: Sequence[float], end: Sequence[float]) -> CrackSet:
    """
    Crack made of the mesh edges on the segment between the nodes nearest
    to `start` and `end`.
    """
    first, last = mesh.nearest_node(start), mesh.nearest_node(end)
    if first == last:
        return CrackSet.at_node(mesh, first)
    direction = mesh.nodes[last] - mesh.nodes[first]
    unit = direction / np.linalg.norm(direction)

    path, current = [], first
    while current != last:
        step = collinear_edges(mesh, current, unit, 1, exclude=path)
        if not step:
            raise CrackGeometryError(
                f"no mesh edge leaves node {current} along {tuple(np.round(unit, 6))}; "
                "align the mesh with the crack"
            )
        a, b = (int(n) for n in mesh.edges[step[0]])
        current = b if a == current else a
        path.append(step[0])
        if np.dot(mesh.nodes[last] - mesh.nodes[current], unit) < -COLLINEAR_TOL:
            raise CrackGeometryError(f"path from node {first} overshoots node {last}")
    return CrackSet.from_edges(mesh, path)


def refinement_table(
    curve: Callable[[np.ndarray], np.ndarray],
    n0: int,
    levels: int = 3,
    split: Optional[float] = None,
    reference_segments: int = 1024,
) -> pd.DataFrame:
    """
    Nested polyline approximations of a parametrized arc.

    `curve` maps parameters in [0, 1] to an (n, 2) array of points. Level k
    uses n0 * 2**k segments. With `split`, the tail column holds the length
    of the approximation minus its part over [0, split].
    """
    reference = polyline_segments(curve(np.linspace(0.0, 1.0, reference_segments + 1)))
    rows = []
    for level in range(levels):
        n = n0 * 2 ** level
        segments = polyline_segments(curve(np.linspace(0.0, 1.0, n + 1)))
        lengths = np.linalg.norm(segments[:, 1] - segments[:, 0], axis=1)
        row = {
            "level": level,
            "segments": n,
            "length": float(lengths.sum()),
            "hausdorff": hausdorff_distance(segments, reference),
        }
        if split is not None:
            row["tail_length"] = float(lengths[int(round(split * n)):].sum())
        rows.append(row)
    return pd.DataFrame(rows)
