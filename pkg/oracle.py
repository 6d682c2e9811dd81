"""
Brute-force ground truth for tiny instances.

The enumeration and the argmin below deliberately do not share code with
evolution.step: candidates are collected into a table and reduced with
pandas, so the two paths certify each other.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from crack import CrackSet, connected_supersets, is_continuum
from domain import BoundaryPartition, Mesh
from errors import BudgetExceededError, InvalidCrackError
from solver import total_energy

CANDIDATE_GUARD = 10 ** 6
ENERGY_MATCH_TOL = 1e-10
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class OracleResult:
    crack: CrackSet
    energy: float
    bulk: float
    surface: float
    n_candidates: int
    table: Optional[pd.DataFrame] = field(default=None, repr=False)


def estimate_candidate_count(crack: CrackSet, mesh: Mesh, max_extra_edges: int) -> int:
    """
    Upper bound on the number of connected supersets: a connected edge set
    grows one edge at a time through at most (frontier nodes x max degree)
    choices per level.
    """
    if max_extra_edges == 0:
        return 1
    max_degree = max(len(edges) for edges in mesh.node_edges)
    if crack.is_empty:
        total, width = 1 + mesh.n_nodes + mesh.n_edges, mesh.n_edges
        nodes = 2
        levels = max_extra_edges - 1
    else:
        total, width = 1, 1
        nodes = max(1, len(crack.nodes(mesh)))
        levels = max_extra_edges
    for _ in range(levels):
        width *= nodes * max_degree
        total += width
        nodes += 1
        if total > 10 ** 15:
            break
    return int(total)


def reduce_table(table: pd.DataFrame) -> pd.Series:
    """
    Optimal row of a candidate table: minimal total energy, near-ties broken
    by surface energy, edge count and edge-id tuple (seed node last).
    """
    best = table["total"].min()
    tied = table[table["total"] <= best + TIE_TOLERANCE * max(1.0, abs(best))].copy()
    tied["lex"] = [sorted(tied["key"]).index(key) for key in tied["key"]]
    return tied.sort_values(["surface", "n_edges", "lex"], kind="mergesort").iloc[0]


def _candidate_row(crack: CrackSet, energies) -> dict:
    return {
        "candidate_edges": " ".join(str(e) for e in crack.edge_tuple) if crack.edge_ids else (
            f"node:{crack.point}" if crack.point is not None else ""
        ),
        "bulk": energies.bulk,
        "surface": energies.surface,
        "total": energies.total,
        "n_edges": crack.n_edges,
        "key": (crack.edge_tuple, -1 if crack.point is None else crack.point),
        "crack": crack,
    }


def brute_force_min(
    mesh: Mesh,
    bp: BoundaryPartition,
    g: np.ndarray,
    previous: CrackSet,
    max_extra_edges: int,
    keep_table: bool = True,
    n_jobs: int = 1,
    backend: str = "cg",
    guard: int = CANDIDATE_GUARD,
) -> OracleResult:
    """Exhaustive minimization of E(g, K) over connected supersets of `previous`"""
    estimate = estimate_candidate_count(previous, mesh, max_extra_edges)
    if estimate > guard:
        raise BudgetExceededError(
            f"about {estimate:,} candidates for budget {max_extra_edges}, the guard is {guard:,}",
            estimate=estimate,
        )

    candidates = connected_supersets(previous, mesh, max_extra_edges)
    solved = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(total_energy)(mesh, bp, g, crack, backend) for crack in candidates
    )
    table = pd.DataFrame([_candidate_row(crack, energies) for crack, energies in zip(candidates, solved)])
    best = reduce_table(table)
    return OracleResult(
        crack=best["crack"],
        energy=float(best["total"]),
        bulk=float(best["bulk"]),
        surface=float(best["surface"]),
        n_candidates=len(table),
        table=table if keep_table else None,
    )


def fd_energy_derivative(
    mesh: Mesh,
    bp: BoundaryPartition,
    g: np.ndarray,
    crack_path: Sequence[int],
    at_index: int,
    base: Optional[CrackSet] = None,
    backend: str = "cg",
) -> float:
    """
    Arclength derivative of k -> E(g, base + first k path edges) at k = at_index.

    Central difference (E_{k+1} - E_{k-1}) / (l_k + l_{k+1}) inside the
    path, one-sided at its ends.
    """
    path = [int(e) for e in crack_path]
    base = base if base is not None else CrackSet.empty()
    if not 0 <= at_index <= len(path) or not path:
        raise IndexError(f"at_index {at_index} outside the path of {len(path)} edges")

    def prefix(k):
        crack = base.extended(mesh, path[:k]) if (k or base.edge_ids) else base
        if not is_continuum(crack, mesh):
            raise InvalidCrackError(f"path prefix of {k} edges is not connected")
        return crack

    lo, hi = max(at_index - 1, 0), min(at_index + 1, len(path))
    span = float(sum(mesh.edge_lengths[path[lo:hi]]))
    upper = total_energy(mesh, bp, g, prefix(hi), backend).total
    lower = total_energy(mesh, bp, g, prefix(lo), backend).total
    return (upper - lower) / span


def verify_step_against_oracle(step_result, oracle_result: OracleResult, tol: float = ENERGY_MATCH_TOL) -> bool:
    """True iff both found the same crack with energies within tol"""
    same_crack = step_result.crack == oracle_result.crack
    return bool(same_crack and abs(step_result.energies.total - oracle_result.energy) <= tol)


def dump_table(result: OracleResult, path: Union[str, Path]) -> Path:
    """Candidate table as CSV: candidate_edges, bulk, surface, total"""
    if result.table is None:
        raise ValueError("oracle result was computed without keep_table")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    result.table[["candidate_edges", "bulk", "surface", "total"]].to_csv(path, index=False, float_format="%.12e")
    return path
