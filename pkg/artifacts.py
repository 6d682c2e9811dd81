"""
Run artifacts: CSV tables, SVG crack snapshots, JSON summaries.
"""

import hashlib
import json
from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402

import pandas as pd  # noqa: E402

from crack import CrackSet  # noqa: E402
from domain import Mesh  # noqa: E402
from errors import MissingArtifactError  # noqa: E402
from solver import DisplacementField  # noqa: E402

EVOLUTION_CSV = "evolution.csv"
SIF_CSV = "sif.csv"
SUMMARY_JSON = "summary.json"
VERDICT_JSON = "verdict.json"
SNAPSHOT_DIR = "snapshots"
FIELD_DIR = "fields"
FLOAT_FORMAT = "%.12e"

EVOLUTION_COLUMNS = ["i", "t", "bulk", "surface", "total", "crack_edges", "work_integral", "estimate_slack"]
COMPARISON_COLUMNS = ["brute_total", "brute_crack_edges", "diverged"]
SIF_COLUMNS = ["step", "tip_x", "tip_y", "kappa", "residual", "release_rate", "sigma_dot"]

plt.rcParams["svg.hashsalt"] = "quasi-static-fracture"
plt.rcParams["svg.fonttype"] = "none"


def file_digest(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def crack_to_json(crack: CrackSet, mesh: Mesh) -> dict:
    return {"edges": crack.node_pairs(mesh), "point": crack.point}


def crack_from_json(data: dict, mesh: Mesh) -> CrackSet:
    if data.get("point") is not None:
        return CrackSet.at_node(mesh, data["point"])
    return CrackSet.from_node_pairs(mesh, data.get("edges", []))


def write_evolution_csv(records, path: Union[str, Path]) -> Path:
    """
    One row per step: i, t, bulk, surface, total, crack_edges, work_integral,
    estimate_slack; runs compared against brute force add brute_total,
    brute_crack_edges and diverged.
    """
    compared = any(r.brute_total is not None for r in records)
    rows = []
    for r in records:
        row = {
            "i": r.step,
            "t": r.time,
            "bulk": r.bulk,
            "surface": r.surface,
            "total": r.total,
            "crack_edges": r.crack.n_edges,
            "work_integral": r.work_integral,
            "estimate_slack": r.estimate_slack,
        }
        if compared:
            row["brute_total"] = r.brute_total
            row["brute_crack_edges"] = None if r.brute_crack is None else r.brute_crack.n_edges
            row["diverged"] = int(r.diverged)
        rows.append(row)
    columns = EVOLUTION_COLUMNS + (COMPARISON_COLUMNS if compared else [])
    path = Path(path)
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def read_evolution_csv(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing artifact: {path}")
    table = pd.read_csv(path)
    missing = [c for c in EVOLUTION_COLUMNS if c not in table.columns]
    if missing:
        raise MissingArtifactError(f"{path} lacks columns {missing}")
    return table


def write_sif_csv(table: Optional[pd.DataFrame], path: Union[str, Path]) -> Path:
    path = Path(path)
    frame = pd.DataFrame(columns=SIF_COLUMNS) if table is None else table[SIF_COLUMNS]
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_snapshot(mesh: Mesh, crack: CrackSet, path: Union[str, Path], title: str = "") -> Path:
    """SVG of the mesh in light gray with the crack in a heavy stroke"""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.add_collection(LineCollection(mesh.nodes[mesh.edges], colors="#d0d0d0", linewidths=0.4))
    if crack.edge_ids:
        ax.add_collection(
            LineCollection(mesh.nodes[mesh.edges[list(crack.edge_tuple)]], colors="black", linewidths=2.5)
        )
    elif crack.point is not None:
        x, y = mesh.nodes[crack.point]
        ax.plot([x], [y], "ko", markersize=4)
    ax.set_xlim(mesh.nodes[:, 0].min(), mesh.nodes[:, 0].max())
    ax.set_ylim(mesh.nodes[:, 1].min(), mesh.nodes[:, 1].max())
    ax.set_aspect("equal")
    ax.axis("off")
    if title:
        ax.set_title(title, fontsize=9)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def write_field_dump(u: DisplacementField, path: Union[str, Path]) -> Path:
    """JSON array of (node id, side tag, value)"""
    path = Path(path)
    path.write_text(json.dumps(u.to_records()) + "\n")
    return path


def write_json(data: dict, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path: Union[str, Path]) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing artifact: {path}")
    return json.loads(path.read_text())
