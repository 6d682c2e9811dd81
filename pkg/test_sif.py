"""
Tests for sif.py: stress intensity fitting, energy release rate, Griffith audit
"""
import math

import numpy as np
import pytest

from config import parse_config
from crack import CrackSet, straight_path, tips
from domain import DIRICHLET, BoundaryInterval, assign_boundary, build_disk_mesh, build_rect_mesh
from errors import InsufficientDataError, InvalidGeometryError
from evolution import EvolutionRecord, run
from sif import (
    analytic_field,
    build_tip_frame,
    energy_release_rate,
    extract_sif,
    griffith_audit,
    mode3_field,
    tip_trajectories,
)
from solver import DisplacementField, LoadTrace, evaluate_crack, split_mesh

ORIGIN, AHEAD = (0.0, 0.0), (1.0, 0.0)


@pytest.fixture(scope="module")
def slit_disk():
    mesh = build_disk_mesh(1.0, 1.0 / 64)
    slit = straight_path(mesh, (-1.0, 0.0), ORIGIN)
    bp = assign_boundary(mesh, [BoundaryInterval(0.0, 1.0, DIRICHLET)])
    return mesh, bp, slit


@pytest.fixture(scope="module")
def coarse_slit_disk():
    mesh = build_disk_mesh(1.0, 1.0 / 32)
    slit = straight_path(mesh, (-1.0, 0.0), ORIGIN)
    bp = assign_boundary(mesh, [BoundaryInterval(0.0, 1.0, DIRICHLET)])
    return mesh, bp, slit


def _frame(mesh, slit, **radii):
    (tip,) = tips(slit, mesh)
    return build_tip_frame(mesh, slit, tip, **radii)


def test_slit_tip_and_default_frame(slit_disk):
    mesh, _, slit = slit_disk
    (tip,) = tips(slit, mesh)
    assert np.allclose(tip.position, ORIGIN)
    assert np.allclose(tip.tangent, AHEAD)
    frame = build_tip_frame(mesh, slit, tip)
    assert math.isclose(frame.r_in, 4.0 * mesh.h)
    assert frame.r_out < 1.0 - mesh.h


def test_mode3_field_jumps_across_the_crack():
    above = mode3_field(np.array([[-0.25, 1e-12]]), ORIGIN, AHEAD)
    below = mode3_field(np.array([[-0.25, -1e-12]]), ORIGIN, AHEAD)
    assert math.isclose(above[0], -below[0], rel_tol=1e-9)
    assert math.isclose(above[0], math.sqrt(0.5 / math.pi), rel_tol=1e-6)


def test_exact_field_is_fitted_exactly(slit_disk):
    mesh, _, slit = slit_disk
    cm = split_mesh(mesh, slit)
    frame = _frame(mesh, slit)
    for kappa in (1.0, 0.5, -1.0):
        estimate = extract_sif(analytic_field(cm, ORIGIN, AHEAD, kappa), frame)
        assert math.isclose(estimate.kappa, kappa, rel_tol=1e-8)
        assert estimate.residual <= 1e-10


def test_fitted_kappa_of_computed_field(slit_disk):
    mesh, bp, slit = slit_disk
    frame = _frame(mesh, slit)
    g = mode3_field(mesh.nodes, ORIGIN, AHEAD)
    u, _ = evaluate_crack(mesh, bp, g, slit, backend="direct")
    assert abs(extract_sif(u, frame).kappa - 1.0) <= 0.02
    assert abs(extract_sif(u, frame, basis="williams").kappa - 1.0) <= 0.02

    half, _ = evaluate_crack(mesh, bp, 0.5 * g, slit, backend="direct")
    assert abs(extract_sif(half, frame).kappa - 0.5) <= 0.01

    mirrored, _ = evaluate_crack(mesh, bp, -g, slit, backend="direct")
    assert abs(extract_sif(mirrored, frame).kappa + 1.0) <= 0.02


def test_frame_and_fit_errors(coarse_slit_disk):
    mesh, _, slit = coarse_slit_disk
    h = mesh.h
    with pytest.raises(InvalidGeometryError):
        _frame(mesh, slit, r_in=h)
    with pytest.raises(InvalidGeometryError):
        _frame(mesh, slit, r_out=1.5)
    with pytest.raises(InvalidGeometryError):
        _frame(mesh, slit, r_in=0.5, r_out=0.25)

    # no ring of nodes lies strictly between radii 2h and 3h
    thin = _frame(mesh, slit, r_in=2.02 * h, r_out=2.9 * h)
    u = analytic_field(split_mesh(mesh, slit), ORIGIN, AHEAD)
    with pytest.raises(InsufficientDataError):
        extract_sif(u, thin)
    with pytest.raises(ValueError):
        extract_sif(u, _frame(mesh, slit), basis="polynomial")


@pytest.mark.parametrize("a", [0.5, 0.8, 1.0, 1.2])
def test_energy_release_rate_of_scaled_mode3_load(a):
    mesh = build_rect_mesh(2.0, 2.0, 1.0 / 32, origin=(-1.0, -1.0))
    bp = assign_boundary(mesh, [BoundaryInterval(0.0, 1.0, DIRICHLET)])
    slit = straight_path(mesh, (-1.0, 0.0), ORIGIN)
    (tip,) = tips(slit, mesh)
    g = a * mode3_field(mesh.nodes, ORIGIN, AHEAD)
    rate = energy_release_rate(mesh, bp, g, slit, tip, backend="direct")
    assert abs(rate - (1.0 - a ** 2)) <= 0.05 * (1.0 + a ** 2)


def _record(step, time, crack):
    return EvolutionRecord(step, time, crack, 0.0, crack.cached_length, crack.cached_length, 0.0)


def test_tip_trajectories_classify_growth_and_freezing(square):
    notch = straight_path(square, (0.0, 0.5), (0.25, 0.5))
    longer = straight_path(square, (0.0, 0.5), (0.5, 0.5))
    longest = straight_path(square, (0.0, 0.5), (1.0, 0.5))
    records = [_record(0, 0.0, notch), _record(1, 0.5, notch), _record(2, 1.0, longer)]
    moves = tip_trajectories(records, square, initial_crack=notch)
    assert [m.status for m in moves[0]] == ["frozen"]
    assert moves[1][0].sigma_dot == 0.0
    (growth,) = moves[2]
    assert growth.status == "growth"
    assert math.isclose(growth.sigma_dot, 0.25 / 0.5)
    assert np.allclose(growth.tip.position, (0.5, 0.5))

    # the grown crack reaches the boundary and leaves no tip to follow
    assert tip_trajectories([_record(0, 0.0, longest)], square, initial_crack=notch)[0] is None


def test_nucleation_and_branching_are_unclassifiable(square):
    seed = CrackSet.from_node_pairs(square, [(11, 12)])
    assert tip_trajectories([_record(0, 0.0, seed)], square, initial_crack=CrackSet.empty())[0] is None
    branched = CrackSet.from_node_pairs(square, [(11, 12), (12, 13), (12, 18)])
    assert tip_trajectories([_record(0, 0.0, branched)], square, initial_crack=seed)[0] is None


def test_griffith_audit_on_frozen_slit(coarse_slit_disk):
    mesh, bp, slit = coarse_slit_disk
    load = LoadTrace.separable([0.0, 1.0], [0.5, 1.2], mode3_field(mesh.nodes, ORIGIN, AHEAD))
    records = [_record(0, 0.0, slit), _record(1, 1.0, slit)]
    report = griffith_audit(records, mesh, bp, load, initial_crack=slit, backend="direct")
    assert report.unclassifiable == []
    assert list(report.table["status"]) == ["frozen", "frozen"]
    assert (report.table["sigma_dot"] >= 0).all()
    kappas = report.table["kappa"].to_numpy()
    assert np.allclose(kappas, [0.5, 1.2], rtol=0.04)
    assert not report.passed
    assert report.worst_frozen > 0.3

    calm = griffith_audit(records[:1], mesh, bp, load, initial_crack=slit, backend="direct")
    assert calm.passed
    assert calm.worst_growth == 0.0


def test_griffith_audit_fails_when_kappa_cannot_be_fitted(square, all_dirichlet):
    # at h = 0.25 no tip lies far enough from the boundary to fit an annulus
    notch = straight_path(square, (0.0, 0.5), (0.25, 0.5))
    longer = straight_path(square, (0.0, 0.5), (0.5, 0.5))
    load = LoadTrace.separable([0.0, 1.0], [0.0, 1.0], 50.0 * mode3_field(square.nodes, (0.5, 0.5), AHEAD))
    records = [_record(0, 0.0, notch), _record(1, 1.0, longer)]
    report = griffith_audit(records, square, all_dirichlet, load, initial_crack=notch, backend="direct")
    assert report.unclassifiable == []
    assert report.unresolved == [(0, square.nearest_node((0.25, 0.5))), (1, square.nearest_node((0.5, 0.5)))]
    assert report.table["kappa"].isna().all()
    assert list(report.table["status"]) == ["frozen", "growth"]
    assert not report.passed


def test_fitted_kappa_is_stable_under_annulus_change(slit_disk):
    mesh, bp, slit = slit_disk
    u, _ = evaluate_crack(mesh, bp, mode3_field(mesh.nodes, ORIGIN, AHEAD), slit, backend="direct")
    wide = _frame(mesh, slit)
    narrow = _frame(mesh, slit, r_in=2.0 * mesh.h, r_out=0.5 * wide.r_out)
    k_wide, k_narrow = extract_sif(u, wide).kappa, extract_sif(u, narrow).kappa
    assert abs(k_narrow - k_wide) <= 0.02 * abs(k_wide)


def test_fitted_kappa_is_linear_in_the_load(coarse_slit_disk):
    mesh, bp, slit = coarse_slit_disk
    frame = _frame(mesh, slit)
    g = mode3_field(mesh.nodes, ORIGIN, AHEAD)
    full, _ = evaluate_crack(mesh, bp, g, slit, backend="direct")
    scaled, _ = evaluate_crack(mesh, bp, 0.37 * g, slit, backend="direct")
    assert math.isclose(extract_sif(scaled, frame).kappa, 0.37 * extract_sif(full, frame).kappa, rel_tol=1e-6)


def test_kappa_sign_follows_the_tip_tangent(coarse_slit_disk):
    mesh = coarse_slit_disk[0]
    slit = straight_path(mesh, (1.0, 0.0), ORIGIN)
    frame = _frame(mesh, slit)
    assert np.allclose(frame.tangent, (-1.0, 0.0))
    cm = split_mesh(mesh, slit)

    # mode III field written with theta measured from +y toward the slit, i.e. the mirror image
    x, y = mesh.nodes[cm.dof_nodes].T
    centroids = mesh.nodes[mesh.triangles].mean(axis=1)
    side = np.zeros(cm.n_dofs)
    np.add.at(side, cm.triangle_dofs.ravel(), np.repeat(centroids[:, 1], 3))
    theta = np.arctan2(y, -x)
    on_slit = (np.abs(y) <= 1e-9) & (x > 0)
    theta[on_slit] = np.where(side[on_slit] >= 0, np.pi, -np.pi)
    mirror = DisplacementField(cm, np.sqrt(2.0 * np.hypot(x, y) / np.pi) * np.sin(0.5 * theta))

    assert math.isclose(extract_sif(mirror, frame).kappa, -1.0, rel_tol=1e-8)
    assert math.isclose(extract_sif(analytic_field(cm, ORIGIN, (-1.0, 0.0)), frame).kappa, 1.0, rel_tol=1e-8)


def _surfing_config():
    return parse_config(
        {
            "mesh": {"kind": "rect", "width": 1.0, "height": 1.0, "h": 0.03125},
            "load": {
                "kind": "surfing",
                "field": {"kind": "mode3", "tip": [0.375, 0.5], "tangent": [1.0, 0.0]},
                "velocity": [0.125, 0.0],
                "samples": 5,
            },
            "initial_crack": {"kind": "segment", "start": [0.0, 0.5], "end": [0.375, 0.5]},
            "delta": 0.25,
            "strategy": {"kind": "greedy", "depth": 1},
        }
    )


def test_surfing_load_moves_the_tip():
    problem = _surfing_config().build_problem()
    nodes = problem.mesh.nodes
    for t in (0.0, 0.5, 1.0):
        expected = mode3_field(nodes, (0.375 + 0.125 * t, 0.5), AHEAD)
        assert np.allclose(problem.load.at(t), expected, atol=1e-12)


def test_surfing_crack_grows_straight_at_critical_kappa():
    config = _surfing_config()
    problem = config.build_problem()
    strategy = config.strategy.build()
    records = run(
        problem.mesh, problem.partition, problem.load, problem.initial_crack, config.build_schedule(), strategy,
        verbose=False,
    )
    report = griffith_audit(records, problem.mesh, problem.partition, problem.load, initial_crack=problem.initial_crack)
    assert report.unclassifiable == []
    assert report.unresolved == []
    assert (report.table["status"] == "growth").sum() >= 2
    assert report.passed

    final = records[-1].crack
    ends = problem.mesh.nodes[problem.mesh.edges[list(final.edge_tuple)]]
    assert np.allclose(ends[:, :, 1], 0.5)
    assert final.n_edges > problem.initial_crack.n_edges
