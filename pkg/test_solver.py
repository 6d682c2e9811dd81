"""
Tests for solver.py: node splitting, equilibrium solves, energies, load traces
"""
import math

import numpy as np
import pytest

import solver
from crack import CrackSet, straight_path
from domain import NEUMANN, BoundaryInterval, assign_boundary, build_disk_mesh, build_rect_mesh, nodal_gradients
from errors import InvalidCrackError, InvalidLoadError, InvalidReferenceError, NumericalFailureError
from sif import mode3_field
from solver import (
    SPLIT_CACHE_SIZE,
    DisplacementField,
    LoadTrace,
    _split_mesh,
    boundary_power,
    bulk_energy,
    clear_split_cache,
    constrained_dofs,
    evaluate_crack,
    solve_equilibrium,
    split_mesh,
    total_energy,
    transfer_field,
    work_rate,
)


def _dirichlet_everywhere(mesh):
    return assign_boundary(mesh, [BoundaryInterval(0.0, 1.0, "dirichlet")])


def test_split_counts(square, vertical_cut):
    assert split_mesh(square, CrackSet.empty()).n_dofs == square.n_nodes

    slit = CrackSet.from_node_pairs(square, [(11, 12), (12, 13)])
    cm = split_mesh(square, slit)
    assert cm.n_dofs == square.n_nodes + 1
    assert cm.split_nodes.tolist() == [12]

    # three interior nodes and both boundary ends of the x = 0.5 line
    cut = split_mesh(square, vertical_cut)
    assert cut.n_dofs == square.n_nodes + 5
    assert cut.split_nodes.tolist() == [2, 7, 12, 17, 22]


def test_branch_node_gets_one_dof_per_sector(square):
    tee = CrackSet.from_node_pairs(square, [(11, 12), (12, 13), (12, 17)])
    cm = split_mesh(square, tee)
    assert cm.n_dofs == square.n_nodes + 2
    assert sorted(cm.dof_sides[cm.dof_nodes == 12].tolist()) == [0, 1, 2]


def test_split_rejects_disconnected_crack(square):
    with pytest.raises(InvalidCrackError):
        split_mesh(square, CrackSet.from_node_pairs(square, [(0, 1), (23, 24)]))


def test_linear_data_is_reproduced(square, all_dirichlet):
    x = square.nodes[:, 0]
    u, energies = evaluate_crack(square, all_dirichlet, x, CrackSet.empty())
    assert np.allclose(u.values, x, atol=1e-10)
    assert abs(energies.bulk - 1.0) <= 1e-10
    assert energies.surface == 0.0
    assert energies.total == energies.bulk


def test_linear_data_on_finer_mesh():
    mesh = build_rect_mesh(1.0, 1.0, 1.0 / 32)
    energies = total_energy(mesh, _dirichlet_everywhere(mesh), mesh.nodes[:, 0], CrackSet.empty())
    assert abs(energies.bulk - 1.0) <= 1e-10


def test_full_cut_decouples(square, left_right, vertical_cut, step_load):
    u, energies = evaluate_crack(square, left_right, step_load, vertical_cut)
    assert energies.bulk <= 1e-10
    assert abs(energies.total - 1.0) <= 1e-12 + energies.bulk
    assert energies.surface == 1.0
    left = square.nodes[u.cracked_mesh.dof_nodes, 0] < 0.5
    assert np.allclose(u.values[left], 0.0, atol=1e-10)


def test_bulk_energy_of_simple_fields(square):
    cm = split_mesh(square, CrackSet.empty())
    x, y = square.nodes[:, 0], square.nodes[:, 1]
    assert bulk_energy(DisplacementField(cm, np.full(square.n_nodes, 3.0))) == 0.0
    assert math.isclose(bulk_energy(DisplacementField(cm, x)), 1.0, rel_tol=1e-12)
    assert math.isclose(bulk_energy(DisplacementField(cm, x + y)), 2.0, rel_tol=1e-12)


def test_zero_load_costs_only_length(square, all_dirichlet):
    crack = straight_path(square, (0.25, 0.25), (0.75, 0.75))
    energies = total_energy(square, all_dirichlet, np.zeros(square.n_nodes), crack)
    assert energies.bulk == 0.0
    assert energies.total == energies.surface
    assert math.isclose(energies.surface, math.sqrt(0.5))


def test_work_rate(square, all_dirichlet, left_right, vertical_cut):
    x = square.nodes[:, 0]
    t = 0.5
    u, _ = evaluate_crack(square, all_dirichlet, t * x, CrackSet.empty())
    assert math.isclose(work_rate(u, x), 2.0 * t, rel_tol=1e-9)
    assert work_rate(u, np.zeros(square.n_nodes)) == 0.0

    cut, _ = evaluate_crack(square, left_right, np.where(x > 0.5, 1.0, 0.0), vertical_cut)
    assert abs(work_rate(cut, x)) <= 1e-9
    with pytest.raises(InvalidCrackError):
        work_rate(u, x, crack=vertical_cut)


def test_boundary_power_matches_work_rate(square, all_dirichlet):
    rng = np.random.default_rng(3)
    g, gdot = rng.normal(size=square.n_nodes), rng.normal(size=square.n_nodes)
    u = solve_equilibrium(split_mesh(square, CrackSet.empty()), all_dirichlet, g, backend="direct")
    assert math.isclose(boundary_power(u, all_dirichlet, gdot), work_rate(u, gdot), rel_tol=1e-9, abs_tol=1e-9)


def test_compliance_bound_and_crack_monotonicity(square, left_right):
    rng = np.random.default_rng(7)
    small = straight_path(square, (0.5, 0.0), (0.5, 0.5))
    large = straight_path(square, (0.5, 0.0), (0.5, 0.75))
    for _ in range(5):
        g = rng.normal(size=square.n_nodes)
        grad = nodal_gradients(square, g)
        bound = float(np.dot(square.areas, np.einsum("td,td->t", grad, grad)))
        bulk_small = total_energy(square, left_right, g, small).bulk
        bulk_large = total_energy(square, left_right, g, large).bulk
        assert bulk_small <= bound + 1e-12
        assert bulk_large <= bulk_small + 1e-10


def test_solution_is_linear_in_the_load(square, left_right):
    rng = np.random.default_rng(11)
    crack = straight_path(square, (0.5, 0.0), (0.5, 0.5))
    cm = split_mesh(square, crack)
    g1, g2 = rng.normal(size=square.n_nodes), rng.normal(size=square.n_nodes)
    u1 = solve_equilibrium(cm, left_right, g1, backend="direct")
    u2 = solve_equilibrium(cm, left_right, g2, backend="direct")
    u12 = solve_equilibrium(cm, left_right, 2.0 * g1 - 0.5 * g2, backend="direct")
    assert np.allclose(u12.gradients, 2.0 * u1.gradients - 0.5 * u2.gradients, atol=1e-9)


def test_galerkin_orthogonality(square, left_right):
    rng = np.random.default_rng(5)
    cm = split_mesh(square, straight_path(square, (0.5, 0.0), (0.5, 0.5)))
    u = solve_equilibrium(cm, left_right, rng.normal(size=square.n_nodes), backend="direct")
    fixed = constrained_dofs(cm, left_right)
    for _ in range(5):
        z = rng.normal(size=cm.n_dofs)
        z[fixed] = 0.0
        assert abs(z @ (cm.stiffness @ u.values)) <= 1e-9


def test_manufactured_harmonic_energy_converges():
    errors = []
    for n in (4, 8, 16):
        mesh = build_rect_mesh(1.0, 1.0, 1.0 / n)
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        bp = _dirichlet_everywhere(mesh)
        energies = total_energy(mesh, bp, x ** 2 - y ** 2, CrackSet.empty(), backend="direct")
        errors.append(abs(energies.bulk - 8.0 / 3.0))
    rates = [math.log2(a / b) for a, b in zip(errors, errors[1:])]
    assert min(rates) >= 1.8


def test_slit_disk_energy_improves_with_refinement():
    errors = []
    for h in (1.0 / 8, 1.0 / 16):
        mesh = build_disk_mesh(1.0, h)
        slit = straight_path(mesh, (-1.0, 0.0), (0.0, 0.0))
        g = mode3_field(mesh.nodes, (0.0, 0.0), (1.0, 0.0))
        energies = total_energy(mesh, _dirichlet_everywhere(mesh), g, slit, backend="direct")
        errors.append(abs(energies.bulk - 1.0))
    assert errors[1] < errors[0]


def test_crack_edge_releases_dirichlet_nodes(square, all_dirichlet):
    on_boundary = CrackSet.from_node_pairs(square, [(1, 2)])
    mask = constrained_dofs(split_mesh(square, on_boundary), all_dirichlet)
    assert not mask[1] and not mask[2]
    assert mask[0] and mask[3]

    seed = CrackSet.at_node(square, 2)
    assert constrained_dofs(split_mesh(square, seed), all_dirichlet)[2]


def test_point_crack_leaves_the_energy_unchanged(square, all_dirichlet):
    g = square.nodes[:, 0] ** 2
    assert math.isclose(
        total_energy(square, all_dirichlet, g, CrackSet.at_node(square, 12)).total,
        total_energy(square, all_dirichlet, g, CrackSet.empty()).total,
        rel_tol=1e-12,
    )


def test_floating_components_are_zero(square):
    free = assign_boundary(square, [BoundaryInterval(0.0, 1.0, NEUMANN)])
    u, energies = evaluate_crack(square, free, square.nodes[:, 0], CrackSet.empty())
    assert np.all(u.values == 0.0)
    assert energies.bulk == 0.0


def test_bad_loads_and_partitions(square, all_dirichlet):
    cm = split_mesh(square, CrackSet.empty())
    with pytest.raises(InvalidLoadError):
        solve_equilibrium(cm, all_dirichlet, np.zeros(3))
    with pytest.raises(InvalidLoadError):
        solve_equilibrium(cm, all_dirichlet, np.full(square.n_nodes, np.nan))
    other = build_rect_mesh(1.0, 1.0, 0.25)
    with pytest.raises(InvalidReferenceError):
        solve_equilibrium(split_mesh(other, CrackSet.empty()), all_dirichlet, np.zeros(other.n_nodes))


def test_iteration_cap_raises_numerical_failure(square, all_dirichlet):
    g = np.random.default_rng(2).normal(size=square.n_nodes)
    with pytest.raises(NumericalFailureError) as info:
        solve_equilibrium(split_mesh(square, CrackSet.empty()), all_dirichlet, g, maxiter=1)
    assert info.value.residual > 0


def test_solve_above_the_compliance_bound_raises(square, all_dirichlet, monkeypatch):
    # zero interior values cost more than the harmonic load g = x itself
    monkeypatch.setattr(solver, "_solve_reduced", lambda matrix, rhs, *args, **kwargs: np.zeros(len(rhs)))
    with pytest.raises(NumericalFailureError) as info:
        solve_equilibrium(split_mesh(square, CrackSet.empty()), all_dirichlet, square.nodes[:, 0])
    assert info.value.residual > 0


def test_warm_start_from_a_smaller_crack(square, left_right):
    g = np.random.default_rng(5).normal(size=square.n_nodes)
    small = split_mesh(square, straight_path(square, (0.5, 0.0), (0.5, 0.5)))
    large = split_mesh(square, straight_path(square, (0.5, 0.0), (0.5, 0.75)))
    guess = solve_equilibrium(small, left_right, g, backend="direct")
    assert np.array_equal(transfer_field(guess, small), guess.values)

    warm = solve_equilibrium(large, left_right, g, rtol=1e-12, guess=guess)
    exact = solve_equilibrium(large, left_right, g, backend="direct")
    assert np.allclose(warm.values, exact.values, atol=1e-8)


def test_split_cache_is_bounded_and_clearable(square, vertical_cut):
    assert _split_mesh.cache_info().maxsize == SPLIT_CACHE_SIZE
    split_mesh(square, vertical_cut)
    assert _split_mesh.cache_info().currsize >= 1
    clear_split_cache()
    assert _split_mesh.cache_info().currsize == 0


def test_displacement_dump_records(square, left_right, vertical_cut, step_load):
    u, _ = evaluate_crack(square, left_right, step_load, vertical_cut)
    records = u.to_records()
    assert len(records) == square.n_nodes + 5
    assert {side for _, side, _ in records} == {0, 1}


def test_load_trace_sampling(square):
    shape = square.nodes[:, 0]
    load = LoadTrace.separable([0.0, 0.5, 1.0], [0.0, 1.0, 1.5], shape)
    assert load.is_separable
    assert np.array_equal(load.at(0.5), shape)
    assert np.allclose(load.at(0.75), 1.25 * shape)
    assert np.allclose(load.rate(0.25), 2.0 * shape)
    assert np.allclose(load.rate(1.0), 1.0 * shape)
    assert math.isclose(load.gradient_variation(square, 0.0, 1.0), 1.5)
    assert math.isclose(load.max_gradient_norm(square), 1.5)

    table = LoadTrace.from_samples([0.0, 1.0], np.stack([np.zeros(square.n_nodes), shape]))
    assert not table.is_separable
    assert np.allclose(table.at(0.25), 0.25 * shape)


def test_load_trace_rejects_bad_times(square):
    values = np.zeros((2, square.n_nodes))
    with pytest.raises(InvalidLoadError):
        LoadTrace.from_samples([0.0, 0.9], values)
    with pytest.raises(InvalidLoadError):
        LoadTrace.from_samples([0.0, 0.5, 0.5, 1.0], np.zeros((4, square.n_nodes)))
