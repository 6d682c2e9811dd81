import numpy as np
import pytest

from crack import straight_path
from domain import DIRICHLET, NEUMANN, BoundaryInterval, assign_boundary, build_rect_mesh, rect_side_intervals


@pytest.fixture
def square():
    """Unit square at h = 0.25: 25 nodes, 32 triangles, 56 edges"""
    return build_rect_mesh(1.0, 1.0, 0.25)


@pytest.fixture
def all_dirichlet(square):
    return assign_boundary(square, [BoundaryInterval(0.0, 1.0, DIRICHLET)])


@pytest.fixture
def left_right(square):
    """Dirichlet on the left and right sides, Neumann on top and bottom"""
    sides = {"left": DIRICHLET, "right": DIRICHLET, "top": NEUMANN, "bottom": NEUMANN}
    return assign_boundary(square, rect_side_intervals(1.0, 1.0, sides))


@pytest.fixture
def vertical_cut(square):
    return straight_path(square, (0.5, 0.0), (0.5, 1.0))


@pytest.fixture
def step_load(square):
    """0 on the left half, 1 on the right half"""
    return np.where(square.nodes[:, 0] > 0.5, 1.0, 0.0)


@pytest.fixture
def crossover_config():
    return {
        "mesh": {"kind": "rect", "width": 1.0, "height": 1.0, "h": 0.25},
        "boundary": {"sides": {"left": "dirichlet", "right": "dirichlet", "top": "neumann", "bottom": "neumann"}},
        "load": {"kind": "separable", "field": {"kind": "affine", "cx": 2.0}},
        "initial_crack": {"kind": "segment", "start": [0.5, 0.0], "end": [0.5, 0.25]},
        "delta": 0.25,
        "strategy": {"kind": "brute", "budget": 3},
    }


@pytest.fixture
def zero_config():
    return {
        "mesh": {"kind": "rect", "width": 1.0, "height": 1.0, "h": 0.25},
        "load": {"kind": "zero"},
        "delta": 0.25,
        "strategy": {"kind": "brute", "budget": 1},
    }