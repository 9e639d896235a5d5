import numpy as np
import pytest

from igmcmc.errors import InputError
from igmcmc.geometry import SearchSubspace, SphereRestriction, isotropic_subspace
from igmcmc.manifold import affine_plane, eval_constraint, sphere
from igmcmc.solver import (SolverConfig, dedup, find_points, newton_on_sphere,
                           sample_intersection_point, solve_intersection)


def test_config_validation():
    for bad in ({"max_iters": 0}, {"residual_tol": 0.0}, {"step_damping": 1.5},
                {"max_restarts": 0}, {"stagnation_window": 0}):
        with pytest.raises(InputError):
            SolverConfig(**bad)


def test_solution_lies_on_all_three_sets():
    rng = np.random.default_rng(0)
    m = sphere(5, 1.0, center=[0.3, 0, 0, 0, 0])
    S = isotropic_subspace(5, 3, np.zeros(5), rng)
    sph = SphereRestriction(np.zeros(5), 1.0)
    p = solve_intersection(m, S, sph, SolverConfig(), rng)
    assert p is not None
    assert np.linalg.norm(eval_constraint(m, p.x)) < 1e-10
    assert np.linalg.norm(p.x) == pytest.approx(1.0)
    assert np.allclose(S.basis @ (S.basis.T @ p.x), p.x)


def test_no_intersection_returns_none_quickly():
    # plane x_0 = 5 never meets the unit sphere; stagnation stops each start early
    m = affine_plane([[1.0, 0, 0, 0]], [5.0])
    rng = np.random.default_rng(1)
    S = isotropic_subspace(4, 2, np.zeros(4), rng)
    sph = SphereRestriction(np.zeros(4), 1.0)
    assert solve_intersection(m, S, sph, SolverConfig(max_restarts=3), rng) is None
    res = newton_on_sphere(m, S, sph, np.array([1.0, 0.0]), SolverConfig(max_iters=1000))
    assert res is None


def test_sphere_center_must_lie_in_subspace():
    m = sphere(3)
    S = SearchSubspace(np.eye(3)[:, :2], np.zeros(3))
    with pytest.raises(InputError):
        solve_intersection(m, S, SphereRestriction(np.array([0, 0, 1.0]), 1.0), SolverConfig(),
                           np.random.default_rng(0))


def test_find_points_dedups_and_selection_is_weighted():
    # circle x_0^2 + x_1^2 = 1 intersected with a sphere about (1, 0): two points
    m = sphere(2, 1.0)
    S = SearchSubspace(np.eye(2), np.array([1.0, 0.0]))
    sph = SphereRestriction(np.array([1.0, 0.0]), 1.0)
    rng = np.random.default_rng(2)
    pts = find_points(m, S, sph, 20, SolverConfig(), rng)
    assert len(pts) == 2
    assert len(dedup(pts + pts, 1e-6)) == 2
    up = lambda x: 1.0 if x[1] > 0 else 1e-12
    picks = [sample_intersection_point(m, S, sph, up, 10, rng).x[1] > 0 for _ in range(20)]
    assert all(picks)
