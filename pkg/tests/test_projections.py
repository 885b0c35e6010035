import itertools

import numpy as np
import pytest
from sklearn.pipeline import Pipeline

from projdiff.core import ConfigurationError, DimensionError, RngStream
from projdiff.projections import (BallConstraint, BoxConstraint,
                                  ConvergenceError, HalfspaceConstraint, IdentityConstraint,
                                  IntersectionConstraint, ObjectPlacementConstraint,
                                  PorosityConstraint, ProjectionError, RowwiseConstraint,
                                  TrajectoryConstraint, disc_mask, project_affine, project_ball,
                                  project_box, project_halfspace, project_intersection_dykstra,
                                  project_object_position, project_porosity, project_trajectory)

# midpoint height for a straight 3-point path through a unit obstacle (margin 0.02),
# from a 601 x 40001 grid search over midpoint positions under segment clearance
TRAJECTORY_MIDPOINT_ORACLE = 1.18581


# ------------------------------------------------------------------ convex sets

def test_box_examples():
    np.testing.assert_array_equal(project_box(-1, 1, [2.0, -3.0, 0.5]), [1.0, -1.0, 0.5])
    x = np.array([0.2, -0.9, 0.0])
    np.testing.assert_array_equal(project_box(-1, 1, x), x)
    y = project_box(-1, 1, [5.0, 0.3, -7.0])
    np.testing.assert_array_equal(project_box(-1, 1, y), y)
    with pytest.raises(ConfigurationError):
        project_box([0, 1], [1, 0], [0.5, 0.5])


def test_ball_examples():
    np.testing.assert_allclose(project_ball(0.0, 1.0, [3.0, 4.0]), [0.6, 0.8])
    np.testing.assert_array_equal(project_ball(0.0, 1.0, [0.5, 0.0]), [0.5, 0.0])
    np.testing.assert_array_equal(project_ball([1.0, 2.0], 0.5, [1.0, 2.0]), [1.0, 2.0])


def test_halfspace_examples():
    np.testing.assert_array_equal(project_halfspace([1, 0], 1, [2.0, 0.0]), [1.0, 0.0])
    np.testing.assert_array_equal(project_halfspace([0, 1], 2, [3.0, 4.0]), [3.0, 2.0])
    np.testing.assert_array_equal(project_halfspace([1, 1], 5, [1.0, 1.0]), [1.0, 1.0])
    with pytest.raises(ConfigurationError):
        project_halfspace([0, 0], 1, [1.0, 1.0])


def test_affine_examples():
    np.testing.assert_allclose(project_affine([[1, 1]], [1], [0.0, 0.0]), [0.5, 0.5])
    x = np.array([0.25, 0.75])
    np.testing.assert_allclose(project_affine([[1, 1]], [1], x), x, atol=1e-12)
    with pytest.raises(np.linalg.LinAlgError):
        project_affine([[1, 1], [2, 2]], [1, 2], [0.0, 0.0])


def test_affine_against_minimum_norm_oracle():
    rng = RngStream(11)
    A, b, x = rng.normal((2, 4)), rng.normal(2), rng.normal(4)
    # minimum-norm correction d solving A d = b - A x
    d, *_ = np.linalg.lstsq(A, b - A @ x, rcond=None)
    np.testing.assert_allclose(project_affine(A, b, x), x + d, atol=1e-12)


# ---------------------------------------------------------------------- Dykstra

def unit_simplex_box():
    return [BoxConstraint(0.0, 1.0), HalfspaceConstraint([1.0, 1.0], 1.0)]


def grid_argmin(x, n=1001):
    g = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(g, g)
    cost = np.where(X + Y <= 1 + 1e-12, (X - x[0]) ** 2 + (Y - x[1]) ** 2, np.inf)
    k = np.unravel_index(np.argmin(cost), cost.shape)
    return np.array([X[k], Y[k]])


@pytest.mark.parametrize("x,expected", [((2.0, 2.0), (0.5, 0.5)), ((1.5, -0.5), (1.0, 0.0))])
def test_dykstra_against_grid_oracle(x, expected):
    y = project_intersection_dykstra(unit_simplex_box(), np.array(x))
    np.testing.assert_allclose(y, expected, atol=1e-8)
    np.testing.assert_allclose(y, grid_argmin(x), atol=1e-3)


def test_dykstra_keeps_interior_point():
    x = np.array([0.2, 0.3])
    np.testing.assert_allclose(project_intersection_dykstra(unit_simplex_box(), x), x, atol=1e-15)


def test_dykstra_nonconvergence_carries_residual():
    with pytest.raises(ConvergenceError) as info:
        project_intersection_dykstra(unit_simplex_box(), np.array([5.0, 3.0]), max_iter=1, tol=0.0)
    assert info.value.best is not None and info.value.max_violation >= 0


def test_dykstra_rejects_nonconvex_member():
    with pytest.raises(ConfigurationError):
        IntersectionConstraint([BoxConstraint(), PorosityConstraint(1)]).project(np.zeros(3))


# --------------------------------------------------------------------- porosity

def brute_force_porosity(x, k, tau=0.0, delta=1e-3):
    """Cheapest set of flips leaving exactly k entries below tau."""
    best, best_cost = None, np.inf
    n = len(x)
    for r in range(n + 1):
        for flips in itertools.combinations(range(n), r):
            y = x.copy()
            for j in flips:
                y[j] = tau + delta if x[j] < tau else tau - delta
            if np.count_nonzero(y < tau) == k:
                cost = np.sum((y - x) ** 2)
                if cost < best_cost - 1e-15:
                    best, best_cost = y, cost
    return best


@pytest.mark.parametrize("k,expected", [(1, [-0.5, 1e-3, 0.2, 0.6]), (3, [-0.5, -0.1, -1e-3, 0.6])])
def test_porosity_examples(k, expected):
    x = np.array([-0.5, -0.1, 0.2, 0.6])
    y = project_porosity(PorosityConstraint(k), x)
    np.testing.assert_allclose(y, expected)
    np.testing.assert_allclose(y, brute_force_porosity(x, k))


def test_porosity_random_against_brute_force():
    rng = RngStream(8)
    for _ in range(30):
        x = rng.uniform(-1, 1, 7)
        k = int(rng.integers(0, 8))
        np.testing.assert_allclose(PorosityConstraint(k).project(x), brute_force_porosity(x, k))


def test_porosity_unchanged_at_target_and_errors():
    x = np.array([-0.5, 0.3, -0.2])
    np.testing.assert_array_equal(PorosityConstraint(2).project(x), x)
    with pytest.raises(ConfigurationError):
        PorosityConstraint(4).project(x)


# ------------------------------------------------------------- object placement

def blank(h=12, w=12, frames=1):
    return np.ones((frames, h, w))


def test_object_moved_to_target_column():
    frames = blank()
    frames[0, 5, 4:7] = -1.0
    frames[0, 4:7, 5] = -1.0
    c = ObjectPlacementConstraint((1, 12, 12), [[5, 9]])
    out = project_object_position(c, frames.ravel()).reshape(1, 12, 12)
    assert np.all(out[0, 3:8, 3:8][:, :3] == 1.0)
    assert set(map(tuple, np.argwhere(out[0] < 0))) == {(5, 8), (5, 9), (5, 10), (4, 9), (6, 9)}
    assert c.is_feasible(out.ravel())


def test_object_idempotent_on_feasible_frame():
    frames = blank()
    frames[0, 3, 3] = -1.0
    c = ObjectPlacementConstraint((1, 12, 12), [[3, 3]])
    np.testing.assert_array_equal(c.project(frames.ravel()), frames.ravel())


def test_cross_mask_moved_against_hand_built_frame():
    cross = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)]
    frames = blank(10, 10)
    for dr, dc in cross:
        frames[0, 4 + dr, 4 + dc] = -0.8
    c = ObjectPlacementConstraint((1, 10, 10), [[5, 6]])
    expected = blank(10, 10)
    for dr, dc in cross:
        expected[0, 5 + dr, 6 + dc] = -0.8
    np.testing.assert_array_equal(c.project(frames.ravel()), expected.ravel())


def test_missing_object_gets_template_and_bounds_checked():
    c = ObjectPlacementConstraint((2, 8, 8), [[2, 2], [4, 4]], mask=disc_mask(1.0))
    out = c.project(np.ones(128))
    assert c.is_feasible(out)
    with pytest.raises(ConfigurationError):
        ObjectPlacementConstraint((1, 8, 8), [[9, 0]]).project(np.ones(64))


# ------------------------------------------------------------------ trajectories

def unit_obstacle(**kw):
    return TrajectoryConstraint([[0.0, 0.0]], [1.0], (-2.0, 0.0), (2.0, 0.0), n_points=3, **kw)


@pytest.mark.parametrize("method", ["slsqp", "auglag"])
def test_trajectory_midpoint_against_grid_oracle(method):
    c = unit_obstacle(method=method)
    y = project_trajectory(c, np.array([-2.0, 0.0, 0.0, 0.0, 2.0, 0.0])).reshape(3, 2)
    np.testing.assert_allclose(y[0], (-2, 0))
    np.testing.assert_allclose(y[2], (2, 0))
    assert y[1, 0] == pytest.approx(0.0, abs=1e-6)
    assert y[1, 1] == pytest.approx(TRAJECTORY_MIDPOINT_ORACLE, abs=1e-4)
    assert c.is_feasible(y.ravel(), 1e-6)


def test_clear_path_unchanged_and_far_obstacle_costs_nothing():
    c = TrajectoryConstraint([[5.0, 5.0]], [0.5], (0.0, 0.0), (1.0, 0.0), n_points=4)
    path = np.array([0.0, 0.0, 0.3, 0.1, 0.6, -0.1, 1.0, 0.0])
    np.testing.assert_allclose(c.project(path), path, atol=1e-9)
    assert c.distance_sq(path) == 0.0


def test_endpoints_pinned():
    c = TrajectoryConstraint([[0.5, 0.0]], [0.2], (0.0, 0.0), (1.0, 0.0), n_points=5)
    y = c.project(np.zeros(10)).reshape(5, 2)
    np.testing.assert_array_equal(y[0], (0, 0))
    np.testing.assert_array_equal(y[-1], (1, 0))


def test_start_inside_obstacle_is_infeasible():
    c = TrajectoryConstraint([[0.0, 0.0]], [1.0], (0.1, 0.0), (3.0, 0.0), n_points=4)
    with pytest.raises(ProjectionError):
        c.project(np.zeros(8))


def test_batch_with_per_row_endpoints():
    starts = np.array([[-2.0, 0.0], [-2.0, 0.5]])
    goals = np.array([[2.0, 0.0], [2.0, -0.5]])
    c = TrajectoryConstraint([[0.0, 0.0]], [0.8], starts, goals, n_points=6)
    line = np.stack([np.linspace(s, g, 6).ravel() for s, g in zip(starts, goals)])
    Y = c.project(line)
    assert np.all(c.is_feasible(Y, 1e-6))
    np.testing.assert_allclose(Y.reshape(2, 6, 2)[:, 0], starts)


def test_warm_start_only_used_through_solver():
    c = unit_obstacle()
    z = np.array([-2.0, 0.0, 0.0, 0.0, 2.0, 0.0])
    warm = np.array([-2.0, 0.0, 0.0, 3.0, 2.0, 0.0])
    y, viol = c.project_with_status(z, warm_start=warm)
    # the solve from z succeeds, so the warm start plays no part
    np.testing.assert_allclose(y, c.project(z), atol=1e-9)
    assert viol <= 1e-12


# ------------------------------------------------------------------- plumbing

def test_rowwise_applies_one_constraint_per_row():
    c = RowwiseConstraint([BoxConstraint(0, 1), BallConstraint(0.0, 1.0)])
    Y = c.project(np.array([[2.0, -1.0], [3.0, 4.0]]))
    np.testing.assert_allclose(Y, [[1.0, 0.0], [0.6, 0.8]])
    with pytest.raises(DimensionError):
        c.project(np.zeros((3, 2)))


def test_constraints_are_sklearn_transformers():
    pipe = Pipeline([("proj", BoxConstraint(0.0, 1.0))])
    np.testing.assert_array_equal(pipe.fit_transform(np.array([[2.0, -1.0]])), [[1.0, 0.0]])
    assert BallConstraint(radius=2.0).get_params()["radius"] == 2.0


def test_identity_and_distance_identity():
    x = np.array([[1.0, 2.0], [-3.0, 0.5]])
    np.testing.assert_array_equal(IdentityConstraint().project(x), x)
    c = HalfspaceConstraint([1.0, 0.0], 0.0)
    np.testing.assert_allclose(c.distance_sq(x), np.sum((c.project(x) - x) ** 2, axis=1))
