import numpy as np
import pytest

import dlfmkit as dk
from dlfmkit import kernels, model, oracle


def random_qp(rng, n, m):
    """Strictly convex QP with finite box rows around a feasible anchor."""
    B = rng.normal(size=(n, n))
    P = B @ B.T + np.eye(n)
    q = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    mid = A @ rng.normal(size=n)  # anchor keeps the row boxes consistent
    half = np.abs(rng.normal(size=m)) + 0.1
    return dk.qp_problem(P=P, q=q, A=A, lo=mid - half, hi=mid + half)


def qp_objective(prob, x):
    return 0.5 * x @ prob.P @ x + prob.q @ x


class TestQpSolve:
    def test_unconstrained(self):
        # no rows: plain linear solve, P x = -q
        prob = dk.qp_problem(P=2.0 * np.eye(2), q=np.array([-4.0, 2.0]),
                             A=np.zeros((0, 2)), lo=np.zeros(0), hi=np.zeros(0))
        sol = dk.qp_solve(prob)
        assert sol.status == kernels.SOLVED
        assert np.allclose(sol.x, [2.0, -1.0], atol=1e-8)

    def test_equality_row(self):
        prob = dk.qp_problem(P=2.0 * np.eye(2), q=np.array([-2.0, 0.0]),
                             A=np.array([[1.0, 1.0]]), lo=np.array([1.0]),
                             hi=np.array([1.0]))
        sol = dk.qp_solve(prob)
        assert sol.status == kernels.SOLVED
        assert np.allclose(sol.x, [1.0, 0.0], atol=1e-6)

    def test_matches_active_set_oracle(self):
        rng = np.random.default_rng(42)
        for trial in range(50):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 7))
            prob = random_qp(rng, n, m)
            ref = dk.qp_active_set_oracle(prob)
            sol = dk.qp_solve(prob)
            assert sol.status == kernels.SOLVED, f"trial {trial}"
            gap = qp_objective(prob, sol.x) - qp_objective(prob, ref)
            assert gap <= 1e-6 * max(1.0, abs(qp_objective(prob, ref))), f"trial {trial}"
            assert np.allclose(sol.x, ref, atol=1e-4), f"trial {trial}"

    def test_detects_infeasible(self):
        # x >= 1 and x <= -1 cannot hold
        prob = dk.qp_problem(P=np.eye(1), q=np.zeros(1),
                             A=np.array([[1.0], [1.0]]),
                             lo=np.array([1.0, -np.inf]),
                             hi=np.array([np.inf, -1.0]))
        sol = dk.qp_solve(prob)
        assert sol.status == kernels.PRIMAL_INFEASIBLE

    def test_workspace_reuse_same_answer(self):
        rng = np.random.default_rng(5)
        prob = random_qp(rng, 3, 4)
        ws = kernels.QpWorkspace()
        first = dk.qp_solve(prob, workspace=ws)
        again = dk.qp_solve(prob, workspace=ws)
        assert first.status == kernels.SOLVED
        assert np.allclose(first.x, again.x, atol=1e-7)


class TestPava:
    def test_nondecreasing_pools(self):
        out = kernels.pava_nondecreasing(np.array([3.0, 1.0, 2.0]))
        assert np.allclose(out, [2.0, 2.0, 2.0])

    def test_nondecreasing_partial(self):
        out = kernels.pava_nondecreasing(np.array([1.0, 3.0, 2.0]))
        assert np.allclose(out, [1.0, 2.5, 2.5])

    def test_nonincreasing_mirror(self):
        v = np.array([0.5, 2.0, -1.0, 0.0])
        out = kernels.pava_nonincreasing(v)
        assert np.all(np.diff(out) <= 1e-12)
        # mirror identity: nonincreasing fit is the reversed nondecreasing fit
        ref = kernels.pava_nondecreasing(v[::-1])[::-1]
        assert np.allclose(out, ref)

    def test_sorted_input_unchanged(self):
        v = np.array([-1.0, 0.0, 2.0, 7.0])
        assert np.allclose(kernels.pava_nondecreasing(v), v)


class TestProjectSimplex:
    def test_interior_point_unchanged(self):
        v = np.array([0.2, 0.3, 0.5])
        assert np.allclose(kernels.project_simplex(v, 1.0), v)

    def test_symmetric(self):
        assert np.allclose(kernels.project_simplex(np.array([2.0, 2.0]), 1.0),
                           [0.5, 0.5])

    def test_matches_qp(self):
        rng = np.random.default_rng(9)
        atoms = (model.sum_equals(1.0), model.nonneg())
        for _ in range(40):
            n = int(rng.integers(2, 6))
            v = rng.normal(0, 2, n)
            fast = kernels.project_simplex(v, 1.0)
            rows = [a for a in atoms]
            slow = kernels._project_rows(v.astype(float),
                                         *kernels.stack_rows(rows, n), 1e-12, None)
            assert np.allclose(fast, slow, atol=1e-5)


class TestProject:
    def test_box_clip(self):
        atom = model.box(np.array([0.0, -1.0]), np.array([1.0, 1.0]))
        out = dk.project((atom,), np.array([2.0, -3.0]))
        assert np.allclose(out, [1.0, -1.0])

    def test_feasible_point_identical(self):
        atom = model.nonneg()
        v = np.array([0.5, 2.0])
        out = dk.project((atom,), v)
        assert out is v or np.array_equal(out, v)

    def test_idempotent(self):
        rng = np.random.default_rng(13)
        atoms = (model.polyhedron(np.array([[1.0, 2.0], [-1.0, 0.5]]),
                                  np.array([1.0, 0.3])),
                 model.nonneg())
        for _ in range(25):
            v = rng.normal(0, 3, 2)
            p1 = dk.project(atoms, v)
            p2 = dk.project(atoms, p1)
            assert np.array_equal(p1, p2)

    def test_norm_ball(self):
        atom = model.norm_ball2(1.0)
        out = dk.project((atom,), np.array([3.0, 4.0]))
        assert np.allclose(out, [0.6, 0.8])

    def test_intersection_not_composition(self):
        # {x0 + x1 <= 0} with {x >= 0} forces the origin; composing the two
        # single projections from (1, 1) would stop at (0.5, 0.5) projected
        # to nonneg, which stays infeasible for the halfspace
        atoms = (model.polyhedron(np.array([[1.0, 1.0]]), np.array([0.0])),
                 model.nonneg())
        out = dk.project(atoms, np.array([1.0, 1.0]))
        assert np.allclose(out, [0.0, 0.0], atol=1e-6)

    def test_monotone_bound_fast_path_matches_qp(self):
        rng = np.random.default_rng(31)
        for trial in range(60):
            n = int(rng.integers(2, 8))
            v = rng.normal(0, 3, n)
            if trial % 2:
                atoms = [model.nonneg(), model.monotone_nonincreasing()]
            else:
                atoms = [model.nonpos(), model.monotone_nondecreasing()]
            fast = dk.project(atoms, v)
            slow = kernels._project_rows(v.astype(float),
                                         *kernels.stack_rows(atoms, n), 1e-12, None)
            assert np.allclose(fast, slow, atol=1e-5)
            assert kernels.max_violation(atoms, fast) <= 1e-12

    def test_ball_polyhedron_intersection(self):
        # nonneg cone meets unit ball: project(-1, 2) -> (0, 1)
        atoms = (model.nonneg(), model.norm_ball2(1.0))
        out = dk.project(atoms, np.array([-1.0, 2.0]))
        assert np.allclose(out, [0.0, 1.0], atol=1e-8)

    def test_projection_optimality_random(self):
        # projected point must beat random feasible points in distance
        rng = np.random.default_rng(77)
        A = np.array([[1.0, 1.0, 1.0]])
        b = np.array([1.0])
        atoms = (model.polyhedron(A, b), model.nonneg())
        for _ in range(20):
            v = rng.normal(0, 2, 3)
            p = dk.project(atoms, v)
            d_p = np.sum((p - v) ** 2)
            for _ in range(50):
                w = rng.dirichlet(np.ones(3)) * rng.uniform(0, 1)
                assert d_p <= np.sum((w - v) ** 2) + 1e-8

    def test_infeasible_box_raises(self):
        atom = model.box(np.array([1.0]), np.array([0.0]))
        with pytest.raises(kernels.ProjectionError):
            dk.project((atom,), np.array([0.5]))


def grid_prox_1d(fun, v, step, lo=-6.0, hi=6.0, num=240001):
    """Dense search for argmin_u fun(u) + (u - v)^2 / (2 step)."""
    grid = np.linspace(lo, hi, num)
    vals = fun(grid) + (grid - v) ** 2 / (2.0 * step)
    return grid[np.argmin(vals)]


class TestProx:
    def test_soft_threshold(self):
        out = kernels.soft_threshold(np.array([3.0, -1.0, 0.2]), 1.0)
        assert np.allclose(out, [2.0, 0.0, 0.0])

    def test_l1_prox_examples(self):
        out = dk.prox(model.l1(2.0), np.array([5.0, -0.5]), 0.5)
        assert np.allclose(out, [4.0, 0.0])

    def test_l1_prox_grid(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            v = float(rng.normal(0, 2))
            w = float(rng.uniform(0.1, 2.0))
            step = float(rng.uniform(0.1, 2.0))
            got = dk.prox(model.l1(w), np.array([v]), step)[0]
            ref = grid_prox_1d(lambda u: w * np.abs(u), v, step)
            assert abs(got - ref) <= 1e-4

    def test_group_shrink(self):
        out = dk.prox(model.group_l2(1.0), np.array([3.0, 4.0]), 1.0)
        assert np.allclose(out, [2.4, 3.2])

    def test_group_shrink_kills_small(self):
        out = dk.prox(model.group_l2(1.0), np.array([0.3, 0.4]), 1.0)
        assert np.allclose(out, [0.0, 0.0])


class TestJointProx:
    def test_l1_with_nonneg_matches_grid(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            v = float(rng.normal(0, 2))
            w = float(rng.uniform(0.1, 1.5))
            step = float(rng.uniform(0.1, 1.5))
            got = dk.joint_prox((model.l1(w),), (model.nonneg(),),
                                np.array([v]), step)[0]
            ref = grid_prox_1d(lambda u: np.where(u >= 0, w * np.abs(u), np.inf),
                               v, step, lo=0.0)
            assert abs(got - ref) <= 1e-4

    def test_l1_with_box(self):
        atoms = (model.box(np.array([-1.0, -1.0]), np.array([1.0, 1.0])),)
        out = dk.joint_prox((model.l1(1.0),), atoms, np.array([5.0, 0.2]), 1.0)
        assert np.allclose(out, [1.0, 0.0])

    def test_group_l2_on_cone(self):
        # projection then shrink is exact on the nonneg orthant
        regs = (model.group_l2(1.0),)
        atoms = (model.nonneg(),)
        out = dk.joint_prox(regs, atoms, np.array([3.0, -4.0]), 1.0)
        # project -> (3, 0), norm 3, scale 1 - 1/3 = 2/3 -> (2, 0)
        assert np.allclose(out, [2.0, 0.0])

    def test_constraint_only(self):
        out = dk.joint_prox((), (model.nonneg(),), np.array([-1.0, 2.0]), 1.0)
        assert np.allclose(out, [0.0, 2.0])

    def test_fallback_alternation_feasible(self):
        # regularizer with a genuinely coupled set: use ball + l1
        regs = (model.l1(0.5),)
        atoms = (model.norm_ball2(1.0),)
        v = np.array([2.0, 2.0])
        out = dk.joint_prox(regs, atoms, v, 1.0)
        assert np.linalg.norm(out) <= 1.0 + 1e-8
        # objective at output no worse than at the plain projection
        def total(u):
            return 0.5 * np.sum((u - v) ** 2) + 0.5 * np.abs(u).sum()
        assert total(out) <= total(v / np.linalg.norm(v)) + 1e-8


class TestMaxViolation:
    def test_zero_inside(self):
        atoms = (model.nonneg(), model.norm_ball2(2.0))
        assert kernels.max_violation(atoms, np.array([1.0, 1.0])) == 0.0

    def test_reports_worst(self):
        atoms = (model.nonneg(),)
        assert kernels.max_violation(atoms, np.array([-0.5, 1.0])) == pytest.approx(0.5)
