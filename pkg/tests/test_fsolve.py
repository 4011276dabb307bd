import itertools

import numpy as np
import pytest

import dlfmkit as dk
from dlfmkit import fsolve, model


class TestPlain:
    def test_rowwise_argmin(self):
        R = np.array([[1.0, 2.0], [3.0, 0.0]])
        Z = dk.solve_f_plain(R)
        assert np.array_equal(Z, np.eye(2))

    def test_tie_takes_first(self):
        R = np.array([[5.0, 5.0, 7.0]])
        Z = dk.solve_f_plain(R)
        assert np.array_equal(Z, [[1.0, 0.0, 0.0]])

    def test_beats_every_assignment(self):
        # exhaustive check on a 5 x 3 cost matrix
        rng = np.random.default_rng(0)
        R = rng.normal(size=(5, 3))
        Z = dk.solve_f_plain(R)
        best = (Z * R).sum()
        for combo in itertools.product(range(3), repeat=5):
            val = sum(R[i, c] for i, c in enumerate(combo))
            assert best <= val + 1e-12

    def test_optimal_over_soft_matrices(self):
        # the linear program over row-stochastic matrices is minimized at a vertex
        rng = np.random.default_rng(1)
        R = rng.normal(size=(6, 3))
        best = (dk.solve_f_plain(R) * R).sum()
        for _ in range(1000):
            S = rng.dirichlet(np.ones(3), size=6)
            assert best <= (S * R).sum() + 1e-12


class TestKlChain:
    def test_zero_weight_matches_plain(self):
        rng = np.random.default_rng(3)
        R = rng.normal(size=(8, 3))
        Z0 = np.full((8, 3), 1.0 / 3.0)
        Z, converged = dk.solve_f_kl(R, 0.0, Z0)
        assert converged
        assert np.array_equal(dk.harden(Z), dk.harden(dk.solve_f_plain(R)))

    def test_huge_weight_forces_consensus(self):
        rng = np.random.default_rng(4)
        R = rng.normal(size=(10, 2))
        Z0 = rng.dirichlet(np.ones(2), size=10)
        Z, _ = dk.solve_f_kl(R, 1e6, Z0)
        assert model.kl_chain_value(Z) <= 1e-6

    def test_matches_grid_small(self):
        # m=3, K=2: the matrix is three scalars after the simplex reduction
        rng = np.random.default_rng(5)
        R = rng.normal(size=(3, 2))
        lam = 0.8

        def total(p):
            Z = np.column_stack([p, 1.0 - np.asarray(p)])
            return float((Z * R).sum()) + lam * model.kl_chain_value(Z)

        grid = np.linspace(1e-9, 1.0 - 1e-9, 401)
        best = min(
            total((a, b, c))
            for a in grid[::8] for b in grid[::8] for c in grid[::8]
        )
        Z0 = np.full((3, 2), 0.5)
        Z, converged = dk.solve_f_kl(R, lam, Z0)
        got = total(Z[:, 0])
        assert converged
        assert got <= best + 1e-3

    def test_monotone_descent(self):
        rng = np.random.default_rng(6)
        R = rng.normal(size=(12, 3))
        lam = 0.5
        Z0 = rng.dirichlet(np.ones(3), size=12)

        def total(Z):
            return float((Z * R).sum()) + lam * model.kl_chain_value(Z)

        Z, _ = dk.solve_f_kl(R, lam, Z0)
        assert total(Z) <= total(Z0) + 1e-10

    def test_rows_stay_stochastic(self):
        rng = np.random.default_rng(7)
        R = rng.normal(size=(15, 4)) * 3
        Z0 = rng.dirichlet(np.ones(4), size=15)
        Z, _ = dk.solve_f_kl(R, 2.0, Z0)
        assert np.all(Z > 0)
        assert np.allclose(Z.sum(axis=1), 1.0, atol=1e-12)

    def test_smoothing_carries_cost_across_switch(self):
        # middle sample slightly prefers factor 2; strong chain keeps it at 1
        R = np.array([[0.0, 10.0], [0.6, 0.4], [0.0, 10.0]])
        Z0 = np.full((3, 2), 0.5)
        Z, _ = dk.solve_f_kl(R, 5.0, Z0)
        assert dk.harden(Z)[1] == 1

    def test_large_costs_no_overflow(self):
        R = np.array([[1e8, 0.0], [0.0, 1e8], [1e8, 0.0]])
        Z0 = np.full((3, 2), 0.5)
        Z, _ = dk.solve_f_kl(R, 1.0, Z0)
        assert np.all(np.isfinite(Z))


class TestHarden:
    def test_one_based_labels(self):
        Z = np.array([[0.9, 0.1], [0.2, 0.8]])
        assert dk.harden(Z).tolist() == [1, 2]

    def test_tie_takes_first(self):
        Z = np.array([[0.5, 0.5]])
        assert dk.harden(Z).tolist() == [1]
