import numpy as np
import pytest

import dlfmkit as dk
from dlfmkit import experiments as ex


class TestKmeansGenerator:
    def test_noise_free_points_on_diamond(self):
        cfg = ex.experiment_config(ex.CONSTRAINED_KMEANS, seed=0, noise_sigma=0.0)
        data, _, _ = ex.generate(cfg)
        norms = np.abs(data.features).sum(axis=1)
        assert np.allclose(norms, 2.0, atol=1e-12)

    def test_shapes_and_spread(self):
        cfg = ex.experiment_config(ex.CONSTRAINED_KMEANS, seed=1)
        data, labels, thetas = ex.generate(cfg)
        assert data.features.shape == (500, 2)
        assert labels is None and thetas is None
        # all four diamond faces get visited
        signs = set(map(tuple, np.sign(np.round(data.features, 1)).astype(int)))
        assert len(signs) >= 4


class TestMixtureGenerator:
    def test_label_frequencies(self):
        cfg = ex.experiment_config(ex.MIXTURE_LINREG, seed=0)
        data, labels, thetas = ex.generate(cfg)
        assert data.features.shape == (500, 10)
        assert np.array_equal(np.asarray(thetas), ex.MIXTURE_THETAS)
        freq = np.bincount(labels, minlength=4)[1:] / 500.0
        assert np.all(np.abs(freq - np.array([0.4, 0.3, 0.3])) <= 0.05)

    def test_observations_follow_assigned_line(self):
        cfg = ex.experiment_config(ex.MIXTURE_LINREG, seed=2, noise_sigma=0.0)
        data, labels, thetas = ex.generate(cfg)
        th = np.asarray(thetas)
        pred = np.einsum("ij,ij->i", data.features, th[labels - 1])
        assert np.allclose(pred, data.observations, atol=1e-9)


class TestForgettingGenerator:
    def test_feature_stack_shape(self):
        cfg = ex.experiment_config(ex.FORGETTING_Q, seed=0)
        data, labels, _ = ex.generate(cfg)
        assert data.features.shape == (200, 3, 5)
        assert data.ordered

    def test_reward_signal_sparsity(self):
        # each lag column holds at most one nonzero arm entry
        cfg = ex.experiment_config(ex.FORGETTING_Q, seed=3)
        data, _, _ = ex.generate(cfg)
        nz = (data.features != 0.0).sum(axis=1)
        assert nz.max() <= 1

    def test_regime_switches_every_20(self):
        cfg = ex.experiment_config(ex.FORGETTING_Q, seed=1)
        _, labels, _ = ex.generate(cfg)
        assert labels[0] == 1
        assert labels[19] == 1
        assert labels[20] == 2
        assert labels[39] == 2
        assert labels[40] == 1

    def test_choices_one_hot(self):
        cfg = ex.experiment_config(ex.FORGETTING_Q, seed=4)
        data, _, _ = ex.generate(cfg)
        assert data.observations.shape == (200, 3)
        assert set(np.unique(data.observations)) == {0.0, 1.0}
        assert np.allclose(data.observations.sum(axis=1), 1.0)


class TestIoHmmGenerator:
    def test_bias_column(self):
        cfg = ex.experiment_config(ex.IO_HMM, seed=0)
        data, labels, thetas = ex.generate(cfg)
        assert data.features.shape == (500, 2)
        assert np.allclose(data.features[:, 1], 1.0)
        assert data.ordered
        assert set(np.unique(data.observations)) <= {0.0, 1.0}

    def test_state_transitions_near_nominal(self):
        cfg = ex.experiment_config(ex.IO_HMM, seed=1, m=5000)
        _, labels, _ = ex.generate(cfg)
        est = ex.estimate_transition(labels, 3)
        assert np.all(np.abs(est - ex.IOHMM_P_TR) <= 0.08)

    def test_starts_in_first_state(self):
        for seed in range(5):
            cfg = ex.experiment_config(ex.IO_HMM, seed=seed)
            _, labels, _ = ex.generate(cfg)
            assert labels[0] == 1


class TestAlignedAccuracy:
    def test_identity(self):
        pred = np.array([1, 2, 3, 1])
        acc, perm = ex.aligned_accuracy(pred, pred, 3)
        assert acc == 1.0
        assert list(perm) == [1, 2, 3]

    def test_swap_recovered(self):
        truth = np.array([1, 1, 2, 2])
        pred = np.array([2, 2, 1, 1])
        acc, perm = ex.aligned_accuracy(pred, truth, 2)
        assert acc == 1.0
        assert list(perm) == [2, 1]

    def test_apply_permutation_roundtrip(self):
        truth = np.array([1, 2, 1, 2, 2])
        pred = np.array([2, 1, 2, 1, 1])
        acc, perm = ex.aligned_accuracy(pred, truth, 2)
        assert np.array_equal(ex.apply_permutation(pred, perm), truth)

    def test_relabeling_invariant(self):
        rng = np.random.default_rng(0)
        truth = rng.integers(1, 4, 60)
        pred = rng.integers(1, 4, 60)
        base, _ = ex.aligned_accuracy(pred, truth, 3)
        relab = np.choose(pred - 1, [3, 1, 2])
        again, _ = ex.aligned_accuracy(relab, truth, 3)
        assert base == again

    def test_uniform_noise_near_half(self):
        rng = np.random.default_rng(1)
        truth = rng.integers(1, 3, 4000)
        pred = rng.integers(1, 3, 4000)
        acc, _ = ex.aligned_accuracy(pred, truth, 2)
        assert 0.5 <= acc <= 0.56

    def test_rejects_large_k(self):
        with pytest.raises(ValueError):
            ex.aligned_accuracy(np.ones(3, dtype=int), np.ones(3, dtype=int), 9)


class TestThetaRmse:
    def test_zero_on_exact(self):
        th = [np.array([1.0, 2.0]), np.array([3.0, 4.0])]
        out = ex.aligned_theta_rmse(th, np.array(th), (1, 2))
        assert np.allclose(out, 0.0)

    def test_normalized_by_dimension(self):
        pred = [np.array([1.0, 1.0, 1.0, 1.0])]
        true = np.zeros((1, 4))
        out = ex.aligned_theta_rmse(pred, true, (1,))
        assert out[0] == pytest.approx(1.0)  # norm 2 over sqrt(4)


class TestEstimateTransition:
    def test_small_example(self):
        est = ex.estimate_transition(np.array([1, 1, 2, 2]), 2)
        assert np.allclose(est, [[0.5, 0.5], [0.0, 1.0]])

    def test_constant_sequence(self):
        est = ex.estimate_transition(np.array([1, 1, 1]), 2)
        assert np.allclose(est[0], [1.0, 0.0])
        assert np.allclose(est[1], [0.5, 0.5])  # unvisited row: uniform

    def test_rows_sum_to_one_exactly(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(1, 4, 300)
        est = ex.estimate_transition(labels, 3)
        assert np.all(est.sum(axis=1) == 1.0)


class TestSpecBuilders:
    def test_kmeans_spec_flags(self):
        con = ex.kmeans_spec(constrained=True, restarts=3, seed=1)
        unc = ex.kmeans_spec(constrained=False, restarts=3, seed=1)
        assert any(a.kind == "polyhedron" for a in con.constraints_per_factor[0])
        assert not unc.constraints_per_factor[0]

    def test_forgetting_spec_shapes(self):
        spec = ex.forgetting_spec(lam=1.0, restarts=2, seed=0)
        assert spec.K == 2 and spec.n == 5
        kinds0 = {a.kind for a in spec.constraints_per_factor[0]}
        kinds1 = {a.kind for a in spec.constraints_per_factor[1]}
        assert kinds0 == {"nonneg", "monotone_nonincreasing"}
        assert kinds1 == {"nonpos", "monotone_nondecreasing"}
        assert spec.f_regularizers[0].weight == 1.0

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError):
            ex.experiment_config("no_such_study")


class TestConfigOverrides:
    def test_override_applies(self):
        cfg = ex.experiment_config(ex.MIXTURE_LINREG, seed=5, m=100)
        assert cfg.m == 100 and cfg.seed == 5

    def test_unknown_override_rejected(self):
        with pytest.raises(TypeError):
            ex.experiment_config(ex.MIXTURE_LINREG, seed=0, bogus=1)
