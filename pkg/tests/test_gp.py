"""Tests for the exact-GP core: kernels, marginal likelihood, fitting,
posterior prediction.  Expected values come from independent dense-matrix
oracles and central finite differences, never from the code under test."""

import math

import numpy as np
import pytest

from gpcal import gp
from gpcal.errors import InsufficientDataError


def dense_logml(X, y, spec, hyper):
    """Oracle: log N(y | 0, K + noise I) via explicit inverse and determinant."""
    n = len(y)
    K = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            K[i, j] = gp.kernel_eval(spec, hyper, X[i], X[j])
    A = K + hyper.noise_variance * np.eye(n)
    sign, logdet = np.linalg.slogdet(A)
    assert sign > 0
    quad = y @ np.linalg.inv(A) @ y
    return -0.5 * quad - 0.5 * logdet - 0.5 * n * math.log(2 * math.pi)


def dense_posterior(Xtrain, ytrain, query, spec, hyper):
    """Oracle: posterior mean/variance by explicit matrix inverse (standardized units)."""
    n = len(ytrain)
    K = np.array([[gp.kernel_eval(spec, hyper, a, b) for b in Xtrain] for a in Xtrain])
    A_inv = np.linalg.inv(K + hyper.noise_variance * np.eye(n))
    k_star = np.array([gp.kernel_eval(spec, hyper, x, query) for x in Xtrain])
    mean = k_star @ A_inv @ ytrain
    var = gp.kernel_eval(spec, hyper, query, query) - k_star @ A_inv @ k_star
    return mean, var


def random_hyper(rng, m):
    return gp.Hyperparameters(
        outputscale=float(rng.uniform(0.3, 3.0)),
        lengthscales=rng.uniform(0.5, 3.0, size=m),
        noise_variance=float(rng.uniform(0.01, 0.3)),
    )


class TestKernels:
    def test_se_zero_distance_is_outputscale(self):
        spec = gp.KernelSpec(gp.SE, 3)
        hyper = gp.Hyperparameters(1.0, np.array([1.0]), 0.0)
        a = np.array([0.3, -1.2, 2.0])
        assert gp.kernel_eval(spec, hyper, a, a) == 1.0

    def test_se_unit_distance(self):
        spec = gp.KernelSpec(gp.SE, 1)
        hyper = gp.Hyperparameters(1.0, np.array([1.0]), 0.0)
        val = gp.kernel_eval(spec, hyper, [0.0], [1.0])
        assert val == pytest.approx(math.exp(-0.5), abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        spec = gp.KernelSpec(gp.SE_ARD, 4)
        hyper = random_hyper(rng, 4)
        a, b = rng.normal(size=4), rng.normal(size=4)
        assert gp.kernel_eval(spec, hyper, a, b) == gp.kernel_eval(spec, hyper, b, a)

    def test_ard_with_tied_lengthscales_matches_se(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            d = rng.integers(1, 6)
            ell = float(rng.uniform(0.2, 5.0))
            s = float(rng.uniform(0.1, 4.0))
            se = gp.Hyperparameters(s, np.array([ell]), 0.0)
            ard = gp.Hyperparameters(s, np.full(d, ell), 0.0)
            a, b = rng.normal(size=d), rng.normal(size=d)
            v_se = gp.kernel_eval(gp.KernelSpec(gp.SE, int(d)), se, a, b)
            v_ard = gp.kernel_eval(gp.KernelSpec(gp.SE_ARD, int(d)), ard, a, b)
            assert abs(v_se - v_ard) <= 1e-12

    def test_dimension_mismatch_raises(self):
        spec = gp.KernelSpec(gp.SE, 2)
        hyper = gp.Hyperparameters(1.0, np.array([1.0]), 0.0)
        with pytest.raises(ValueError):
            gp.kernel_eval(spec, hyper, [1.0], [1.0, 2.0])

    def test_nonpositive_hyperparameter_rejected(self):
        with pytest.raises(ValueError):
            gp.Hyperparameters(0.0, np.array([1.0]), 0.0)
        with pytest.raises(ValueError):
            gp.Hyperparameters(1.0, np.array([-1.0]), 0.0)
        with pytest.raises(ValueError):
            gp.Hyperparameters(1.0, np.array([1.0]), -0.1)


class TestGramMatrix:
    def test_single_point(self):
        spec = gp.KernelSpec(gp.SE, 2)
        hyper = gp.Hyperparameters(2.5, np.array([1.0]), 0.0)
        G = gp.gram_matrix(spec, hyper, [[0.0, 1.0]], [[0.0, 1.0]])
        assert G.shape == (1, 1)
        assert G[0, 0] == 2.5

    def test_identical_rows_constant(self):
        spec = gp.KernelSpec(gp.SE_ARD, 2)
        hyper = gp.Hyperparameters(1.7, np.array([1.0, 2.0]), 0.0)
        A = np.tile([0.5, -0.5], (4, 1))
        G = gp.gram_matrix(spec, hyper, A, A)
        assert np.all(G == 1.7)

    def test_matches_elementwise_loop(self):
        rng = np.random.default_rng(3)
        spec = gp.KernelSpec(gp.SE_ARD, 2)
        hyper = random_hyper(rng, 2)
        A = rng.normal(size=(5, 2))
        B = rng.normal(size=(3, 2))
        G = gp.gram_matrix(spec, hyper, A, B)
        for i in range(5):
            for j in range(3):
                assert G[i, j] == pytest.approx(gp.kernel_eval(spec, hyper, A[i], B[j]), rel=1e-14)

    def test_gram_self_symmetric(self):
        rng = np.random.default_rng(4)
        spec = gp.KernelSpec(gp.SE, 3)
        hyper = random_hyper(rng, 1)
        A = rng.normal(size=(6, 3))
        G = gp.gram_matrix(spec, hyper, A, A)
        np.testing.assert_allclose(G, G.T, atol=0)


class TestLogMarginalLikelihood:
    def test_single_zero_observation(self):
        ds = gp.Dataset(np.array([[0.0]]), np.array([0.0]))
        spec = gp.KernelSpec(gp.SE, 1)
        hyper = gp.Hyperparameters(1.0, np.array([1.0]), 0.0)
        val = gp.log_marginal_likelihood(ds, spec, hyper)
        assert val == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_sign_flip_invariance_n1(self):
        spec = gp.KernelSpec(gp.SE, 1)
        hyper = gp.Hyperparameters(1.3, np.array([0.7]), 0.2)
        a = gp.log_marginal_likelihood(gp.Dataset([[0.4]], [1.7]), spec, hyper)
        b = gp.log_marginal_likelihood(gp.Dataset([[0.4]], [-1.7]), spec, hyper)
        assert a == pytest.approx(b, abs=1e-14)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(6, 2))
        y = rng.normal(size=6)
        spec = gp.KernelSpec(gp.SE_ARD, 2)
        hyper = random_hyper(rng, 2)
        ds = gp.Dataset(X, y)
        expected = dense_logml(X, y, spec, hyper)
        assert gp.log_marginal_likelihood(ds, spec, hyper) == pytest.approx(expected, rel=1e-10)


class TestMllGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(8, 3))
        y = rng.normal(size=8)
        ds = gp.Dataset(X, y)
        spec = gp.KernelSpec(gp.SE_ARD, 3)
        hyper = random_hyper(rng, 3)
        grad = gp.mll_gradient(ds, spec, hyper)
        logvec = hyper.to_log_vector()
        h = 1e-5
        for k in range(len(logvec)):
            up, dn = logvec.copy(), logvec.copy()
            up[k] += h
            dn[k] -= h
            fd = (
                gp.log_marginal_likelihood(ds, spec, gp.Hyperparameters.from_log_vector(up))
                - gp.log_marginal_likelihood(ds, spec, gp.Hyperparameters.from_log_vector(dn))
            ) / (2 * h)
            assert grad[k] == pytest.approx(fd, rel=1e-4, abs=1e-7)

    def test_zero_targets_outputscale_component(self):
        # with y = 0 the data-fit term vanishes: d logML / d log s = -0.5 tr(A^-1 K)
        rng = np.random.default_rng(7)
        X = rng.normal(size=(5, 2))
        ds = gp.Dataset(X, np.zeros(5))
        spec = gp.KernelSpec(gp.SE, 2)
        hyper = gp.Hyperparameters(1.4, np.array([0.9]), 0.1)
        K = gp.gram_matrix(spec, hyper, X, X)
        A_inv = np.linalg.inv(K + hyper.noise_variance * np.eye(5))
        expected = -0.5 * np.trace(A_inv @ K)
        grad = gp.mll_gradient(ds, spec, hyper)
        assert grad[0] == pytest.approx(expected, rel=1e-10)

    def test_small_gradient_at_fitted_optimum(self):
        rng = np.random.default_rng(8)
        X = rng.uniform(-2, 2, size=(12, 1))
        y = np.sin(X[:, 0]) + 0.05 * rng.normal(size=12)
        ds = gp.Dataset(X, y)
        spec = gp.KernelSpec(gp.SE, 1)
        model = gp.fit(ds, spec, gp.FitConfig(seed=0))
        grad = gp.mll_gradient(model.dataset, spec, model.hyper)
        assert np.all(np.abs(grad) < 1e-3)


class TestFit:
    def test_noiseless_sine_recovers_low_noise(self):
        x = np.linspace(0, 2 * math.pi, 10)
        ds = gp.Dataset(x[:, None], np.sin(x))
        model = gp.fit(ds, gp.KernelSpec(gp.SE, 1), gp.FitConfig(seed=1))
        assert model.hyper.noise_variance < 1e-4
        # held-out interpolation error
        xq = np.linspace(0.3, 2 * math.pi - 0.3, 25)
        mean, _ = model.predict(xq[:, None])
        assert np.max(np.abs(mean - np.sin(xq))) < 1e-2

    def test_white_noise_logml_improves_over_init(self):
        rng = np.random.default_rng(9)
        X = rng.uniform(-1, 1, size=(50, 2))
        y = rng.normal(size=50)
        model = gp.fit(gp.Dataset(X, y), gp.KernelSpec(gp.SE_ARD, 2), gp.FitConfig(seed=2))
        chosen = model.fit_info["starts"][model.fit_info["chosen_start"]]
        assert chosen["final_logml"] >= chosen["init_logml"] - 1e-9

    def test_duplicate_inputs_conflicting_targets(self):
        X = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [2.0, 0.5]])
        y = np.array([0.0, 1.0, 0.5, -0.3])
        model = gp.fit(gp.Dataset(X, y), gp.KernelSpec(gp.SE_ARD, 2), gp.FitConfig(seed=3))
        assert model.hyper.noise_variance > gp.NOISE_FLOOR

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            gp.fit(gp.Dataset([[0.0]], [1.0]), gp.KernelSpec(gp.SE, 1))

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(15, 2))
        y = X[:, 0] ** 2 - X[:, 1]
        ds = gp.Dataset(X, y)
        spec = gp.KernelSpec(gp.SE_ARD, 2)
        m1 = gp.fit(ds, spec, gp.FitConfig(seed=42))
        m2 = gp.fit(ds, spec, gp.FitConfig(seed=42))
        assert m1.hyper.outputscale == m2.hyper.outputscale
        assert np.array_equal(m1.hyper.lengthscales, m2.hyper.lengthscales)
        assert m1.hyper.noise_variance == m2.hyper.noise_variance
        assert np.array_equal(m1.alpha, m2.alpha)


class TestPosteriorPredict:
    def test_interpolates_training_data_noiseless(self):
        rng = np.random.default_rng(11)
        X = rng.uniform(-1, 1, size=(6, 2))
        y = np.cos(X[:, 0]) + X[:, 1]
        hyper = gp.Hyperparameters(1.0, np.array([1.0, 1.0]), 0.0)
        model = gp.condition(gp.Dataset(X, y), gp.KernelSpec(gp.SE_ARD, 2), hyper)
        assert model.jitter_used == 0.0
        for i in range(6):
            post = gp.posterior_predict(model, X[i])
            assert post.mean == pytest.approx(y[i], abs=1e-6)
            assert post.variance <= 1e-6

    def test_reverts_to_prior_far_away(self):
        rng = np.random.default_rng(12)
        X = rng.uniform(-1, 1, size=(8, 2))
        y = rng.normal(size=8)
        hyper = gp.Hyperparameters(1.5, np.array([0.8, 0.8]), 0.05)
        model = gp.condition(gp.Dataset(X, y), gp.KernelSpec(gp.SE_ARD, 2), hyper)
        post = gp.posterior_predict(model, np.array([1e4, -1e4]))
        st = model.standardization
        assert post.mean == pytest.approx(st.target_mean, abs=1e-6)
        assert post.variance == pytest.approx(1.5 * st.target_scale**2, abs=1e-6)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(13)
        X = rng.normal(size=(4, 2))
        y = rng.normal(size=4)
        spec = gp.KernelSpec(gp.SE_ARD, 2)
        hyper = random_hyper(rng, 2)
        # identity standardization so the oracle operates in the same units
        model = gp.condition(gp.Dataset(X, y), spec, hyper, standardization=gp.StandardizationParams.identity(2))
        q = rng.normal(size=2)
        mean_o, var_o = dense_posterior(X, y, q, spec, hyper)
        post = gp.posterior_predict(model, q)
        assert post.mean == pytest.approx(mean_o, abs=1e-10)
        assert post.variance == pytest.approx(var_o, abs=1e-10)

    def test_batch_variant_matches_single(self):
        rng = np.random.default_rng(14)
        X = rng.normal(size=(5, 3))
        y = rng.normal(size=5)
        model = gp.condition(gp.Dataset(X, y), gp.KernelSpec(gp.SE, 3), random_hyper(rng, 1))
        Q = rng.normal(size=(4, 3))
        batch = gp.posterior_predict_batch(model, Q)
        for i, post in enumerate(batch):
            single = gp.posterior_predict(model, Q[i])
            assert post.mean == pytest.approx(single.mean, rel=1e-12, abs=1e-14)
            assert post.variance == pytest.approx(single.variance, rel=1e-12, abs=1e-14)

    def test_nonfinite_query_rejected(self):
        rng = np.random.default_rng(15)
        X = rng.normal(size=(4, 2))
        model = gp.condition(gp.Dataset(X, X[:, 0]), gp.KernelSpec(gp.SE, 2), random_hyper(rng, 1))
        with pytest.raises(ValueError):
            gp.posterior_predict(model, [np.nan, 0.0])


class TestInvariants:
    def test_gram_psd_with_bounded_jitter(self):
        rng = np.random.default_rng(16)
        for _ in range(20):
            n, d = rng.integers(3, 12), rng.integers(1, 5)
            X = rng.normal(size=(n, d))
            hyper = random_hyper(rng, int(d))
            spec = gp.KernelSpec(gp.SE_ARD, int(d))
            K = gp.gram_matrix(spec, hyper, X, X)
            jitter = 1e-4 * hyper.outputscale
            np.linalg.cholesky(K + jitter * np.eye(int(n)))

    def test_variance_never_exceeds_prior(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            X = rng.normal(size=(6, 2))
            y = rng.normal(size=6)
            hyper = random_hyper(rng, 2)
            model = gp.condition(gp.Dataset(X, y), gp.KernelSpec(gp.SE_ARD, 2), hyper)
            _, var = model.predict(rng.normal(size=(10, 2)) * 3)
            prior_var = hyper.outputscale * model.standardization.target_scale**2
            assert np.all(var <= prior_var + 1e-8)

    def test_adding_point_never_increases_variance(self):
        rng = np.random.default_rng(18)
        for _ in range(20):
            n = int(rng.integers(3, 10))
            X = rng.normal(size=(n, 2))
            y = rng.normal(size=n)
            hyper = random_hyper(rng, 2)
            spec = gp.KernelSpec(gp.SE_ARD, 2)
            st = gp.StandardizationParams.identity(2)
            base = gp.condition(gp.Dataset(X, y), spec, hyper, standardization=st)
            x_new = rng.normal(size=2)
            grown = gp.condition(
                gp.Dataset(np.vstack([X, x_new]), np.append(y, rng.normal())),
                spec,
                hyper,
                standardization=st,
            )
            Q = rng.normal(size=(8, 2))
            _, v0 = base.predict(Q)
            _, v1 = grown.predict(Q)
            assert np.all(v1 <= v0 + 1e-10)

    def test_gradient_matches_fd_many_draws(self):
        rng = np.random.default_rng(19)
        X = rng.normal(size=(7, 2))
        y = rng.normal(size=7)
        ds = gp.Dataset(X, y)
        spec = gp.KernelSpec(gp.SE_ARD, 2)
        h = 1e-5
        for _ in range(20):
            hyper = random_hyper(rng, 2)
            grad = gp.mll_gradient(ds, spec, hyper)
            logvec = hyper.to_log_vector()
            for k in range(len(logvec)):
                up, dn = logvec.copy(), logvec.copy()
                up[k] += h
                dn[k] -= h
                fd = (
                    gp.log_marginal_likelihood(ds, spec, gp.Hyperparameters.from_log_vector(up))
                    - gp.log_marginal_likelihood(ds, spec, gp.Hyperparameters.from_log_vector(dn))
                ) / (2 * h)
                assert grad[k] == pytest.approx(fd, rel=1e-4, abs=1e-7)

    def test_cholesky_reconstructs_and_alpha_solves(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            n = int(rng.integers(4, 20))
            X = rng.normal(size=(n, 3))
            y = rng.normal(size=n)
            model = gp.fit(gp.Dataset(X, y), gp.KernelSpec(gp.SE_ARD, 3), gp.FitConfig(restarts=1, seed=0))
            K = gp.gram_matrix(model.kernel, model.hyper, model.dataset.inputs, model.dataset.inputs)
            A = K + (model.hyper.noise_variance + model.jitter_used) * np.eye(n)
            recon = model.chol @ model.chol.T
            assert np.linalg.norm(recon - A) / np.linalg.norm(A) < 1e-8
            residual = A @ model.alpha - model.dataset.targets
            assert np.linalg.norm(residual) / np.linalg.norm(model.dataset.targets) < 1e-8

    def test_ard_tied_equals_se_on_gram(self):
        rng = np.random.default_rng(20)
        X = rng.normal(size=(9, 3))
        ell, s = 1.7, 0.6
        g_se = gp.gram_matrix(gp.KernelSpec(gp.SE, 3), gp.Hyperparameters(s, [ell], 0.0), X, X)
        g_ard = gp.gram_matrix(gp.KernelSpec(gp.SE_ARD, 3), gp.Hyperparameters(s, [ell] * 3, 0.0), X, X)
        assert np.max(np.abs(g_se - g_ard)) <= 1e-12
