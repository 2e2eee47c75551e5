import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fitted
from skewlap import logistic as lg
from skewlap.diagnostics import eps_bar3, weighted_opnorm
from skewlap.laplace import find_mode, fit_laplace, whitened_third
from skewlap.model import NotPositiveDefinite, UnsupportedRepresentation
from skewlap.skew import build_skew, corrected_mean, mean_shift


class TestPsi:
    @settings(max_examples=40, deadline=None)
    @given(st.floats(-30, 30), st.integers(0, 4))
    def test_derivative_chain(self, t, k):
        h = 1e-5
        fd = (lg.psi_deriv(t + h, k) - lg.psi_deriv(t - h, k)) / (2 * h)
        assert fd == pytest.approx(float(lg.psi_deriv(t, k + 1)), abs=1e-8)

    def test_finite_in_tails(self):
        t = np.array([-800.0, 800.0])
        for k in range(6):
            assert np.all(np.isfinite(lg.psi_deriv(t, k)))
        assert lg.psi_deriv(800.0, 0) == pytest.approx(800.0)

    def test_order_six_unsupported(self):
        with pytest.raises(UnsupportedRepresentation):
            lg.psi_deriv(0.0, 6)


class TestData:
    def test_null_coefficients_balanced(self):
        ds = lg.generate_data(4000, 3, np.zeros(3), seed=0)
        assert abs(ds.labels.mean() - 0.5) < 4 * math.sqrt(0.25 / 4000)

    def test_deterministic(self):
        a = lg.generate_data(50, 2, np.array([1.0, 0.0]), seed=7)
        b = lg.generate_data(50, 2, np.array([1.0, 0.0]), seed=7)
        assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)

    def test_design_covariance(self):
        M = np.array([[2.0, 0.5], [0.5, 1.0]])
        ds = lg.generate_data(100_000, 2, np.zeros(2), M=M, seed=1)
        np.testing.assert_allclose(np.cov(ds.features.T), M, atol=0.03)

    def test_non_spd_design(self):
        with pytest.raises(NotPositiveDefinite):
            lg.generate_data(10, 2, np.zeros(2), M=np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            lg.generate_data(10, 2, np.zeros(3))
        with pytest.raises(ValueError):
            lg.LogRegDataset(np.zeros((2, 1)), np.array([0.0, 2.0]))

    def test_csv_roundtrip(self, tmp_path):
        ds = lg.generate_data(30, 3, np.array([1.0, -1.0, 0.5]), seed=2)
        lg.write_dataset(ds, tmp_path / "d.csv")
        back = lg.read_dataset(tmp_path / "d.csv")
        assert np.array_equal(back.features, ds.features)
        assert np.array_equal(back.labels, ds.labels)

    def test_csv_missing_columns(self, tmp_path):
        (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            lg.read_dataset(tmp_path / "bad.csv")


class TestModel:
    def test_symmetric_two_point_mode(self):
        ds = lg.LogRegDataset(np.array([[1.0], [-1.0]]), np.array([1.0, 0.0]))
        # perfectly separable: flat prior has no finite MLE, a ridge prior pins it
        res = find_mode(lg.build_posterior(ds, 1.0).model, np.array([0.3]))
        assert res.converged and res.mode[0] > 0
        ds2 = lg.LogRegDataset(np.array([[1.0], [-1.0], [1.0], [-1.0]]), np.array([1.0, 0.0, 0.0, 1.0]))
        res2 = find_mode(lg.build_posterior(ds2, 0.0).model, np.array([0.3]))
        assert res2.converged and abs(res2.mode[0]) < 1e-12

    def test_hessian_psd(self, rng):
        ds = lg.generate_data(100, 6, rng.standard_normal(6), seed=5)
        m = lg.build_posterior(ds, 0.0).model
        for _ in range(5):
            assert np.linalg.eigvalsh(m.hessian(3 * rng.standard_normal(6))).min() >= -1e-12

    def test_prior_validation(self):
        ds = lg.generate_data(10, 2, np.zeros(2))
        with pytest.raises(ValueError):
            lg.build_posterior(ds, np.eye(3))
        with pytest.raises(ValueError):
            lg.build_posterior(ds, -np.eye(2))

    def test_value_batch(self, logreg_d5, rng):
        post, _ = logreg_d5
        B = rng.standard_normal((4, 5))
        np.testing.assert_allclose(post.model.value_batch(B), [post.model.value(b) for b in B], rtol=1e-12)


class TestFastSkew:
    def test_single_sample_matches_dense(self):
        ds = lg.LogRegDataset(np.array([[0.8, -0.3, 1.1]]), np.array([1.0]))
        post = lg.build_posterior(ds, 1.0)
        fit = fitted(post.model, np.zeros(3))
        fs = lg.fast_skew(post, fit)
        sc = build_skew(post.model, fit, "dense")
        np.testing.assert_allclose(fs.delta_mode, sc.delta_mode, rtol=1e-10, atol=1e-16)
        assert fs.eps_bar3 == pytest.approx(sc.eps_bar3, rel=1e-10)

    def test_matches_generic(self, logreg_d5, rng):
        post, fit = logreg_d5
        fs = lg.fast_skew(post, fit)
        sc = build_skew(post.model, fit, "dense")
        np.testing.assert_allclose(fs.delta_mode, sc.delta_mode, rtol=1e-10)
        assert fs.eps_bar3 == pytest.approx(eps_bar3(sc.tensor), rel=1e-8)
        X = fit.mode + 0.1 * rng.standard_normal((6, 5))
        from skewlap.skew import eval_skew

        np.testing.assert_allclose(fs.skew_closure(X), eval_skew(sc, X), rtol=1e-9)

    def test_null_data_small_shift(self):
        ds = lg.generate_data(5000, 2, np.zeros(2), seed=8)
        post = lg.build_posterior(ds, 0.0)
        fit = fitted(post.model, np.zeros(2))
        fs = lg.fast_skew(post, fit)
        sd = np.sqrt(np.diag(fit.covariance()))
        assert np.all(np.abs(fs.delta_mode) < 0.05 * sd)

    def test_low_rank_equals_dense_on_probes(self, rng):
        ds = lg.generate_data(200, 20, np.eye(20)[0], seed=6)
        post = lg.build_posterior(ds, 1.0)
        fit = fitted(post.model, np.zeros(20))
        dense = whitened_third(post.model, fit, "dense")
        lr = whitened_third(post.model, fit, "low_rank")
        Z = rng.standard_normal((10, 20))
        np.testing.assert_allclose(lr.cubes(Z), dense.cubes(Z), rtol=1e-8)

    def test_prior_strength_monotone(self):
        ds = lg.generate_data(60, 3, np.array([1.0, 0.0, 0.0]), seed=12)
        vals = []
        for kappa in (0.0, 1.0, 10.0, 100.0):
            post = lg.build_posterior(ds, kappa)
            fit = fitted(post.model, np.zeros(3))
            vals.append(weighted_opnorm(post.model, fit, 3, restarts=10, seed=0).tensor_norm)
        assert all(b <= a * (1 + 1e-6) for a, b in zip(vals, vals[1:]))


class TestPopulation:
    def test_minimizer_is_e1(self):
        m = lg.PopulationLogistic(4, 1000).model()
        res = find_mode(m, np.full(4, 0.3))
        assert res.converged
        np.testing.assert_allclose(res.mode, np.eye(4)[0], atol=1e-9)

    def test_moments_stable_under_node_doubling(self):
        a = lg.PopulationLogistic(3, 100, nodes=200)
        b = lg.PopulationLogistic(3, 100, nodes=400)
        for k, p in ((2, 0), (2, 2), (3, 1), (3, 3)):
            assert a.moment(k, p) == pytest.approx(b.moment(k, p), abs=1e-10)

    def test_one_dimensional_delta(self):
        pop = lg.PopulationLogistic(1, 400)
        lt = lg.population_leading_terms(pop)
        expected = abs(pop.moment(3, 3)) / (2 * pop.moment(2, 2) ** 1.5 * math.sqrt(400))
        assert lt["delta_norm"] == pytest.approx(expected)

    def test_generic_pipeline_matches_closed_form(self):
        pop = lg.PopulationLogistic(10, 1e4)
        m = pop.model()
        fit = fit_laplace(m, np.eye(10)[0])
        got = fit.hnorm(mean_shift(m, fit))
        assert got == pytest.approx(lg.population_leading_terms(pop)["delta_norm"], rel=1e-2)

    def test_third_mat_matches_contractions(self, rng):
        m = lg.PopulationLogistic(3, 50).model()
        x = np.array([0.7, -0.2, 0.4])
        A = rng.standard_normal((3, 3))
        A = A + A.T
        eye = np.eye(3)
        ref = [sum(A[j, k] * m.third_dir(x, eye[i], eye[j], eye[k]) for j in range(3) for k in range(3)) for i in range(3)]
        np.testing.assert_allclose(m.third_mat(x, A), ref, rtol=1e-10)

    def test_corrected_mean_consistent(self):
        m = lg.PopulationLogistic(2, 500).model()
        fit = fit_laplace(m, np.eye(2)[0])
        np.testing.assert_allclose(corrected_mean(m, fit), fit.mode + mean_shift(m, fit))
