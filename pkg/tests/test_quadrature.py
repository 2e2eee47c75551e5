import numpy as np
import pytest

from conftest import fitted, random_spd
from skewlap import logistic as lg
from skewlap import multinomial as mn
from skewlap.experiments import loglog_slope, scaled_counts
from skewlap.laplace import fit_laplace
from skewlap.model import QuadraticModel, UnsupportedError
from skewlap.quadrature import (
    QuadratureGrid,
    halfspace_probability,
    ltv_quadrature,
    true_integral,
    true_mean,
    true_tv,
)
from skewlap.skew import build_skew


def beta_fit(counts):
    mp = mn.build(counts)
    return mp, fitted(mp.model, np.full(mp.dim, 1 / (mp.dim + 1)))


class TestIntegrals:
    def test_gaussian_mean(self, rng):
        m = QuadraticModel(random_spd(rng, 2), center=np.array([0.3, -1.0]))
        fit = fit_laplace(m, m.center)
        np.testing.assert_allclose(true_mean(m, fit), m.center, atol=1e-10)

    def test_normalization(self, logreg_d2):
        post, fit = logreg_d2
        assert true_integral(post.model, fit, lambda X: np.ones(len(X))) == pytest.approx(1.0, abs=1e-14)

    def test_beta_mean(self):
        mp, fit = beta_fit([30, 70])
        # theta_1 marginal of Dir(31, 71)
        assert true_mean(mp.model, fit)[0] == pytest.approx(71 / 102, abs=1e-10)
        assert 1 - true_mean(mp.model, fit)[0] == pytest.approx(31 / 102, abs=1e-10)

    def test_dirichlet_mean_three_dimensions(self):
        mp, fit = beta_fit([30, 40, 20, 10])
        np.testing.assert_allclose(true_mean(mp.model, fit), np.array([41, 21, 11]) / 104, rtol=1e-6)

    def test_node_doubling(self, logreg_d2):
        post, fit = logreg_d2
        a = true_mean(post.model, fit, QuadratureGrid.build(2, 100))
        b = true_mean(post.model, fit, QuadratureGrid.build(2, 200))
        np.testing.assert_allclose(a, b, rtol=1e-8)

    def test_dimension_limit(self):
        m = QuadraticModel(np.eye(4))
        with pytest.raises(UnsupportedError):
            true_mean(m, fit_laplace(m, np.zeros(4)))
        with pytest.raises(UnsupportedError):
            QuadratureGrid.build(4)

    def test_half_width_floor(self):
        with pytest.raises(ValueError):
            QuadratureGrid.build(1, half_width=5.0)


class TestTv:
    def test_gaussian_zero(self, rng):
        m = QuadraticModel(random_spd(rng, 2))
        fit = fit_laplace(m, np.zeros(2))
        v = true_tv(m, fit)
        assert 0 <= v <= 1e-8

    def test_tv_dominates_halfspace_gap(self, logreg_d2):
        post, fit = logreg_d2
        p = halfspace_probability(post.model, fit, np.array([1.0, 0.0]))
        assert true_tv(post.model, fit) >= abs(p - 0.5)

    def test_node_doubling(self):
        mp, fit = beta_fit([20, 80])
        a = true_tv(mp.model, fit, grid=QuadratureGrid.build(1, 400))
        b = true_tv(mp.model, fit, grid=QuadratureGrid.build(1, 800))
        assert a == pytest.approx(b, abs=1e-6)

    def test_beta_rates(self):
        p = np.array([0.2, 0.8])
        rows = []
        for n in (50, 100, 200, 400):
            mp, fit = beta_fit(scaled_counts(p, n))
            sc = build_skew(mp.model, fit)
            rows.append((n, true_tv(mp.model, fit), true_tv(mp.model, fit, "skew_corrected", sc=sc)))
        assert loglog_slope([(n, a) for n, a, _ in rows]) == pytest.approx(-0.5, abs=0.1)
        assert loglog_slope([(n, b) for n, _, b in rows]) == pytest.approx(-1.0, abs=0.25)

    def test_skew_needs_correction(self, logreg_d2):
        with pytest.raises(ValueError):
            true_tv(logreg_d2[0].model, logreg_d2[1], "skew_corrected")
        with pytest.raises(ValueError):
            true_tv(logreg_d2[0].model, logreg_d2[1], "other")

    def test_ltv_quadrature_one_dimensional(self):
        m_n = 40.0
        from skewlap.model import ScalarPolynomialModel

        m = ScalarPolynomialModel([0, 0, 1, 0.5], n_scale=m_n)
        fit = fit_laplace(m, np.zeros(1))
        sc = build_skew(m, fit)
        t = abs(sc.tensor.to_dense()[0, 0, 0])
        assert ltv_quadrature(sc) == pytest.approx(t * 2 * np.sqrt(2 / np.pi) / 12, rel=1e-10)


class TestHalfspace:
    def test_gaussian_half(self, rng):
        m = QuadraticModel(random_spd(rng, 3))
        fit = fit_laplace(m, np.zeros(3))
        assert halfspace_probability(m, fit, rng.standard_normal(3)) == pytest.approx(0.5, abs=1e-12)

    def test_beta_cdf(self):
        from scipy.stats import beta

        mp, fit = beta_fit([30, 70])
        got = halfspace_probability(mp.model, fit, np.array([1.0]))
        assert got == pytest.approx(beta.sf(0.7, 71, 31), abs=1e-10)

    def test_population_model_symmetry(self):
        m = lg.PopulationLogistic(2, 200).model()
        fit = fit_laplace(m, np.eye(2)[0])
        # the second coordinate is symmetric about zero
        assert halfspace_probability(m, fit, np.array([0.0, 1.0])) == pytest.approx(0.5, abs=1e-10)
