import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fitted
from skewlap import multinomial as mn
from skewlap.diagnostics import weighted_opnorm
from skewlap.skew import build_skew, mean_shift


def counts_strategy(max_d=6):
    return st.lists(st.integers(1, 10_000), min_size=2, max_size=max_d + 1)


class TestBuild:
    def test_fields(self):
        mp = mn.build([30, 40, 20, 10])
        assert mp.n == 100 and mp.dim == 3
        assert mp.freqs.sum() == pytest.approx(1.0)
        assert mp.p_min == 0.1
        np.testing.assert_allclose(mp.mode, [0.4, 0.2, 0.1])

    @pytest.mark.parametrize("bad", [[0, 3], [3], [1.5, 2], [-1, 4], [[1, 2], [3, 4]]])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            mn.build(bad)

    def test_hessian_at_mode(self, dirichlet4):
        mp, fit = dirichlet4
        p0, pd = mp.freqs[0], mp.freqs[1:]
        np.testing.assert_allclose(fit.hess, mp.n * (np.diag(1 / pd) + 1 / p0), rtol=1e-12)
        np.testing.assert_allclose(fit.covariance(), (np.diag(pd) - np.outer(pd, pd)) / mp.n, rtol=1e-10, atol=1e-16)

    def test_value_off_domain(self):
        m = mn.build([2, 3, 4]).model
        assert not m.domain_guard(np.array([0.6, 0.5]))
        assert m.value_batch(np.array([[0.6, 0.5], [0.2, 0.2]]))[0] == np.inf

    def test_read_counts(self, tmp_path):
        f = tmp_path / "c.csv"
        f.write_text("count\n3\n5\n\n7\n")
        np.testing.assert_array_equal(mn.read_counts(f), [3, 5, 7])


class TestExact:
    def test_worked_example(self):
        ex = mn.exact_quantities(mn.build([30, 40, 20, 10]))
        np.testing.assert_allclose(ex["mean"], np.array([31, 41, 21, 11]) / 104, rtol=1e-15)
        np.testing.assert_allclose(ex["mode"], [0.3, 0.4, 0.2, 0.1])
        assert np.abs(ex["mean_minus_mode_identity"]).max() <= 1e-14

    def test_uniform(self):
        for d in (1, 2, 5):
            mp = mn.build([7] * (d + 1))
            ex = mn.exact_quantities(mp)
            np.testing.assert_allclose(ex["delta_mode"], 0.0, atol=1e-15)
            assert ex["chi2_unif"] == pytest.approx(0.0, abs=1e-12)
            pm = 1 / (d + 1)
            expected = 2 * (1 - 2 * pm) / math.sqrt(1 - pm) * d / math.sqrt(mp.n * pm)
            assert ex["eps3_exact"] == pytest.approx(expected)

    def test_symmetric_beta(self):
        ex = mn.exact_quantities(mn.build([40, 40]))
        assert ex["eps3_exact"] == 0.0
        assert ex["eps_bar3_exact"] == 0.0

    def test_skew_norm_matches_generic(self, dirichlet4):
        mp, fit = dirichlet4
        ex = mn.exact_quantities(mp)
        assert fit.hnorm(mean_shift(mp.model, fit)) == pytest.approx(ex["skew_norm"], rel=1e-10)

    def test_remainder_norm(self, dirichlet4):
        mp, fit = dirichlet4
        ex = mn.exact_quantities(mp)
        rem = (ex["mean"] - ex["mode"] - ex["delta_mode"])[1:]
        assert fit.hnorm(rem) == pytest.approx(ex["remainder_norm"], rel=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(counts_strategy(8))
    def test_generic_pipeline_matches(self, counts):
        mp = mn.build(counts)
        fit = fitted(mp.model, np.full(mp.dim, 1 / (mp.dim + 1)))
        ex = mn.exact_quantities(mp)
        sc = build_skew(mp.model, fit)
        np.testing.assert_allclose(sc.delta_mode, ex["delta_mode"][1:], rtol=1e-10, atol=1e-14 / mp.n)
        assert sc.eps_bar3 == pytest.approx(ex["eps_bar3_exact"], rel=1e-8, abs=1e-14)
        np.testing.assert_allclose(fit.mode, mp.freqs[1:], rtol=1e-10)

    def test_opnorm_reaches_c3(self):
        for counts in ([200, 100], [50, 30, 20], [10, 20, 30, 40, 50]):
            mp = mn.build(counts)
            fit = fitted(mp.model, np.full(mp.dim, 1 / (mp.dim + 1)))
            res = weighted_opnorm(mp.model, fit, 3, restarts=50)
            assert res.estimate == pytest.approx(mn.c3_exact(mp.p_min), rel=1e-2)

    def test_two_block_is_exact_in_one_dimension(self):
        mp = mn.build([300, 100])
        fit = fitted(mp.model, np.array([0.5]))
        for k in (3, 4, 5):
            res = weighted_opnorm(mp.model, fit, k, restarts=3)
            assert res.estimate == pytest.approx(mn.ck_two_block(k, mp.freqs), rel=1e-8)
        assert mn.ck_two_block(3, mp.freqs) == pytest.approx(mn.c3_exact(0.25))

    def test_two_block_lower_bounds_opnorm(self):
        mp = mn.build([10, 20, 30, 40])
        fit = fitted(mp.model, np.full(3, 0.25))
        for k in (3, 4):
            res = weighted_opnorm(mp.model, fit, k, restarts=30)
            assert res.estimate >= mn.ck_two_block(k, mp.freqs) * (1 - 1e-9)


class TestLowerBound:
    def test_uniform_absent(self):
        assert mn.tv_lower_bound(mn.build([10] * 5)) is None

    def test_large_d_present(self):
        p = np.concatenate([[0.5], np.full(19, 0.5 / 19)])
        assert mn.tv_from_uniform(p) == pytest.approx(0.45)
        assert mn.tv_lower_bound_from_freqs(p, 1e6) == pytest.approx(0.00095, rel=1e-12)

    def test_small_d_absent(self):
        assert mn.tv_lower_bound_from_freqs([0.7, 0.1, 0.1, 0.1], 1e4) is None

    def test_rejects_non_pmf(self):
        with pytest.raises(Exception):
            mn.tv_lower_bound_from_freqs([0.5, 0.6], 100)

    def test_chi2(self):
        assert mn.chi2_from_uniform([0.5, 0.5]) == pytest.approx(0.0)
        assert mn.chi2_from_uniform([0.2, 0.8]) == pytest.approx((5 + 1.25) / 4 - 1)
