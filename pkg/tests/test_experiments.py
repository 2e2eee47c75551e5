import xml.etree.ElementTree as ET

import numpy as np
import pytest

from skewlap import experiments as ex
from skewlap.laplace import fit_laplace
from skewlap.model import QuadraticModel, SkewLapError, UnsupportedError
from skewlap.quadrature import halfspace_probability, true_mean
from skewlap.skew import build_skew, corrected_integral_mc, mean_shift


class TestSlope:
    def test_examples(self):
        assert ex.loglog_slope([(1, 1), (10, 0.1)]) == pytest.approx(-1.0)
        assert ex.loglog_slope([(1, 2), (4, 1), (16, 0.5)]) == pytest.approx(-0.5)

    @pytest.mark.parametrize("pts", [[(1, 1)], [(1, 1), (2, 0)], [(0, 1), (2, 1)], [(2, 1), (2, 3)]])
    def test_errors(self, pts):
        with pytest.raises(ValueError):
            ex.loglog_slope(pts)


class TestTables:
    def test_roundtrip(self, tmp_path):
        rows = [{"n": 20, "err": 0.1 + 0.2, "label": "a", "bound": None},
                {"n": 40, "err": 1e-17 / 3, "label": "b", "bound": 2.5}]
        ex.write_table(rows, tmp_path / "t.csv")
        assert ex.read_table(tmp_path / "t.csv") == rows

    def test_empty(self, tmp_path):
        with pytest.raises(ValueError):
            ex.write_table([], tmp_path / "t.csv")

    def test_svg_is_well_formed(self, tmp_path):
        series = [{"label": "a", "x": [1, 10, 100], "y": [1, 0.3, 0.1], "lo": [0.9, 0.2, 0.05], "hi": [1.1, 0.4, 0.2]},
                  {"label": "b", "x": [1, 10, 100], "y": [0.5, 0.05, 0.005]}]
        ex.render_loglog_svg(series, tmp_path / "p.svg", "t", "n", "err")
        root = ET.parse(tmp_path / "p.svg").getroot()
        assert root.tag.endswith("svg")
        assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 2


class TestHelpers:
    def test_scaled_counts(self):
        c = ex.scaled_counts([0.2, 0.8], 50)
        assert c.sum() == 50 and list(c) == [10, 40]
        c = ex.scaled_counts([1 / 3, 1 / 3, 1 / 3], 100)
        assert c.sum() == 100 and c.min() >= 33

    def test_replicate_seed_stable(self):
        assert ex.replicate_seed(0, 20, 1) == ex.replicate_seed(0, 20, 1)
        assert ex.replicate_seed(0, 20, 1) != ex.replicate_seed(0, 20, 2)
        assert 0 <= ex.replicate_seed(5, 1) < 2**63

    def test_replicate_redraws_until_mode_exists(self):
        r = ex.logistic_replicate(6, 2, seed=0, rep=0)
        assert r.attempts >= 1
        assert np.all(np.isfinite(r.fit.mode))

    def test_replicate_gives_up(self, monkeypatch):
        monkeypatch.setattr(ex, "MAX_REDRAWS", 2)
        with pytest.raises(SkewLapError):
            ex.logistic_replicate(2, 3, seed=0, rep=0)


class TestQuadraticSanity:
    def test_mean_errors_vanish(self, rng):
        A = rng.standard_normal((2, 2))
        m = QuadraticModel(A @ A.T + np.eye(2), center=np.array([0.5, -0.2]))
        fit = fit_laplace(m, m.center)
        truth = true_mean(m, fit)
        assert fit.hnorm(truth - fit.mode) <= 1e-8
        assert fit.hnorm(truth - fit.mode - mean_shift(m, fit)) <= 1e-8

    def test_probability_errors_vanish(self):
        m = QuadraticModel(np.diag([3.0, 2.0]))
        fit = fit_laplace(m, np.zeros(2))
        p = halfspace_probability(m, fit, np.array([1.0, 0.0]))
        mc = corrected_integral_mc(build_skew(m, fit), lambda X: (X[:, 0] >= 0).astype(float), 10_000, 0, True)
        assert abs(p - 0.5) < 1e-12 and abs(p - mc.estimate) < 1e-12


class TestSmallRuns:
    def test_mean_rate_shape_and_determinism(self):
        a = ex.run_mean_rate([20, 40], replicates=2, seed=1, nodes_per_axis=100)
        b = ex.run_mean_rate([20, 40], replicates=2, seed=1, nodes_per_axis=100)
        assert a.rows == b.rows and a.slopes == b.slopes
        assert {"n", "err_uncorrected", "err_corrected", "err_corrected_q25"} <= set(a.rows[0])
        assert a.to_dict()["kind"] == "mean-rate"

    def test_prob_rate_worker_independent(self):
        a = ex.run_prob_rate([20, 40], replicates=2, mc_count=20_000, nodes_per_axis=100, workers=1)
        b = ex.run_prob_rate([20, 40], replicates=2, mc_count=20_000, nodes_per_axis=100, workers=2)
        assert a.rows == b.rows

    def test_dim_scan_small(self):
        res = ex.run_dim_scan([3, 4], replicates=2, mc_count=2000)
        assert len(res.rows) == 4
        assert set(res.slopes) == {"ltv_d2.5", "delta_d2.5", "ltv_2d2_max_over_min"}

    def test_rate_dimension_limit(self):
        with pytest.raises(UnsupportedError):
            ex.run_mean_rate([20, 40], d=4)

    def test_multinomial_exact_report(self):
        out = ex.run_multinomial_exact([30, 40, 20, 10], mc_count=2000)
        assert out["mean_identity_residual"] <= 1e-12
        assert out["eps_bar3"]["generic"] == pytest.approx(out["eps_bar3"]["exact"], rel=1e-10)
        assert "quadrature" not in out

    def test_multinomial_exact_one_dimensional(self):
        small = ex.run_multinomial_exact([20, 80], mc_count=2000)["quadrature"]
        big = ex.run_multinomial_exact([80, 320], mc_count=2000)["quadrature"]
        rel = [abs(q["tv_laplace"] - q["ltv"]) / q["tv_laplace"] for q in (small, big)]
        assert rel[0] <= 0.5 and rel[1] < rel[0]

    def test_multinomial_uniform(self):
        out = ex.run_multinomial_exact([25, 25, 25], mc_count=2000)
        assert out["tv_lower_bound"] is None
        assert max(abs(v) for v in out["delta_mode"]["generic"]) < 1e-15

    def test_multinomial_scan_dimension_limit(self):
        with pytest.raises(UnsupportedError):
            ex.run_multinomial_scan([0.25] * 4, [100, 200])


def test_bundled_derivative_suite_small():
    results = ex.derivative_check_suite(points=2)
    assert {name for name, _ in results} == {"quadratic", "dirichlet", "logistic", "population-logistic"}
    assert all(r.passed for _, r in results)
