import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import gamma, kv
from scipy.stats import norm

from mechinfo.bayesopt import (GP, bayes_optimize, constrained_suggest, expected_improvement,
                               gp_fit, matern25, probability_feasible, read_trace)
from mechinfo.errors import InvalidInputError


def matern_bessel(r, length, nu=2.5):
    s = math.sqrt(2 * nu) * r / length
    return 2 ** (1 - nu) / gamma(nu) * s ** nu * kv(nu, s)


class TestKernel:
    def test_zero_distance(self):
        assert matern25(0.0, 0.7, 3.2) == 3.2

    def test_unit(self):
        want = (1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5))
        assert matern25(1.0, 1.0) == pytest.approx(want, rel=1e-14)
        assert matern25(1.0, 1.0) == pytest.approx(0.5239941, abs=1e-7)
        assert matern25(1.0, 1.0) == pytest.approx(matern_bessel(1.0, 1.0), rel=1e-12)

    @given(st.floats(0.01, 20), st.floats(0.1, 5))
    def test_bessel_form(self, r, length):
        assert matern25(r, length) == pytest.approx(matern_bessel(r, length), rel=1e-9)

    def test_monotone_decay(self):
        v = matern25(np.linspace(0, 50, 200), 1.0)
        assert np.all(np.diff(v) <= 0) and v[-1] < 1e-30

    @given(st.integers(0, 1000), st.floats(0.05, 3))
    def test_psd(self, seed, length):
        z = np.random.default_rng(seed).random((20, 3))
        d = np.linalg.norm(z[:, None] - z[None], axis=-1)
        assert np.linalg.eigvalsh(matern25(d, length)).min() >= -1e-8


class TestGP:
    def test_single_design_noise(self):
        # one noisy observation, prior much wider than the noise
        gp = GP(([0.0], [1.0]), noise_var=0.01).fit([[0.5]], [2.0], optimize=False,
                                                     theta0=1e4, length=1.0)
        mu, var = gp.predict([[0.5]])
        assert mu[0] == pytest.approx(2.0, abs=1e-2)
        assert var[0] == pytest.approx(0.01, rel=1e-3)

    def test_replicate_mean(self, rng):
        y = 1.0 + 0.1 * rng.normal(size=10)
        z = np.full((10, 1), 0.3)
        gp = GP(([0.0], [1.0]), noise_var=0.01).fit(z, y, optimize=False, theta0=1.0,
                                                    length=0.5)
        mu, _ = gp.predict([[0.3]])
        assert abs(mu[0] - y.mean()) < 2 * y.std(ddof=1) / math.sqrt(10)

    def test_linear_function(self, rng):
        z = rng.random((20, 2))
        f = lambda a: 2 * a[:, 0] - a[:, 1] + 0.5
        gp = gp_fit(z, f(z), 0.0, bounds=([0, 0], [1, 1]))
        zt = 0.1 + 0.8 * rng.random((10, 2))
        mu, _ = gp.predict(zt)
        np.testing.assert_allclose(mu, f(zt), atol=1e-2)

    def test_variance_at_training(self, rng):
        z = rng.random((15, 2))
        gp = gp_fit(z, np.sin(3 * z[:, 0]), 1e-4, bounds=([0, 0], [1, 1]))
        _, var = gp.predict(z)
        assert np.all(var <= 1e-4 + 1e-8)

    def test_bad_bounds(self):
        with pytest.raises(InvalidInputError):
            GP(([1.0], [0.0]))


class TestEI:
    def test_zero_sigma(self):
        assert expected_improvement(1.0, 0.0, 1.0) == 0.0

    def test_pdf_value(self):
        assert expected_improvement(1.01, 1.0, 1.0, 0.01) == pytest.approx(
            1 / math.sqrt(2 * math.pi), rel=1e-12)

    @given(st.floats(-3, 0.99), st.floats(0.01, 3))
    def test_monotone(self, mu, sigma):
        h = 1e-6
        assert expected_improvement(mu + h, sigma, 1.0) >= expected_improvement(mu, sigma, 1.0)
        assert expected_improvement(mu, sigma + h, 1.0) >= expected_improvement(mu, sigma, 1.0)

    @given(st.floats(-5, 5), st.floats(0, 5), st.floats(-5, 5))
    def test_non_negative(self, mu, sigma, f):
        assert expected_improvement(mu, sigma, f) >= 0

    def test_matches_formula(self):
        mu, s, f, xi = 0.3, 0.7, 0.1, 0.01
        z = (mu - f - xi) / s
        want = (mu - f - xi) * norm.cdf(z) + s * norm.pdf(z)
        assert expected_improvement(mu, s, f, xi) == pytest.approx(want, rel=1e-14)


class TestSuggest:
    @pytest.fixture
    def surrogate(self, rng):
        z = rng.random((12, 2))
        y = -((z - 0.6) ** 2).sum(1)
        return gp_fit(z, y, 1e-8, bounds=([0, 0], [1, 1])), y.max()

    def test_in_bounds(self, surrogate, rng):
        gp, best = surrogate
        for _ in range(3):
            z = constrained_suggest(gp, None, ([0, 0], [1, 1]), best, rng, n_candidates=64)
            assert np.all(z >= 0) and np.all(z <= 1)

    def test_inactive_constraint(self, surrogate, rng):
        gp, best = surrogate
        zc = rng.random((10, 2))
        cgp = gp_fit(zc, np.full(10, 0.9) + 1e-3 * zc[:, 0], 1e-8, bounds=([0, 0], [1, 1]))
        assert probability_feasible(cgp, zc).min() > 0.999
        a = constrained_suggest(gp, None, ([0, 0], [1, 1]), best, np.random.default_rng(1))
        b = constrained_suggest(gp, cgp, ([0, 0], [1, 1]), best, np.random.default_rng(1))
        np.testing.assert_allclose(a, b, atol=1e-3)


def toy(z, it):
    return -float(np.sum((np.asarray(z) - [0.3, 0.7]) ** 2))


class TestLoop:
    def test_toy_and_trace(self, tmp_path):
        path = tmp_path / "t.csv"
        tr = bayes_optimize(toy, ([0, 0], [1, 1]), budget=25, seed=0, trace_path=path,
                            n_candidates=256)
        assert np.all(np.diff(tr.best_curve) >= 0)
        back = read_trace(path, "maximize")
        assert len(back.rows) == 25
        np.testing.assert_array_equal(back.best_curve, tr.best_curve)

    def test_minimize_monotone(self):
        tr = bayes_optimize(lambda z, it: -toy(z, it), ([0, 0], [1, 1]), budget=15, seed=1,
                            direction="minimize", n_candidates=128)
        assert np.all(np.diff(tr.best_curve) <= 0)

    def test_resume_identical(self, tmp_path):
        full = bayes_optimize(toy, ([0, 0], [1, 1]), budget=16, seed=3, n_candidates=128,
                              trace_path=tmp_path / "a.csv")
        bayes_optimize(toy, ([0, 0], [1, 1]), budget=12, seed=3, n_candidates=128,
                       trace_path=tmp_path / "b.csv")
        resumed = bayes_optimize(toy, ([0, 0], [1, 1]), budget=16, seed=3, n_candidates=128,
                                 trace_path=tmp_path / "b.csv", resume=True)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        np.testing.assert_array_equal(full.best_curve, resumed.best_curve)

    def test_constraint_respected(self):
        con = lambda z: 1.0 - z[0]  # feasible when z0 <= 0.8
        tr = bayes_optimize(lambda z, it: float(z[0]), ([0, 0], [1, 1]), budget=20, seed=0,
                            constraint=con, threshold=0.2, n_candidates=128)
        assert all(r.design[0] <= 0.8 + 1e-12 for r in tr.rows if r.feasible)
        assert not any(r.feasible for r in tr.rows if r.material < 0.2)

    def test_budget_check(self):
        with pytest.raises(InvalidInputError):
            bayes_optimize(toy, ([0, 0], [1, 1]), budget=3)
