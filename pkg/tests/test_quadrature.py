"""Gauss-Hermite grids and the expected-envelope operator."""

import numpy as np
import pytest
from scipy.special import ndtr

from mtl_asymptotics.losses import make_kernel
from mtl_asymptotics.quadrature import QuadratureGrid, gauss_hermite
from mtl_asymptotics.theory import expected_moreau


class TestNodes:
    def test_weights_normalized(self):
        for order in (8, 24, 48):
            _, w = gauss_hermite(order)
            assert abs(w.sum() - 1.0) < 1e-12

    def test_gaussian_moments(self):
        x, w = gauss_hermite(48)
        assert abs(w @ x) < 1e-12
        assert abs(w @ x**2 - 1.0) < 1e-10
        assert abs(w @ x**4 - 3.0) < 1e-9

    def test_order_floor(self):
        with pytest.raises(ValueError):
            QuadratureGrid(7)

    def test_channel_moment_identities(self, grid32):
        ch = grid32.channel("linear_regression", 0.5, 0.8)
        assert abs(ch.weight.sum() - 1.0) < 1e-12
        assert abs(ch.weight @ ch.s**2 - 1.0) < 1e-10
        assert abs(ch.weight @ ch.h**2 - 1.0) < 1e-10
        # the label variance is (1/rho)(ka + (1-ka)) = 1/rho
        assert ch.weight @ ch.y**2 == pytest.approx(1.0 / 0.8, abs=1e-10)

    def test_classification_mixture_weights(self, grid32):
        ch = grid32.channel("binary_classification", 0.5, 0.8)
        assert np.all((ch.p_plus >= 0) & (ch.p_plus <= 1))
        # P(Y=+1) = 1/2 by symmetry
        assert ch.weight @ ch.p_plus == pytest.approx(0.5, abs=1e-10)

    def test_channel_cache(self, grid32):
        a = grid32.channel("binary_classification", 0.25, 0.5)
        b = grid32.channel("binary_classification", 0.25, 0.5)
        assert a is b


class TestExpectedMoreau:
    def test_perfect_fit_channel(self, grid32):
        # r=0, kappa/alpha=1, q=1/sqrt(rho): the envelope point equals Y
        rho = 0.8
        v = expected_moreau("squared", "linear_regression",
                            1.0 / np.sqrt(rho), 0.0, 1.3, 1.0, rho, grid32)
        assert abs(v) < 1e-20

    def test_zero_point_closed_form(self, grid32):
        # q=r=0, rho=1, ka=0: E[M(0;b)] = E[Y^2]/(2(1+b)) with Y standard normal
        for b in (0.5, 1.0, 4.0):
            v = expected_moreau("squared", "linear_regression", 0.0, 0.0, b, 0.0, 1.0, grid32)
            assert v == pytest.approx(1.0 / (2 * (1 + b)), abs=1e-12)

    def test_regression_gaussian_moment_oracle(self, grid32):
        # squared loss: E[M] = E[(qS + rH - Y)^2] / (2(1+b)), a pure
        # Gaussian second moment
        q, r, b, ka, rho = 0.7, 0.4, 0.9, 0.6, 0.8
        c0 = 1 / np.sqrt(rho)
        expect = (r**2 + (q - c0 * np.sqrt(ka)) ** 2 + c0**2 * (1 - ka)) / (2 * (1 + b))
        v = expected_moreau("squared", "linear_regression", q, r, b, ka, rho, grid32)
        assert v == pytest.approx(expect, abs=1e-12)

    def test_classification_monte_carlo_oracle(self, grid48):
        # plain Monte-Carlo with 1e7 samples, 3 standard errors
        q, r, b, ka, rho = 1.0, 0.5, 0.7, 0.5, 0.8
        kernel = make_kernel("logistic")
        rng = np.random.default_rng(2024)
        n = 10_000_000
        s = rng.standard_normal(n)
        z = rng.standard_normal(n)
        h = rng.standard_normal(n)
        y = np.where(np.sqrt(ka) * s + np.sqrt(1 - ka) * z >= 0, 1.0, -1.0)
        a = q * s + r * h
        x = kernel.prox(y, a, b)
        m = kernel.value(y, x) + (x - a) ** 2 / (2 * b)
        mc, se = float(np.mean(m)), float(np.std(m) / np.sqrt(n))
        v = expected_moreau("logistic", "binary_classification", q, r, b, ka, rho, grid48)
        assert abs(v - mc) < 3 * se

    def test_degenerate_ka_one(self, grid32):
        # Z collapses; classification labels become sign(S)
        v = expected_moreau("logistic", "binary_classification", 0.5, 0.5, 1.0, 1.0, 0.8, grid32)
        ch = grid32.channel("binary_classification", 1.0, 0.8)
        assert set(np.unique(ch.p_plus)) <= {0.0, 1.0}
        assert np.isfinite(v)

    def test_order_doubling_consistency(self, grid24, grid48):
        # doubling the order moves values by < 1e-8
        cases = [
            ("squared", "linear_regression", 0.6, 0.8, 1.2, 0.5, 0.8),
            ("squared", "binary_classification", 0.6, 0.8, 1.2, 0.5, 0.8),
            ("logistic", "binary_classification", 1.1, 0.4, 0.6, 0.3, 0.6),
        ]
        for loss, mk, q, r, b, ka, rho in cases:
            lo = expected_moreau(loss, mk, q, r, b, ka, rho, grid24)
            hi = expected_moreau(loss, mk, q, r, b, ka, rho, grid48)
            assert abs(lo - hi) < 1e-8

    def test_invalid_inputs(self, grid32):
        with pytest.raises(ValueError):
            expected_moreau("squared", "linear_regression", 1, 1, 0.0, 0.5, 0.8, grid32)
        with pytest.raises(ValueError):
            expected_moreau("squared", "linear_regression", 1, 1, 1.0, 1.5, 0.8, grid32)

    def test_classification_scale_free_in_rho(self, grid32):
        # the sign channel is invariant to the 1/sqrt(rho) label scale
        a = expected_moreau("logistic", "binary_classification", 0.9, 0.7, 1.1, 0.4, 0.3, grid32)
        b = expected_moreau("logistic", "binary_classification", 0.9, 0.7, 1.1, 0.4, 0.9, grid32)
        assert a == pytest.approx(b, abs=1e-14)

    def test_mixture_probability_values(self, grid32):
        ch = grid32.channel("binary_classification", 0.5, 0.7)
        c = np.sqrt(0.5)
        d = np.sqrt(0.5)
        assert np.allclose(ch.p_plus, ndtr(c * ch.s / d))
