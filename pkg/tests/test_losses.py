"""Loss kernels: closed forms, grid-search oracles, envelope properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtl_asymptotics.losses import LogisticLoss, SquaredLoss, make_kernel

SQ = SquaredLoss()
LG = LogisticLoss()

finite = st.floats(-8.0, 8.0, allow_nan=False)
b_pos = st.floats(1e-3, 1e3, allow_nan=False)
label = st.sampled_from([-1.0, 1.0])


def grid_search_min(kernel, y, a, b, lo=-20.0, hi=20.0, step=1e-6):
    """Dense-grid oracle for the envelope's inner minimization."""
    xs = np.arange(lo, hi, step)
    vals = kernel.value(y, xs) + (xs - a) ** 2 / (2.0 * b)
    i = int(np.argmin(vals))
    return xs[i], float(vals[i])


class TestValues:
    def test_squared_at_fit_point(self):
        assert SQ.value(2.0, 2.0) == 0.0

    def test_logistic_symmetric_point(self):
        assert LG.value(1.0, 0.0) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_logistic_no_overflow(self):
        # extended-precision value: log(1 + e^50) = 50.000000000000000000000193...
        assert LG.value(-1.0, 50.0) == pytest.approx(50.0, abs=1e-12)
        assert np.isfinite(LG.value(1.0, -800.0))

    def test_factory(self):
        assert make_kernel("squared").kind == "squared"
        assert make_kernel("logistic").kind == "logistic"
        with pytest.raises(ValueError):
            make_kernel("hinge")


class TestProx:
    def test_squared_closed_form(self):
        assert SQ.prox(0.0, 3.0, 1.0) == pytest.approx(1.5, abs=1e-15)

    def test_logistic_frozen_oracle(self):
        # dense grid + 40-digit root refinement of x - a - b*sigma(-x) = 0
        assert LG.prox(1.0, 1.0, 2.0) == pytest.approx(1.396685271437143, abs=1e-10)

    def test_logistic_small_b_limit(self):
        for a in (-2.0, 0.3, 5.0):
            assert LG.prox(1.0, a, 1e-10) == pytest.approx(a, abs=1e-9)

    def test_b_validation(self):
        with pytest.raises(ValueError):
            LG.prox(1.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            SQ.moreau(1.0, 0.0, -1.0)

    def test_grid_oracle_on_random_triples(self, rng):
        y = np.where(rng.random(50) < 0.5, 1.0, -1.0)
        a = rng.uniform(-5, 5, 50)
        for b in (0.1, 1.0, 7.5):
            x = LG.prox(y, a, b)
            for j in range(0, 50, 7):
                x_star, _ = grid_search_min(LG, y[j], a[j], b)
                assert abs(x[j] - x_star) < 1e-5

    def test_residual_tolerance(self, rng):
        from scipy.special import expit

        y = np.where(rng.random(512) < 0.5, 1.0, -1.0)
        a = rng.normal(size=512) * 4
        for b in (1e-4, 0.5, 30.0, 1e6):
            x = LG.prox(y, a, b)
            g = x - a - b * y * expit(-x * y)
            assert np.max(np.abs(g)) < 1e-12

    @given(y=label, a1=finite, a2=finite, b=b_pos)
    @settings(max_examples=60, deadline=None)
    def test_firm_nonexpansiveness(self, y, a1, a2, b):
        p1 = LG.prox(y, a1, b)
        p2 = LG.prox(y, a2, b)
        assert abs(p1 - p2) <= abs(a1 - a2) + 1e-10


class TestMoreau:
    def test_squared_zero_at_fit(self):
        for b in (0.1, 1.0, 10.0):
            assert SQ.moreau(1.0, 1.0, b) == 0.0

    def test_squared_closed_form_value(self):
        assert SQ.moreau(0.0, 2.0, 1.0) == pytest.approx(1.0, abs=1e-15)

    def test_logistic_frozen_oracle(self):
        # min over a dense grid, refined to 40 digits
        assert LG.moreau(1.0, 0.7, 0.9) == pytest.approx(0.36167816208936893, abs=1e-8)

    def test_against_grid_search(self, rng):
        for _ in range(5):
            y = float(rng.choice([-1.0, 1.0]))
            a = float(rng.uniform(-4, 4))
            b = float(rng.uniform(0.2, 4.0))
            _, m_star = grid_search_min(LG, y, a, b)
            assert LG.moreau(y, a, b) == pytest.approx(m_star, abs=1e-8)

    def test_squared_generic_path_matches_closed_form(self, rng):
        # route the squared loss through the generic prox-based envelope
        y = rng.normal(size=40)
        a = rng.normal(size=40)
        for b in (0.05, 1.0, 20.0):
            x = SQ.prox(y, a, b)
            generic = SQ.value(y, x) + (x - a) ** 2 / (2.0 * b)
            assert np.max(np.abs(generic - SQ.moreau(y, a, b))) < 1e-12

    @given(y=label, a=finite, b1=b_pos, b2=b_pos)
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_b(self, y, a, b1, b2):
        lo, hi = sorted((b1, b2))
        assert LG.moreau(y, a, lo) >= LG.moreau(y, a, hi) - 1e-12

    @given(y=label, a=finite, b=b_pos)
    @settings(max_examples=60, deadline=None)
    def test_dominated_by_loss(self, y, a, b):
        assert LG.moreau(y, a, b) <= LG.value(y, a) + 1e-12

    def test_gradient_matches_finite_differences(self, rng):
        h = 1e-6
        for kernel in (SQ, LG):
            y = np.where(rng.random(30) < 0.5, 1.0, -1.0)
            a = rng.uniform(-4, 4, 30)
            for b in (0.3, 2.0):
                g = kernel.moreau_grad(y, a, b)
                fd = (kernel.moreau(y, a + h, b) - kernel.moreau(y, a - h, b)) / (2 * h)
                assert np.max(np.abs(g - fd)) < 1e-6


class TestDerivatives:
    def test_logistic_grad_hess(self, rng):
        y = np.where(rng.random(30) < 0.5, 1.0, -1.0)
        x = rng.uniform(-6, 6, 30)
        h = 1e-6
        fd_g = (LG.value(y, x + h) - LG.value(y, x - h)) / (2 * h)
        assert np.max(np.abs(LG.grad(y, x) - fd_g)) < 1e-6
        fd_h = (LG.grad(y, x + h) - LG.grad(y, x - h)) / (2 * h)
        assert np.max(np.abs(LG.hess(y, x) - fd_h)) < 1e-5

    def test_convexity_hessians_nonnegative(self, rng):
        x = rng.uniform(-30, 30, 100)
        assert np.all(LG.hess(1.0, x) >= 0)
        assert np.all(SQ.hess(1.0, x) > 0)
