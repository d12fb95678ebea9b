"""Deterministic saddle-point problems predicting the asymptotic errors.

Four deterministic programs are solved here, all of the shape

    min_{q, r >= 0}  max_{eta}   quadratic(q, r; eta) + E[ M(r*H + q*S; b(eta)) ]

with standard Gaussians ``S, H`` and a label ``Y`` entering the envelope:

* the symmetric fixed-``T`` problem, whose q-quadratic carries the coupling
  factor ``G(T, eta)`` and whose envelope scale is
  ``kappa/(gamma2+eta) * (1 + gamma2/(eta*T))``;
* its ``T -> infinity`` limit with q-coefficient
  ``(gamma2+eta) * (1 - gamma2*rho/(eta+gamma2*rho))`` and scale
  ``kappa/(gamma2+eta)``;
* the separate (alignment-regularized) problem whose q-quadratic is the
  constant ``gamma1 + gamma2 - gamma2*R``;
* the general per-task problem over ``(q_t, r_t, eta_t)`` coupled through
  ``q' B^{-1} q / 2`` with ``B = C^{-1} o L`` (Hadamard) and per-task envelope
  scales ``kappa_t * (C^{-1})_tt``, maximized over the region where the
  coupling matrix ``C`` stays positive definite.

The scalar problems maximize over ``eta`` on a log grid followed by root
bisection of the analytic eta-derivative; the outer (q, r) minimization uses
a coarse grid, a Nelder-Mead restart and a projected-gradient polish with
envelope-theorem gradients.  The general problem nests an ascent over
``eta`` (safeguarded against leaving the positive-definite cone) inside an
L-BFGS-B descent over the nonnegative ``(q, r)`` block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import brentq, minimize

from .losses import LossKernel, make_kernel
from .quadrature import QuadratureGrid

__all__ = [
    "SaddleSolution",
    "CouplingMatrices",
    "CouplingMatrixError",
    "expected_moreau",
    "g_coupling",
    "symmetric_q_coefficient",
    "symmetric_envelope_scale",
    "infinite_q_coefficient",
    "coupling_matrices",
    "solve_symmetric",
    "solve_infinite_T",
    "solve_separate_asymptotic",
    "solve_general",
    "default_grid",
]

# eta search window (log-spaced); endpoints double as "unattained sup" flags.
ETA_LO = 1e-10
ETA_HI = 1e12

_DEFAULT_GRID: QuadratureGrid | None = None


def default_grid() -> QuadratureGrid:
    """Shared Gauss-Hermite grid at the default order (48 per dimension)."""
    global _DEFAULT_GRID
    if _DEFAULT_GRID is None:
        _DEFAULT_GRID = QuadratureGrid()
    return _DEFAULT_GRID


def _as_kernel(kernel: LossKernel | str) -> LossKernel:
    if isinstance(kernel, str):
        return make_kernel(kernel)
    return kernel


# ---------------------------------------------------------------------------
# Expected Moreau envelope and its derivatives
# ---------------------------------------------------------------------------

def _envelope_terms(kernel: LossKernel, y, a, b: float):
    """Pointwise envelope value and a-derivative sharing one prox solve."""
    if kernel.kind == "squared":
        ma = (a - y) / (1.0 + b)
        return 0.5 * (a - y) * ma, ma
    x = kernel.prox(y, a, b)
    ma = (a - x) / b
    return kernel.value(y, x) + 0.5 * b * ma * ma, ma


def _envelope_stats(kernel, channel, q: float, r: float, b: float):
    """(E[M], dE/dq, dE/dr, dE/db) at the envelope point q*S + r*H."""
    a = q * channel.s + r * channel.h
    w = channel.weight
    if channel.p_plus is None:
        m, ma = _envelope_terms(kernel, channel.y, a, b)
        val = w @ m
        ma_w = w * ma
        d_q = ma_w @ channel.s
        d_r = ma_w @ channel.h
        d_b = -0.5 * (w @ (ma * ma))
    else:
        # single prox sweep over both label branches
        n = a.size
        a2 = np.concatenate([a, a])
        y2 = np.empty(2 * n)
        y2[:n] = 1.0
        y2[n:] = -1.0
        m2, ma2v = _envelope_terms(kernel, y2, a2, b)
        pp = channel.p_plus
        pm = 1.0 - pp
        m = pp * m2[:n] + pm * m2[n:]
        ma = pp * ma2v[:n] + pm * ma2v[n:]
        ma_sq = pp * ma2v[:n] ** 2 + pm * ma2v[n:] ** 2
        val = w @ m
        ma_w = w * ma
        d_q = ma_w @ channel.s
        d_r = ma_w @ channel.h
        d_b = -0.5 * (w @ ma_sq)
    return float(val), float(d_q), float(d_r), float(d_b)


def _envelope_valgrad_b(kernel, channel, q: float, r: float, bs: np.ndarray):
    """Batched (E[M], dE/db) across several envelope scales at one (q, r)."""
    a = (q * channel.s + r * channel.h)[None, :]
    bs = np.asarray(bs, dtype=float)[:, None]
    w = channel.weight
    if channel.p_plus is None:
        m, ma = _envelope_terms(kernel, channel.y[None, :], a, bs)
        vals = m @ w
        d_bs = -0.5 * ((ma * ma) @ w)
    else:
        n = channel.s.size
        a2 = np.concatenate([a, a], axis=1)
        y2 = np.empty((1, 2 * n))
        y2[0, :n] = 1.0
        y2[0, n:] = -1.0
        m2, ma2v = _envelope_terms(kernel, y2, a2, bs)
        pp = channel.p_plus
        pm = 1.0 - pp
        m = pp * m2[:, :n] + pm * m2[:, n:]
        ma_sq = pp * ma2v[:, :n] ** 2 + pm * ma2v[:, n:] ** 2
        vals = m @ w
        d_bs = -0.5 * (ma_sq @ w)
    return vals, d_bs


def expected_moreau(
    kernel: LossKernel | str,
    model_kind: str,
    q: float,
    r: float,
    b: float,
    kappa_over_alpha: float,
    rho: float,
    grid: QuadratureGrid | None = None,
) -> float:
    """E[M(r*H + q*S; b)] under the label channel of the given model kind.

    Regression integrates the full (S, Z, H) tensor (with the closed-form
    squared-loss envelope when that kernel is used); classification
    integrates Z analytically into a two-branch mixture over Y = +-1 and
    quadratures (S, H) only.
    """
    if not float(b) > 0.0:
        raise ValueError(f"envelope parameter b must be positive, got {b}")
    kernel = _as_kernel(kernel)
    grid = grid or default_grid()
    channel = grid.channel(model_kind, kappa_over_alpha, rho)
    val, _, _, _ = _envelope_stats(kernel, channel, float(q), float(r), float(b))
    return val


# ---------------------------------------------------------------------------
# Coefficients of the symmetric problems
# ---------------------------------------------------------------------------

def g_coupling(T: float, eta, gamma2: float, rho: float):
    """Coupling attenuation G(T, eta); equals 1 when rho = 0 or gamma2 = 0."""
    eta = np.asarray(eta, dtype=float)
    return 1.0 - gamma2 * rho * T / (eta * T + gamma2 * (1.0 - rho + rho * T))


def symmetric_q_coefficient(T: float, eta, gamma2: float, rho: float):
    """q^2-coefficient (gamma2+eta) / (1 + (1-rho)*gamma2/(eta*T)) * G(T, eta)."""
    eta = np.asarray(eta, dtype=float)
    lead = (gamma2 + eta) / (1.0 + (1.0 - rho) * gamma2 / (eta * T))
    return lead * g_coupling(T, eta, gamma2, rho)


def _symmetric_q_coefficient_deriv(T: float, eta: float, gamma2: float, rho: float) -> float:
    # derivative of the equivalent rational form (gamma2+eta)*eta*T / D
    D = eta * T + gamma2 * (1.0 - rho + rho * T)
    return T * ((gamma2 + 2.0 * eta) * D - (gamma2 + eta) * eta * T) / (D * D)


def symmetric_envelope_scale(T: float, eta, gamma2: float, kappa: float):
    """Envelope parameter kappa/(gamma2+eta) * (1 + gamma2/(eta*T))."""
    eta = np.asarray(eta, dtype=float)
    return kappa / (gamma2 + eta) * (1.0 + gamma2 / (eta * T))


def _symmetric_envelope_scale_deriv(T: float, eta: float, gamma2: float, kappa: float) -> float:
    den = T * eta * (gamma2 + eta)
    return -kappa * T * (T * eta * eta + 2.0 * gamma2 * eta + gamma2 * gamma2) / (den * den)


def infinite_q_coefficient(eta, gamma2: float, rho: float):
    """T -> infinity q^2-coefficient (gamma2+eta)*(1 - gamma2*rho/(eta+gamma2*rho))."""
    eta = np.asarray(eta, dtype=float)
    return (gamma2 + eta) * (1.0 - gamma2 * rho / (eta + gamma2 * rho))


def _infinite_q_coefficient_deriv(eta: float, gamma2: float, rho: float) -> float:
    den = eta + gamma2 * rho
    return (eta * eta + 2.0 * gamma2 * rho * eta + gamma2 * gamma2 * rho) / (den * den)


# ---------------------------------------------------------------------------
# Solutions
# ---------------------------------------------------------------------------

@dataclass
class SaddleSolution:
    """Optimal (q, r, eta) of a deterministic saddle problem.

    Scalar problems store length-1 arrays; the general problem stores
    per-task values.  ``residual`` is the worst first-order (KKT) violation;
    ``active_bounds`` names variables pinned at their bound (e.g. "q[0]").
    """

    q: np.ndarray
    r: np.ndarray
    eta: np.ndarray
    value: float
    converged: bool
    residual: float
    iterations: int = 0
    active_bounds: tuple = ()

    @property
    def q_scalar(self) -> float:
        return float(self.q[0])

    @property
    def r_scalar(self) -> float:
        return float(self.r[0])


# ---------------------------------------------------------------------------
# Scalar saddle problems (symmetric, infinite-T, separate)
# ---------------------------------------------------------------------------

class _ScalarSaddle:
    """min over (q, r) >= 0, max over eta > 0 of a scalar-eta objective.

    Subclass hooks: ``a_q(eta)`` / ``da_q(eta)`` for the q^2/2 coefficient and
    ``b(eta)`` / ``db(eta)`` for the envelope scale; the r^2/2 coefficient is
    always ``gamma1 - eta``.
    """

    def __init__(self, alpha, kappa, rho, gamma1, gamma2, kernel, model_kind, grid):
        if alpha <= 0 or kappa <= 0:
            raise ValueError("alpha and kappa must be positive")
        if kappa > alpha * (1.0 + 1e-12):
            raise ValueError(f"kappa={kappa} must not exceed alpha={alpha}")
        if gamma1 < 0 or gamma2 < 0:
            raise ValueError("gamma1 and gamma2 must be >= 0")
        self.alpha = float(alpha)
        self.kappa = float(min(kappa, alpha))
        self.rho = float(rho)
        self.gamma1 = float(gamma1)
        self.gamma2 = float(gamma2)
        self.kernel = _as_kernel(kernel)
        if self.kernel.kind == "logistic" and gamma1 == 0.0 and gamma2 == 0.0:
            raise ValueError("logistic loss needs gamma1 > 0 or gamma2 > 0")
        self.model_kind = model_kind
        self.grid = grid or default_grid()
        self.channel = self.grid.channel(model_kind, self.kappa / self.alpha, self.rho)

    # hooks -------------------------------------------------------------
    def a_q(self, eta: float) -> float:
        raise NotImplementedError

    def da_q(self, eta: float) -> float:
        raise NotImplementedError

    def b(self, eta: float) -> float:
        raise NotImplementedError

    def db(self, eta: float) -> float:
        raise NotImplementedError

    # evaluation ---------------------------------------------------------
    def evaluate(self, q: float, r: float, eta: float):
        """Objective value and all first derivatives at (q, r, eta)."""
        b = self.b(eta)
        ev, e_q, e_r, e_b = _envelope_stats(self.kernel, self.channel, q, r, b)
        a_r = self.gamma1 - eta
        a_q = self.a_q(eta)
        val = 0.5 * a_r * r * r + 0.5 * a_q * q * q + ev
        d_q = a_q * q + e_q
        d_r = a_r * r + e_r
        d_eta = -0.5 * r * r + 0.5 * self.da_q(eta) * q * q + e_b * self.db(eta)
        return val, d_q, d_r, d_eta

    def objective(self, q: float, r: float, eta: float) -> float:
        return self.evaluate(q, r, eta)[0]

    def scan_eta(self, q: float, r: float, etas: np.ndarray):
        """Objective values and eta-derivatives at many eta, one batched pass."""
        etas = np.asarray(etas, dtype=float)
        bs = np.array([self.b(e) for e in etas])
        ev, e_b = _envelope_valgrad_b(self.kernel, self.channel, q, r, bs)
        a_qs = np.array([self.a_q(e) for e in etas])
        da_qs = np.array([self.da_q(e) for e in etas])
        dbs = np.array([self.db(e) for e in etas])
        vals = 0.5 * (self.gamma1 - etas) * r * r + 0.5 * a_qs * q * q + ev
        ders = -0.5 * r * r + 0.5 * da_qs * q * q + e_b * dbs
        return vals, ders


class _SymmetricSaddle(_ScalarSaddle):
    def __init__(self, T, alpha, kappa, rho, gamma1, gamma2, kernel, model_kind, grid):
        super().__init__(alpha, kappa, rho, gamma1, gamma2, kernel, model_kind, grid)
        if T < 1:
            raise ValueError("T must be >= 1")
        self.T = float(T)

    def a_q(self, eta):
        return self.gamma1 - eta + float(symmetric_q_coefficient(self.T, eta, self.gamma2, self.rho))

    def da_q(self, eta):
        return -1.0 + _symmetric_q_coefficient_deriv(self.T, eta, self.gamma2, self.rho)

    def b(self, eta):
        return float(symmetric_envelope_scale(self.T, eta, self.gamma2, self.kappa))

    def db(self, eta):
        return _symmetric_envelope_scale_deriv(self.T, eta, self.gamma2, self.kappa)


class _InfiniteSaddle(_ScalarSaddle):
    def a_q(self, eta):
        return self.gamma1 - eta + float(infinite_q_coefficient(eta, self.gamma2, self.rho))

    def da_q(self, eta):
        return -1.0 + _infinite_q_coefficient_deriv(eta, self.gamma2, self.rho)

    def b(self, eta):
        return self.kappa / (self.gamma2 + eta)

    def db(self, eta):
        return -self.kappa / (self.gamma2 + eta) ** 2


class _SeparateSaddle(_ScalarSaddle):
    def __init__(self, alpha, kappa, rho, gamma1, gamma2, R, kernel, model_kind, grid):
        super().__init__(alpha, kappa, rho, gamma1, gamma2, kernel, model_kind, grid)
        margin = gamma1 + gamma2 - gamma2 * R
        if margin <= 0.0:
            raise ValueError(
                f"strong convexity requires gamma1 + gamma2 - gamma2*R > 0 (margin {margin:g})"
            )
        self.R = float(R)

    def a_q(self, eta):
        return self.gamma1 + self.gamma2 - self.gamma2 * self.R

    def da_q(self, eta):
        return 0.0

    def b(self, eta):
        return self.kappa / (self.gamma2 + eta)

    def db(self, eta):
        return -self.kappa / (self.gamma2 + eta) ** 2


class _ScalarSolver:
    """Nested solver: inner 1-D eta maximization, outer 2-D (q, r) descent.

    The inner maximization runs in two precision modes: during the coarse
    grid and simplex phases the derivative root is located by a log-grid
    bracket plus secant refinements on batched scans; the polish phase
    re-solves it with brentq to full precision.
    """

    def __init__(self, problem: _ScalarSaddle, var_tol: float = 1e-7, residual_tol: float = 1e-6):
        self.problem = problem
        self.var_tol = var_tol
        self.residual_tol = residual_tol
        self._eta_warm: float | None = None
        self.inner_calls = 0
        self.fine = True

    # -- inner maximization over eta --------------------------------------
    def _eta_eval(self, q, r, eta):
        self.inner_calls += 1
        out = self.problem.evaluate(q, r, eta)
        return out[0], out[3]

    def max_eta(self, q: float, r: float):
        """Maximize over eta: log-grid bracket of the derivative + bisection.

        Sign changes below the numerical noise floor of the derivative are
        ignored; if no genuine down-crossing exists the scanned objective
        values decide (a flat tail means the supremum sits at a window edge).
        """
        noise = 1e-12 * (1.0 + q * q + r * r)

        def scan(grid: np.ndarray):
            vals, ders = self.problem.scan_eta(q, r, grid)
            self.inner_calls += 1
            for i in range(grid.size - 1):
                crosses = ders[i] > 0.0 >= ders[i + 1]
                if crosses and (ders[i] > noise or ders[i + 1] < -noise):
                    return (grid[i], grid[i + 1]), (ders[i], ders[i + 1]), vals
            return None, None, vals

        span = d_span = None
        if self.fine and self._eta_warm is not None and ETA_LO < self._eta_warm < ETA_HI:
            eta = self._track_root(q, r, self._eta_warm)
            if eta is not None:
                self._eta_warm = eta
                return eta
        if self._eta_warm is not None and ETA_LO < self._eta_warm < ETA_HI:
            w = math.log10(self._eta_warm)
            span, d_span, _ = scan(np.logspace(w - 1.0, w + 1.0, 9))
        if span is None:
            grid = np.logspace(math.log10(ETA_LO), math.log10(ETA_HI), 45)
            span, d_span, vals = scan(grid)
            if span is None:
                # no genuine crossing: take the best scanned point / edge
                eta = float(grid[int(np.argmax(vals))])
                self._eta_warm = None
                return eta
        eta = self._refine_root(q, r, span, d_span)
        self._eta_warm = eta
        return eta

    def _track_root(self, q: float, r: float, warm: float):
        """Follow the eta-root from a nearby warm start in a few evaluations.

        Expands a small log-bracket around the warm value in the uphill
        direction; returns None (full-scan fallback) when the root moved by
        more than ~1.5 decades.
        """
        x = math.log(warm)
        _, d = self._eta_eval(q, r, warm)
        if d == 0.0:
            return warm
        h = 0.08 if d > 0.0 else -0.08
        x_lo, d_lo = x, d
        for _ in range(10):
            x_hi = x_lo + h
            _, d_hi = self._eta_eval(q, r, math.exp(x_hi))
            if (d > 0.0) != (d_hi > 0.0) or d_hi == 0.0:
                a, b_ = sorted((x_lo, x_hi))
                try:
                    root = brentq(
                        lambda t: self._eta_eval(q, r, math.exp(t))[1],
                        a,
                        b_,
                        xtol=1e-12,
                        rtol=4 * np.finfo(float).eps,
                    )
                    return math.exp(root)
                except ValueError:
                    return math.exp(a) if abs(d_lo) <= abs(d_hi) else math.exp(b_)
            x_lo, d_lo = x_hi, d_hi
            h *= 2.0
            if abs(x_lo - x) > 3.5:
                return None
        return None

    def _refine_root(self, q, r, span, d_span):
        if not self.fine:
            # secant steps in log(eta) on the analytic derivative
            x1, x2 = math.log(span[0]), math.log(span[1])
            d1, d2 = d_span
            x = x2 - d2 * (x2 - x1) / (d2 - d1)
            for _ in range(2):
                _, d = self._eta_eval(q, r, math.exp(x))
                if d > 0.0:
                    x1, d1 = x, d
                else:
                    x2, d2 = x, d
                if d1 == d2:
                    break
                x = x2 - d2 * (x2 - x1) / (d2 - d1)
                x = min(max(x, x1), x2)
            return math.exp(x)
        try:
            root = brentq(
                lambda x: self._eta_eval(q, r, math.exp(x))[1],
                math.log(span[0]),
                math.log(span[1]),
                xtol=1e-12,
                rtol=4 * np.finfo(float).eps,
            )
            return math.exp(root)
        except ValueError:
            # no pointwise sign change: the root coincides with an endpoint
            # to machine precision; keep the endpoint closer to stationarity
            d_lo = abs(self._eta_eval(q, r, span[0])[1])
            d_hi = abs(self._eta_eval(q, r, span[1])[1])
            return span[0] if d_lo <= d_hi else span[1]

    def value_function(self, q: float, r: float):
        """F(q, r) = max_eta f plus the envelope-theorem gradient in (q, r)."""
        q = abs(float(q))
        r = abs(float(r))
        eta = self.max_eta(q, r)
        val, d_q, d_r, _ = self.problem.evaluate(q, r, eta)
        return val, np.array([d_q, d_r]), eta

    # -- outer minimization over (q, r) ------------------------------------
    def solve(self, warm_qr: tuple[float, float] | None = None) -> SaddleSolution:
        if warm_qr is not None:
            x = np.array([max(0.0, warm_qr[0]), max(0.0, warm_qr[1])], dtype=float)
        else:
            self.fine = False
            x, fx = self._grid_restart()
            x, fx = self._nelder_mead(x)
            self.fine = True
        x, fx, eta, n_iter = self._polish(x)
        q, r = float(x[0]), float(x[1])
        val, d_q, d_r, d_eta = self.problem.evaluate(q, r, eta)

        active = []
        if q <= 10 * self.var_tol:
            active.append("q")
            res_q = max(0.0, -d_q)
        else:
            res_q = abs(d_q)
        if r <= 10 * self.var_tol:
            active.append("r")
            res_r = max(0.0, -d_r)
        else:
            res_r = abs(d_r)
        scale = 1.0 + abs(q) + abs(r)
        if eta <= ETA_LO * 2 or eta >= ETA_HI / 2:
            res_eta = 0.0  # supremum on the window edge, derivative one-sided
        else:
            res_eta = abs(d_eta) / scale
        residual = max(res_q, res_r, res_eta)
        return SaddleSolution(
            q=np.array([q]),
            r=np.array([r]),
            eta=np.array([eta]),
            value=float(val),
            converged=bool(residual < self.residual_tol),
            residual=float(residual),
            iterations=n_iter,
            active_bounds=tuple(active),
        )

    def _grid_restart(self, hi: float = 4.0):
        """Coarse (q, r) grid, expanded while the best point hits the rim."""
        best = None
        for _ in range(12):
            qs = np.linspace(0.0, hi, 6)
            rs = np.linspace(0.0, hi, 6)
            best = None
            for q in qs:
                for r in rs:
                    f, _, _ = self.value_function(q, r)
                    if best is None or f < best[0]:
                        best = (f, q, r)
            _, qb, rb = best
            if qb < qs[-1] - 1e-12 and rb < rs[-1] - 1e-12:
                break
            hi *= 4.0
            if hi > 1e6:
                break
        return np.array([best[1], best[2]]), best[0]

    def _nelder_mead(self, x0: np.ndarray):
        res = minimize(
            lambda x: self.value_function(x[0], x[1])[0],
            x0,
            method="Nelder-Mead",
            options={"xatol": 1e-5, "fatol": 1e-9, "maxiter": 200},
        )
        x = np.abs(res.x)
        return x, float(res.fun)

    def _polish(self, x0: np.ndarray, max_iter: int = 200):
        """Projected gradient with Barzilai-Borwein steps and Armijo backtracking."""
        x = np.maximum(x0, 0.0)
        f, g, eta = self.value_function(*x)
        step = 1.0 / (1.0 + float(np.linalg.norm(g)))
        x_prev = g_prev = None
        it = 0
        for it in range(1, max_iter + 1):
            if x_prev is not None:
                dx_v = x - x_prev
                dg_v = g - g_prev
                denom = float(dx_v @ dg_v)
                if denom > 1e-18:
                    step = float(np.clip((dx_v @ dx_v) / denom, 1e-12, 1e8))
            s = step
            moved = False
            for _ in range(50):
                x_new = np.maximum(x - s * g, 0.0)
                if np.allclose(x_new, x, rtol=0.0, atol=1e-16):
                    break
                f_new, g_new, eta_new = self.value_function(*x_new)
                if f_new <= f - 1e-4 * float(g @ (x - x_new)):
                    moved = True
                    break
                s *= 0.25
            if not moved:
                break
            dx = np.max(np.abs(x_new - x))
            deta = abs(eta_new - eta) / max(1.0, abs(eta))
            x_prev, g_prev = x, g
            x, f, g, eta = x_new, f_new, g_new, eta_new
            if dx < self.var_tol and deta < self.var_tol:
                break
        return x, f, eta, it


def _finalize_scalar(problem: _ScalarSaddle, warm_qr=None, var_tol=1e-7, residual_tol=1e-6):
    return _ScalarSolver(problem, var_tol, residual_tol).solve(warm_qr=warm_qr)


def solve_symmetric(
    T: float,
    alpha: float,
    kappa: float,
    rho: float,
    gamma1: float,
    gamma2: float,
    kernel: LossKernel | str,
    model_kind: str,
    grid: QuadratureGrid | None = None,
    warm_qr: tuple[float, float] | None = None,
    var_tol: float = 1e-7,
    residual_tol: float = 1e-6,
) -> SaddleSolution:
    """Solve the fixed-T symmetric deterministic problem."""
    problem = _SymmetricSaddle(T, alpha, kappa, rho, gamma1, gamma2, kernel, model_kind, grid)
    return _finalize_scalar(problem, warm_qr, var_tol, residual_tol)


def solve_infinite_T(
    alpha: float,
    kappa: float,
    rho: float,
    gamma1: float,
    gamma2: float,
    kernel: LossKernel | str,
    model_kind: str,
    grid: QuadratureGrid | None = None,
    warm_qr: tuple[float, float] | None = None,
    var_tol: float = 1e-7,
    residual_tol: float = 1e-6,
) -> SaddleSolution:
    """Solve the T -> infinity deterministic problem."""
    problem = _InfiniteSaddle(alpha, kappa, rho, gamma1, gamma2, kernel, model_kind, grid)
    return _finalize_scalar(problem, warm_qr, var_tol, residual_tol)


def solve_separate_asymptotic(
    alpha: float,
    kappa: float,
    rho: float,
    gamma1: float,
    gamma2: float,
    R: float,
    kernel: LossKernel | str,
    model_kind: str,
    grid: QuadratureGrid | None = None,
    warm_qr: tuple[float, float] | None = None,
    var_tol: float = 1e-7,
    residual_tol: float = 1e-6,
) -> SaddleSolution:
    """Solve the deterministic counterpart of the separate formulation."""
    problem = _SeparateSaddle(alpha, kappa, rho, gamma1, gamma2, R, kernel, model_kind, grid)
    return _finalize_scalar(problem, warm_qr, var_tol, residual_tol)


# ---------------------------------------------------------------------------
# Coupling matrices of the general problem
# ---------------------------------------------------------------------------

class CouplingMatrixError(ValueError):
    """Raised when the coupling matrix C(eta) is singular or indefinite."""


@dataclass
class CouplingMatrices:
    """C(eta), its inverse, the Hadamard product B = C^{-1} o L and V."""

    C: np.ndarray
    L: np.ndarray
    B: np.ndarray
    V: np.ndarray
    C_inv: np.ndarray


def coupling_matrices(eta, gamma2: float, rho: float, kappa) -> CouplingMatrices:
    """Build the T x T coupling matrices for the general saddle problem.

    Raises :class:`CouplingMatrixError` when C(eta) is not positive definite;
    the general solver uses that signal as its feasibility barrier.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
    T = eta.size
    if kappa.size != T:
        raise ValueError(f"eta and kappa must have equal length, got {T} and {kappa.size}")
    C = np.full((T, T), -gamma2 / T)
    np.fill_diagonal(C, (T - 1) * gamma2 / T + eta)
    try:
        c_fac = cho_factor(C, lower=True)
    except LinAlgError:
        eigmin = float(np.linalg.eigvalsh(C)[0])
        raise CouplingMatrixError(
            f"C(eta) is not positive definite (min eigenvalue {eigmin:.3e})"
        ) from None
    C_inv = cho_solve(c_fac, np.eye(T))
    C_inv = 0.5 * (C_inv + C_inv.T)
    L = np.full((T, T), rho)
    np.fill_diagonal(L, 1.0)
    B = C_inv * L
    V = kappa * np.diag(C_inv)
    if np.any(V <= 0.0):
        raise CouplingMatrixError("envelope scales kappa_t * (C^{-1})_tt must be positive")
    return CouplingMatrices(C=C, L=L, B=B, V=V, C_inv=C_inv)


# ---------------------------------------------------------------------------
# General (per-task) saddle problem
# ---------------------------------------------------------------------------

class _GeneralSaddle:
    def __init__(self, alphas, kappas, rho, gamma1, gamma2, kernel, model_kind, grid):
        self.alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
        self.kappas = np.atleast_1d(np.asarray(kappas, dtype=float))
        if self.alphas.size != self.kappas.size:
            raise ValueError("alphas and kappas must have equal length")
        if np.any(self.alphas <= 0) or np.any(self.kappas <= 0):
            raise ValueError("alphas and kappas must be positive")
        if np.any(self.kappas > self.alphas * (1 + 1e-12)):
            raise ValueError("each kappa_t must not exceed alpha_t")
        self.T = self.alphas.size
        self.rho = float(rho)
        self.gamma1 = float(gamma1)
        self.gamma2 = float(gamma2)
        self.kernel = _as_kernel(kernel)
        self.model_kind = model_kind
        self.grid = grid or default_grid()
        self.channels = [
            self.grid.channel(model_kind, min(k / a, 1.0), self.rho)
            for k, a in zip(self.kappas, self.alphas)
        ]

    def evaluate(self, q: np.ndarray, r: np.ndarray, eta: np.ndarray):
        """Value and gradients; raises CouplingMatrixError outside C > 0."""
        cm = coupling_matrices(eta, self.gamma2, self.rho, self.kappas)
        b_fac = cho_factor(cm.B, lower=True)
        u = cho_solve(b_fac, q)

        val = 0.5 * float(np.sum((self.gamma1 - eta) * (q * q + r * r))) + 0.5 * float(q @ u)
        g_q = (self.gamma1 - eta) * q + u
        g_r = (self.gamma1 - eta) * r
        g_eta = -0.5 * (q * q + r * r)

        env_b = np.empty(self.T)
        for t in range(self.T):
            ev, e_q, e_r, e_b = _envelope_stats(
                self.kernel, self.channels[t], float(q[t]), float(r[t]), float(cm.V[t])
            )
            val += ev
            g_q[t] += e_q
            g_r[t] += e_r
            env_b[t] = e_b

        # d/d eta_t of q' B^{-1} q / 2 and of the envelope scales V_s
        for t in range(self.T):
            w = u * cm.C_inv[:, t]
            g_eta[t] += 0.5 * float(w @ cm.L @ w)
            g_eta[t] += float(env_b @ (-self.kappas * cm.C_inv[:, t] ** 2))
        return val, g_q, g_r, g_eta

    # -- inner ascent over eta inside the C > 0 region ---------------------
    def _eta_grad(self, q, r, eta):
        return self.evaluate(q, r, eta)[3]

    def max_eta(self, q, r, eta0, tol=1e-9, max_iter=60):
        """Newton ascent on the concave eta-objective with a C > 0 barrier.

        The Jacobian of the analytic eta-gradient is finite-differenced
        (T is small); steps that leave the positive-definite cone or fail to
        increase the objective are halved.
        """
        eta = np.asarray(eta0, dtype=float).copy()
        val, _, _, g = self.evaluate(q, r, eta)
        for _ in range(max_iter):
            gnorm = float(np.max(np.abs(g)))
            if gnorm < tol * (1.0 + abs(val)):
                break
            jac = np.empty((self.T, self.T))
            for t in range(self.T):
                h = 1e-6 * (1.0 + abs(eta[t]))
                probe = eta.copy()
                probe[t] += h
                try:
                    g_probe = self._eta_grad(q, r, probe)
                except CouplingMatrixError:
                    probe[t] -= 2.0 * h
                    g_probe = self._eta_grad(q, r, probe)
                    h = -h
                jac[:, t] = (g_probe - g) / h
            jac = 0.5 * (jac + jac.T)
            try:
                direction = np.linalg.solve(jac, -g)
            except np.linalg.LinAlgError:
                direction = g
            if float(direction @ g) <= 0.0:  # not an ascent direction
                direction = g / (1.0 + float(np.linalg.norm(g)))
            step = 1.0
            moved = False
            for _ in range(60):
                trial = eta + step * direction
                try:
                    val_new, _, _, g_new = self.evaluate(q, r, trial)
                except CouplingMatrixError:
                    step *= 0.5  # barrier contract: halve on lost definiteness
                    continue
                if val_new > val - 1e-14 * (1.0 + abs(val)):
                    eta, val, g = trial, val_new, g_new
                    moved = True
                    break
                step *= 0.5
            if not moved:
                break
        return eta, val

    def value_function(self, q, r, eta_warm):
        q = np.maximum(np.asarray(q, dtype=float), 0.0)
        r = np.maximum(np.asarray(r, dtype=float), 0.0)
        eta, _ = self.max_eta(q, r, eta_warm)
        val, g_q, g_r, _ = self.evaluate(q, r, eta)
        return val, g_q, g_r, eta

    def solve(self, var_tol=1e-7, residual_tol=1e-6, method="auto") -> SaddleSolution:
        # per-task single-task solves give a feasible, well-scaled start
        q0 = np.empty(self.T)
        r0 = np.empty(self.T)
        eta0 = np.empty(self.T)
        singles: dict = {}
        for t in range(self.T):
            key = (float(self.alphas[t]), float(self.kappas[t]))
            single = singles.get(key)
            if single is None:
                single = solve_symmetric(
                    1.0, self.alphas[t], self.kappas[t], self.rho,
                    self.gamma1 + self.gamma2 * 0.5, 0.0,
                    self.kernel, self.model_kind, self.grid,
                )
                singles[key] = single
            q0[t] = single.q[0]
            r0[t] = single.r[0]
            eta0[t] = min(max(single.eta[0], 1e-6), 1e6)

        state = {"eta": eta0}

        def fun(x):
            q = x[: self.T]
            r = x[self.T:]
            val, g_q, g_r, eta = self.value_function(q, r, state["eta"])
            state["eta"] = eta
            return val, np.concatenate([g_q, g_r])

        x0 = np.concatenate([q0, r0])
        if method in ("auto", "lbfgs"):
            res = minimize(
                fun,
                x0,
                jac=True,
                method="L-BFGS-B",
                bounds=[(0.0, None)] * (2 * self.T),
                options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-9},
            )
            x = np.maximum(res.x, 0.0)
            n_iter = int(res.nit)
        elif method == "simplex":
            res = minimize(
                lambda x: fun(np.abs(x))[0],
                x0,
                method="Nelder-Mead",
                options={"xatol": 1e-9, "fatol": 1e-13, "maxiter": 4000, "maxfev": 8000},
            )
            x = np.abs(res.x)
            n_iter = int(res.nit)
        else:
            raise ValueError(f"unknown method {method!r}")

        # projected-gradient polish with Barzilai-Borwein steps
        f, grad, eta = None, None, state["eta"]
        val, g_q, g_r, eta = self.value_function(x[: self.T], x[self.T:], eta)
        f, grad = val, np.concatenate([g_q, g_r])
        step = 1.0 / (1.0 + float(np.linalg.norm(grad)))
        x_prev = g_prev = None
        for _ in range(100):
            if x_prev is not None:
                dx_v = x - x_prev
                dg_v = grad - g_prev
                denom = float(dx_v @ dg_v)
                if denom > 1e-18:
                    step = float(np.clip((dx_v @ dx_v) / denom, 1e-12, 1e8))
            s = step
            moved = False
            for _ in range(50):
                x_new = np.maximum(x - s * grad, 0.0)
                if np.allclose(x_new, x, rtol=0.0, atol=1e-16):
                    break
                v_new, gq_new, gr_new, eta_new = self.value_function(
                    x_new[: self.T], x_new[self.T:], eta
                )
                if v_new <= f - 1e-4 * float(grad @ (x - x_new)):
                    moved = True
                    break
                s *= 0.25
            if not moved:
                break
            dx = float(np.max(np.abs(x_new - x)))
            x_prev, g_prev = x, grad
            x, f, eta = x_new, v_new, eta_new
            grad = np.concatenate([gq_new, gr_new])
            if dx < var_tol:
                break

        q = np.maximum(x[: self.T], 0.0)
        r = np.maximum(x[self.T:], 0.0)
        eta, _ = self.max_eta(q, r, eta, tol=1e-12)
        val, g_q, g_r, g_eta = self.evaluate(q, r, eta)

        active = []
        res_parts = []
        for t in range(self.T):
            if q[t] > 10 * var_tol:
                res_parts.append(abs(g_q[t]))
            else:
                res_parts.append(max(0.0, -g_q[t]))
                active.append(f"q[{t}]")
            if r[t] > 10 * var_tol:
                res_parts.append(abs(g_r[t]))
            else:
                res_parts.append(max(0.0, -g_r[t]))
                active.append(f"r[{t}]")
        scale = 1.0 + float(np.max(q * q + r * r))
        res_parts.append(float(np.max(np.abs(g_eta))) / scale)
        residual = max(res_parts)
        return SaddleSolution(
            q=q,
            r=r,
            eta=eta,
            value=float(val),
            converged=bool(residual < residual_tol),
            residual=float(residual),
            iterations=n_iter,
            active_bounds=tuple(active),
        )


def solve_general(
    alphas,
    kappas,
    rho: float,
    gamma1: float,
    gamma2: float,
    kernel: LossKernel | str,
    model_kind: str,
    grid: QuadratureGrid | None = None,
    method: str = "auto",
    var_tol: float = 1e-7,
    residual_tol: float = 1e-6,
) -> SaddleSolution:
    """Solve the general per-task deterministic problem (3T variables).

    ``method="simplex"`` replaces the gradient descent over (q, r) with a
    derivative-free simplex search (cross-check path, small T only).
    """
    problem = _GeneralSaddle(alphas, kappas, rho, gamma1, gamma2, kernel, model_kind, grid)
    return problem.solve(var_tol=var_tol, residual_tol=residual_tol, method=method)
