"""Generalization error: exact closed forms and the R(rho) fixed point.

The test error of a trained direction against a hidden vector reduces, for
standard Gaussian test inputs, to functions of the bivariate Gaussian pair
``(a'xi, a'beta)``:

* regression (identity link on both sides): ``|xi - beta|^2``;
* binary classification (sign on both sides): the orthant probability of a
  sign mismatch, ``arccos(corr) / pi`` with ``corr = xi'beta/(|xi||beta|)``.

On the theory side the same two formulas apply with the asymptotic constants
``c0 = 1/sqrt(rho)``, ``c1 = q* sqrt(kappa/alpha)`` and
``c2 = sqrt((1 - kappa/alpha) q*^2 + r*^2)``.  Both closed forms are
validated against quadrature / Monte-Carlo oracles in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .losses import LossKernel
from .model import TaskEnsemble
from .quadrature import QuadratureGrid
from .theory import SaddleSolution, solve_infinite_T, solve_separate_asymptotic
from .train import TrainedModel

__all__ = [
    "TheoryPrediction",
    "theory_gen_error",
    "prediction_from_solution",
    "empirical_gen_error",
    "empirical_overlaps",
    "solve_R_of_rho",
]


@dataclass(frozen=True)
class TheoryPrediction:
    """Asymptotic constants and generalization error for one task."""

    c0: float
    c1: float
    c2: float
    gen_error: float
    source: str  # theorem1 | lemma1 | theorem2 | separate


def theory_gen_error(c0: float, c1: float, c2: float, model_kind: str) -> float:
    """Closed-form limit of the test error given the asymptotic constants.

    Regression: ``(c0 - c1)^2 + c2^2``.  Classification: the probability
    that ``sign(G1)`` and ``sign(c1 G1 + c2 G2)`` disagree,
    ``arccos(c1/sqrt(c1^2 + c2^2)) / pi`` (a zero predictor counts as a
    coin flip, error 1/2).
    """
    if c2 < 0.0:
        raise ValueError(f"c2 must be >= 0, got {c2}")
    if model_kind == "linear_regression":
        return (c0 - c1) ** 2 + c2 ** 2
    if model_kind == "binary_classification":
        norm = math.hypot(c1, c2)
        if norm == 0.0:
            return 0.5
        return math.acos(min(1.0, max(-1.0, c1 / norm))) / math.pi
    raise ValueError(f"unknown model_kind {model_kind!r}")


def prediction_from_solution(
    solution: SaddleSolution,
    alpha: float,
    kappa: float,
    rho: float,
    model_kind: str,
    source: str,
    task: int = 0,
) -> TheoryPrediction:
    """Assemble (c0, c1, c2) and the error from a saddle solution.

    ``task`` selects the component for per-task (general-problem) solutions;
    scalar solutions carry a single component.
    """
    q = float(solution.q[min(task, solution.q.size - 1)])
    r = float(solution.r[min(task, solution.r.size - 1)])
    ka = kappa / alpha
    c0 = 1.0 / math.sqrt(rho) if rho > 0.0 else math.inf
    c1 = q * math.sqrt(ka)
    c2 = math.sqrt(max(0.0, (1.0 - ka) * q * q + r * r))
    if model_kind == "linear_regression" and not math.isfinite(c0):
        raise ValueError("regression error diverges at rho = 0 (c0 is infinite)")
    err = theory_gen_error(c0 if math.isfinite(c0) else 1.0, c1, c2, model_kind)
    return TheoryPrediction(c0=c0, c1=c1, c2=c2, gen_error=err, source=source)


def empirical_gen_error(
    model: TrainedModel,
    ensemble: TaskEnsemble,
    task: int,
    model_kind: str,
) -> float:
    """Exact test error of task ``task`` over the Gaussian test distribution.

    No test set is sampled: conditional on the trained direction the test
    margin pair is bivariate Gaussian, giving ``|xi - beta|^2`` for
    regression and ``arccos`` of the angle for classification.
    """
    if not 0 <= task < model.num_tasks:
        raise ValueError(f"task index {task} out of range [0, {model.num_tasks})")
    xi = ensemble.hidden_vectors[task]
    beta = model.betas[task]
    if model_kind == "linear_regression":
        return float(np.sum((xi - beta) ** 2))
    if model_kind == "binary_classification":
        nb = float(np.linalg.norm(beta))
        if nb == 0.0:
            return 0.5
        corr = float(xi @ beta) / (float(np.linalg.norm(xi)) * nb)
        return math.acos(min(1.0, max(-1.0, corr))) / math.pi
    raise ValueError(f"unknown model_kind {model_kind!r}")


def empirical_overlaps(model: TrainedModel, ensemble: TaskEnsemble, task: int):
    """Alignment overlaps (q_hat, r_hat) of a trained task direction.

    ``q_hat`` is the projection of the weights on the normalized restricted
    hidden vector, ``r_hat`` the norm of the orthogonal remainder; these
    concentrate on the saddle solution's (q*, r*).
    """
    w = model.weights[task]
    xi_bar = ensemble.hidden_restricted(task, normalized=True)
    q_hat = float(xi_bar @ w)
    r_hat = float(np.linalg.norm(w - q_hat * xi_bar))
    return q_hat, r_hat


def solve_R_of_rho(
    alpha: float,
    kappa: float,
    rho: float,
    gamma1: float,
    gamma2: float,
    kernel: LossKernel | str,
    model_kind: str,
    grid: QuadratureGrid | None = None,
    tol: float = 1e-6,
    max_iter: int = 80,
) -> float:
    """Alignment strength R in [0, 1] matching the coupled problem's error.

    Bisects the gap between the separate problem's error at R and the
    T -> infinity coupled error, using that the gap is monotone in R.  The
    endpoints are exact at rho = 0 (R = 0) and rho = 1 (R = 1).
    """
    target_sol = solve_infinite_T(alpha, kappa, rho, gamma1, gamma2, kernel, model_kind, grid)
    target = prediction_from_solution(
        target_sol, alpha, kappa, rho, model_kind, "lemma1"
    ).gen_error

    warm = (float(target_sol.q[0]), float(target_sol.r[0]))

    def gap(R: float) -> float:
        sol = solve_separate_asymptotic(
            alpha, kappa, rho, gamma1, gamma2, R, kernel, model_kind, grid, warm_qr=warm
        )
        pred = prediction_from_solution(sol, alpha, kappa, rho, model_kind, "separate")
        return pred.gen_error - target

    g_lo = gap(0.0)
    if abs(g_lo) < tol:
        return 0.0
    g_hi = gap(1.0)
    if abs(g_hi) < tol:
        return 1.0
    if (g_lo > 0.0) == (g_hi > 0.0):
        raise RuntimeError(
            "no sign change of the error gap on [0, 1]: "
            f"gap(0)={g_lo:.3e}, gap(1)={g_hi:.3e}"
        )
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        g_mid = gap(mid)
        if abs(g_mid) < tol:
            return mid
        if (g_mid > 0.0) == (g_lo > 0.0):
            lo, g_lo = mid, g_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
