"""Finite-dimensional convex solvers for the multi-task training programs.

Two programs are solved:

* the coupled program over ``T`` weight vectors ``w_t`` in R^k,

      sum_t (1/n_t) sum_i l(y_ti; b_ti' w_t)
        + gamma1/2 sum_t |w_t|^2 + gamma2/2 sum_t |w_t - w_bar|^2,

  whose coupling gradient simplifies to ``gamma2 (w_t - w_bar)`` because the
  deviations from the mean sum to zero;

* the per-task "separate" program with ridge ``(gamma1+gamma2)/2 |w|^2`` and
  the concave alignment reward ``-(gamma2 R / 2) (xi_bar' w)^2`` built from
  the normalized restriction of the hidden vector (an oracle quantity, used
  for validation only).

For the squared loss both reduce to symmetric positive-definite linear
systems.  The coupled system has blocks ``K_t = (1/n_t) B_t'B_t +
(gamma1+gamma2) I`` tied through the mean, which block elimination solves
exactly: eliminate ``w_t = K_t^{-1}(c_t + gamma2 w_bar)`` and solve a single
k x k system for the mean.  Above the dense-block size limit a conjugate
gradient on the stacked operator takes over.  The logistic loss runs damped
Newton on the stacked objective (the Newton systems share the same block
structure), switching to L-BFGS seeding plus Newton refinement for large
problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.sparse.linalg import LinearOperator, cg

from .losses import LossKernel, make_kernel
from .model import ExperimentConfig, TaskEnsemble

__all__ = ["TrainedModel", "TrainingError", "solve_multitask", "solve_separate"]

# block-elimination limit on k; stacked-CG limit mirrors the Tk <= 4000 rule
DENSE_BLOCK_LIMIT = 1500
NEWTON_SIZE_LIMIT = 2000


class TrainingError(RuntimeError):
    """Solver failed to reach its tolerance; carries diagnostics."""

    def __init__(self, message: str, grad_norm: float, iterations: int):
        super().__init__(f"{message} (grad_norm={grad_norm:.3e}, iterations={iterations})")
        self.grad_norm = grad_norm
        self.iterations = iterations


@dataclass
class TrainedModel:
    """Per-task weight vectors plus solver diagnostics.

    ``weights[t]`` lives in the observed k-dimensional space; ``betas``
    embeds each into the ambient space with exact zeros outside the
    observed subset.
    """

    weights: np.ndarray          # (T, k)
    ambient_dim: int
    objective_value: float
    grad_norm: float
    iterations: int

    @property
    def num_tasks(self) -> int:
        return self.weights.shape[0]

    @property
    def known_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def betas(self) -> np.ndarray:
        """(T, p) embeddings: weights on the observed subset, zeros elsewhere."""
        T, k = self.weights.shape
        out = np.zeros((T, self.ambient_dim))
        out[:, :k] = self.weights
        return out


# ---------------------------------------------------------------------------
# objective / gradient / structured solves
# ---------------------------------------------------------------------------

def _objective_grad(W: np.ndarray, features, labels, inv_n, gamma1, gamma2, kernel):
    """Stacked objective and gradient at weights W of shape (T, k)."""
    T = W.shape[0]
    w_bar = W.mean(axis=0)
    dev = W - w_bar
    val = 0.5 * gamma1 * float(np.sum(W * W)) + 0.5 * gamma2 * float(np.sum(dev * dev))
    grad = gamma1 * W + gamma2 * dev
    for t in range(T):
        z = features[t] @ W[t]
        val += inv_n[t] * float(np.sum(kernel.value(labels[t], z)))
        grad[t] += inv_n[t] * (features[t].T @ kernel.grad(labels[t], z))
    return val, grad


def _solve_mean_coupled(blocks, rhs, gamma2):
    """Solve K_t w_t - gamma2 w_bar = c_t exactly via block elimination."""
    T = len(blocks)
    k = rhs[0].size
    inv_blocks = [np.linalg.inv(K) for K in blocks]
    inv_sum = np.zeros((k, k))
    mean_rhs = np.zeros(k)
    for K_inv, c in zip(inv_blocks, rhs):
        inv_sum += K_inv
        mean_rhs += K_inv @ c
    mean_sys = np.eye(k) - (gamma2 / T) * inv_sum
    w_bar = np.linalg.solve(mean_sys, mean_rhs / T)
    W = np.empty((T, k))
    for t, (K_inv, c) in enumerate(zip(inv_blocks, rhs)):
        W[t] = K_inv @ (c + gamma2 * w_bar)
    return W


def _solve_squared_cg(features, labels, inv_n, gamma1, gamma2, rtol, max_iter):
    """Stacked CG on the normal equations of the coupled squared-loss program."""
    T = len(features)
    k = features[0].shape[1]

    def matvec(x):
        W = x.reshape(T, k)
        w_bar = W.mean(axis=0)
        out = (gamma1 + gamma2) * W - gamma2 * w_bar
        for t in range(T):
            out[t] += inv_n[t] * (features[t].T @ (features[t] @ W[t]))
        return out.ravel()

    rhs = np.concatenate([inv_n[t] * (features[t].T @ labels[t]) for t in range(T)])
    op = LinearOperator((T * k, T * k), matvec=matvec)
    x, info = cg(op, rhs, rtol=rtol, atol=0.0, maxiter=max_iter)
    if info != 0:
        res = float(np.linalg.norm(matvec(x) - rhs) / np.linalg.norm(rhs))
        raise TrainingError("conjugate gradient did not converge", res, max_iter)
    return x.reshape(T, k)


def _newton(W0, features, labels, inv_n, gamma1, gamma2, kernel, tol, max_iter):
    """Damped Newton on the stacked objective; block-eliminated step solves."""
    W = W0.copy()
    T, k = W.shape
    val, grad = _objective_grad(W, features, labels, inv_n, gamma1, gamma2, kernel)
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            return W, val, gnorm, it - 1
        blocks = []
        for t in range(T):
            z = features[t] @ W[t]
            d = kernel.hess(labels[t], z)
            K = inv_n[t] * (features[t].T * d) @ features[t]
            K[np.diag_indices_from(K)] += gamma1 + gamma2
            blocks.append(K)
        if gamma2 > 0.0 and T > 1:
            step = _solve_mean_coupled(blocks, list(-grad), gamma2)
        else:
            step = np.stack([np.linalg.solve(K, -g) for K, g in zip(blocks, grad)])
        # backtracking line search on the full objective
        s = 1.0
        descent = float(np.sum(grad * step))
        for _ in range(60):
            W_new = W + s * step
            val_new, grad_new = _objective_grad(
                W_new, features, labels, inv_n, gamma1, gamma2, kernel
            )
            if val_new <= val + 1e-4 * s * descent:
                break
            s *= 0.5
        else:
            raise TrainingError("line search failed", gnorm, it)
        W, val, grad = W_new, val_new, grad_new
    gnorm = float(np.linalg.norm(grad))
    if gnorm >= tol:
        raise TrainingError("Newton did not reach tolerance", gnorm, max_iter)
    return W, val, gnorm, max_iter


# ---------------------------------------------------------------------------
# public solvers
# ---------------------------------------------------------------------------

def solve_multitask(
    ensemble: TaskEnsemble,
    config: ExperimentConfig,
    newton_tol: float = 1e-8,
    max_newton: int = 500,
    cg_rtol: float = 1e-10,
    max_cg: int = 10000,
) -> TrainedModel:
    """Minimize the coupled multi-task program on one generated ensemble.

    Squared loss: exact linear-system solve (block elimination for dense
    blocks, stacked CG with relative residual < ``cg_rtol`` beyond the dense
    limit).  Logistic loss: damped Newton to gradient norm < ``newton_tol``,
    seeded by L-BFGS when the stacked dimension exceeds the Newton limit.
    """
    kernel = make_kernel(config.loss_kind)
    features = ensemble.features
    labels = ensemble.labels
    T = config.num_tasks
    k = ensemble.known_dim
    inv_n = [1.0 / n for n in config.samples_per_task]
    gamma1, gamma2 = config.gamma1, config.gamma2

    if config.loss_kind == "squared":
        if gamma2 == 0.0 or T == 1:
            W = np.empty((T, k))
            for t in range(T):
                K = inv_n[t] * (features[t].T @ features[t])
                K[np.diag_indices_from(K)] += gamma1
                W[t] = np.linalg.solve(K, inv_n[t] * (features[t].T @ labels[t]))
        elif k <= DENSE_BLOCK_LIMIT:
            blocks = []
            rhs = []
            for t in range(T):
                K = inv_n[t] * (features[t].T @ features[t])
                K[np.diag_indices_from(K)] += gamma1 + gamma2
                blocks.append(K)
                rhs.append(inv_n[t] * (features[t].T @ labels[t]))
            W = _solve_mean_coupled(blocks, rhs, gamma2)
        else:
            W = _solve_squared_cg(features, labels, inv_n, gamma1, gamma2, cg_rtol, max_cg)
        val, grad = _objective_grad(W, features, labels, inv_n, gamma1, gamma2, kernel)
        return TrainedModel(
            weights=W,
            ambient_dim=ensemble.ambient_dim,
            objective_value=float(val),
            grad_norm=float(np.linalg.norm(grad)),
            iterations=1,
        )

    # logistic loss
    W0 = np.zeros((T, k))
    if T * k > NEWTON_SIZE_LIMIT:
        res = minimize(
            lambda x: _objective_grad(
                x.reshape(T, k), features, labels, inv_n, gamma1, gamma2, kernel
            ),
            W0.ravel(),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": 2000, "ftol": 1e-16, "gtol": 1e-9, "maxcor": 30},
        )
        W0 = res.x.reshape(T, k)
    W, val, gnorm, iters = _newton(
        W0, features, labels, inv_n, gamma1, gamma2, kernel, newton_tol, max_newton
    )
    return TrainedModel(
        weights=W,
        ambient_dim=ensemble.ambient_dim,
        objective_value=float(val),
        grad_norm=gnorm,
        iterations=iters,
    )


def solve_separate(
    ensemble: TaskEnsemble,
    config: ExperimentConfig,
    R: float,
    newton_tol: float = 1e-8,
    max_newton: int = 500,
) -> TrainedModel:
    """Minimize the per-task alignment-regularized program at strength R.

    Requires ``gamma1 + gamma2 - gamma2*R > 0`` (strong convexity of the
    quadratic part); uses the oracle direction ``xi_bar`` (restrict the
    hidden vector to the observed subset, then normalize).
    """
    margin = config.gamma1 + config.gamma2 - config.gamma2 * R
    if margin <= 0.0:
        raise ValueError(
            f"strong convexity violated: gamma1 + gamma2 - gamma2*R = {margin:g} <= 0"
        )
    kernel = make_kernel(config.loss_kind)
    features = ensemble.features
    labels = ensemble.labels
    T = config.num_tasks
    k = ensemble.known_dim
    inv_n = [1.0 / n for n in config.samples_per_task]
    ridge = config.gamma1 + config.gamma2
    reward = config.gamma2 * R

    W = np.empty((T, k))
    total_val = 0.0
    total_sqnorm = 0.0
    iters = 0
    for t in range(T):
        xi_bar = ensemble.hidden_restricted(t, normalized=True)
        if config.loss_kind == "squared":
            K = inv_n[t] * (features[t].T @ features[t])
            K[np.diag_indices_from(K)] += ridge
            K -= reward * np.outer(xi_bar, xi_bar)
            w = np.linalg.solve(K, inv_n[t] * (features[t].T @ labels[t]))
            it_t = 1
        else:
            w, it_t = _newton_separate(
                np.zeros(k), features[t], labels[t], inv_n[t], ridge, reward, xi_bar,
                kernel, newton_tol, max_newton,
            )
        W[t] = w
        z = features[t] @ w
        proj = float(xi_bar @ w)
        val = inv_n[t] * float(np.sum(kernel.value(labels[t], z)))
        val += 0.5 * ridge * float(w @ w) - 0.5 * reward * proj * proj
        total_val += val
        g = inv_n[t] * (features[t].T @ kernel.grad(labels[t], z)) + ridge * w
        g -= reward * proj * xi_bar
        total_sqnorm += float(g @ g)
        iters = max(iters, it_t)
    return TrainedModel(
        weights=W,
        ambient_dim=ensemble.ambient_dim,
        objective_value=float(total_val),
        grad_norm=float(np.sqrt(total_sqnorm)),
        iterations=iters,
    )


def _newton_separate(w0, B, y, inv_n, ridge, reward, xi_bar, kernel, tol, max_iter):
    w = w0.copy()

    def val_grad(w):
        z = B @ w
        proj = float(xi_bar @ w)
        val = inv_n * float(np.sum(kernel.value(y, z)))
        val += 0.5 * ridge * float(w @ w) - 0.5 * reward * proj * proj
        g = inv_n * (B.T @ kernel.grad(y, z)) + ridge * w - reward * proj * xi_bar
        return val, g

    val, g = val_grad(w)
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm < tol:
            return w, it - 1
        z = B @ w
        d = kernel.hess(y, z)
        H = inv_n * (B.T * d) @ B
        H[np.diag_indices_from(H)] += ridge
        H -= reward * np.outer(xi_bar, xi_bar)
        step = np.linalg.solve(H, -g)
        s = 1.0
        descent = float(g @ step)
        for _ in range(60):
            w_new = w + s * step
            val_new, g_new = val_grad(w_new)
            if val_new <= val + 1e-4 * s * descent:
                break
            s *= 0.5
        else:
            raise TrainingError("separate-formulation line search failed", gnorm, it)
        w, val, g = w_new, val_new, g_new
    gnorm = float(np.linalg.norm(g))
    if gnorm >= tol:
        raise TrainingError("separate-formulation Newton did not converge", gnorm, max_iter)
    return w, max_iter
