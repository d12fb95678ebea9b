"""Empirical convex solvers: closed-form reductions, oracles, structure."""

import numpy as np
import pytest
from scipy.optimize import minimize

from mtl_asymptotics.losses import make_kernel
from mtl_asymptotics.model import ExperimentConfig, generate_ensemble
from mtl_asymptotics.train import (
    TrainingError,
    _solve_squared_cg,
    solve_multitask,
    solve_separate,
)


def make_setup(loss="squared", model="linear_regression", T=2, p=120, k=30, n=40,
               rho=0.8, gamma1=0.1, gamma2=0.5, seed=3):
    cfg = ExperimentConfig(T, p, k, n, rho, gamma1, gamma2, loss, model, seed)
    return cfg, generate_ensemble(cfg, seed)


def stacked_objective(W, ensemble, cfg, kernel):
    w_bar = W.mean(axis=0)
    val = 0.5 * cfg.gamma1 * np.sum(W * W) + 0.5 * cfg.gamma2 * np.sum((W - w_bar) ** 2)
    for t in range(cfg.num_tasks):
        z = ensemble.features[t] @ W[t]
        val += np.sum(kernel.value(ensemble.labels[t], z)) / cfg.samples_per_task[t]
    return float(val)


class TestSquared:
    def test_gamma2_zero_matches_per_task_ridge(self):
        cfg, ens = make_setup(gamma2=0.0)
        model = solve_multitask(ens, cfg)
        for t in range(cfg.num_tasks):
            B = ens.features[t]
            n = cfg.samples_per_task[t]
            w_ridge = np.linalg.solve(
                B.T @ B / n + cfg.gamma1 * np.eye(cfg.known_dim), B.T @ ens.labels[t] / n
            )
            assert np.max(np.abs(model.weights[t] - w_ridge)) < 1e-8

    def test_single_task_ignores_coupling(self):
        cfg1, ens1 = make_setup(T=1, gamma2=5.0)
        cfg2 = cfg1.replace(gamma2=0.0)
        a = solve_multitask(ens1, cfg1)
        b = solve_multitask(ens1, cfg2)
        assert np.allclose(a.weights, b.weights, atol=1e-12)

    def test_generic_optimizer_oracle_small_instance(self):
        # T=2, k=3, n=5: free minimization from zero with a generic method
        cfg, ens = make_setup(T=2, p=10, k=3, n=5, gamma1=0.3, gamma2=0.7)
        model = solve_multitask(ens, cfg)
        kernel = make_kernel("squared")
        res = minimize(
            lambda x: stacked_objective(x.reshape(2, 3), ens, cfg, kernel),
            np.zeros(6),
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000, "maxfev": 20000},
        )
        assert np.max(np.abs(model.weights.ravel() - res.x)) < 1e-6

    def test_linear_system_residual(self):
        cfg, ens = make_setup()
        model = solve_multitask(ens, cfg)
        # stationarity of the quadratic objective
        assert model.grad_norm < 1e-10

    def test_cg_path_matches_block_elimination(self):
        cfg, ens = make_setup(T=3, p=150, k=40, n=50)
        direct = solve_multitask(ens, cfg)
        inv_n = [1.0 / n for n in cfg.samples_per_task]
        W_cg = _solve_squared_cg(ens.features, ens.labels, inv_n,
                                 cfg.gamma1, cfg.gamma2, 1e-12, 10000)
        assert np.max(np.abs(direct.weights - W_cg)) < 1e-8

    def test_coupling_gradient_identity_symbolic(self):
        # gradient of (gamma2/2) sum_s |w_s - w_bar|^2 w.r.t. w_t equals
        # gamma2 (w_t - w_bar); verified symbolically for T=3, k=2
        import sympy as sp

        W = [[sp.Symbol(f"w{t}{i}") for i in range(2)] for t in range(3)]
        wbar = [sp.Rational(1, 3) * sum(W[t][i] for t in range(3)) for i in range(2)]
        penalty = sp.Rational(1, 2) * sum(
            sum((W[t][i] - wbar[i]) ** 2 for i in range(2)) for t in range(3)
        )
        for t in range(3):
            for i in range(2):
                grad = sp.diff(penalty, W[t][i])
                assert sp.simplify(grad - (W[t][i] - wbar[i])) == 0


class TestLogistic:
    def test_newton_reaches_tolerance(self):
        cfg, ens = make_setup(loss="logistic", model="binary_classification")
        model = solve_multitask(ens, cfg)
        assert model.grad_norm < 1e-8
        assert model.iterations < 500

    def test_gamma2_zero_matches_independent_fits(self):
        cfg, ens = make_setup(loss="logistic", model="binary_classification",
                              gamma2=0.0, gamma1=0.2)
        model = solve_multitask(ens, cfg)
        kernel = make_kernel("logistic")
        for t in range(cfg.num_tasks):
            B = ens.features[t]
            y = ens.labels[t]
            n = cfg.samples_per_task[t]

            def f(w):
                z = B @ w
                val = np.sum(kernel.value(y, z)) / n + 0.5 * cfg.gamma1 * w @ w
                g = B.T @ kernel.grad(y, z) / n + cfg.gamma1 * w
                return val, g

            res = minimize(f, np.zeros(cfg.known_dim), jac=True, method="L-BFGS-B",
                           options={"ftol": 1e-16, "gtol": 1e-12, "maxiter": 5000})
            assert np.max(np.abs(model.weights[t] - res.x)) < 1e-6

    def test_lbfgs_seeded_path_above_size_limit(self, monkeypatch):
        import mtl_asymptotics.train as train_mod

        monkeypatch.setattr(train_mod, "NEWTON_SIZE_LIMIT", 10)
        cfg, ens = make_setup(loss="logistic", model="binary_classification")
        model = solve_multitask(ens, cfg)
        assert model.grad_norm < 1e-8

    def test_iteration_cap_raises_with_diagnostics(self):
        cfg, ens = make_setup(loss="logistic", model="binary_classification")
        with pytest.raises(TrainingError) as err:
            solve_multitask(ens, cfg, max_newton=1, newton_tol=1e-14)
        assert err.value.iterations >= 1

    def test_objective_monotone_along_trajectory(self):
        # tightening the stopping tolerance extends the same line-searched
        # trajectory, so objective values are non-increasing
        cfg, ens = make_setup(loss="logistic", model="binary_classification")
        values = [
            solve_multitask(ens, cfg, newton_tol=tol).objective_value
            for tol in (1e-1, 1e-3, 1e-5, 1e-8)
        ]
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


class TestStructure:
    def test_objective_at_solution_beats_perturbations(self, rng):
        cfg, ens = make_setup(loss="logistic", model="binary_classification")
        model = solve_multitask(ens, cfg)
        kernel = make_kernel("logistic")
        base = stacked_objective(model.weights, ens, cfg, kernel)
        for _ in range(5):
            delta = rng.normal(size=model.weights.shape) * 1e-3
            assert stacked_objective(model.weights + delta, ens, cfg, kernel) >= base

    def test_permutation_equivariance(self):
        cfg, ens = make_setup(T=3)
        model = solve_multitask(ens, cfg)
        perm = [2, 0, 1]
        from dataclasses import replace

        ens_p = replace(
            ens,
            task_vectors=ens.task_vectors[perm],
            hidden_vectors=ens.hidden_vectors[perm],
            features_full=[ens.features_full[i] for i in perm],
            labels=[ens.labels[i] for i in perm],
        )
        model_p = solve_multitask(ens_p, cfg)
        assert np.allclose(model_p.weights, model.weights[perm], atol=1e-9)

    def test_coupling_dominates_as_gamma2_grows(self):
        cfg, ens = make_setup(T=3, rho=0.6)
        spreads = []
        for g2 in (0.1, 1.0, 10.0, 100.0):
            model = solve_multitask(ens, cfg.replace(gamma2=g2))
            w_bar = model.weights.mean(axis=0)
            spreads.append(np.max(np.linalg.norm(model.weights - w_bar, axis=1)))
        assert all(b < a for a, b in zip(spreads, spreads[1:]))

    def test_betas_embedding(self):
        cfg, ens = make_setup()
        model = solve_multitask(ens, cfg)
        betas = model.betas
        assert betas.shape == (cfg.num_tasks, cfg.ambient_dim)
        assert np.array_equal(betas[:, : cfg.known_dim], model.weights)
        assert np.all(betas[:, cfg.known_dim:] == 0.0)


class TestSeparate:
    def test_R_zero_matches_multitask_ridge(self):
        # R=0 drops the alignment term: a per-task problem with ridge
        # gamma1 + gamma2
        cfg, ens = make_setup(gamma1=0.1, gamma2=0.4)
        sep = solve_separate(ens, cfg, 0.0)
        merged = cfg.replace(gamma1=cfg.gamma1 + cfg.gamma2, gamma2=0.0)
        mt = solve_multitask(ens, merged)
        assert np.max(np.abs(sep.weights - mt.weights)) < 1e-9

    def test_gamma2_zero_R_irrelevant(self):
        cfg, ens = make_setup(gamma2=0.0)
        a = solve_separate(ens, cfg, 0.0)
        b = solve_separate(ens, cfg, 0.9)
        assert np.allclose(a.weights, b.weights, atol=1e-12)

    def test_generic_optimizer_oracle(self):
        cfg, ens = make_setup(T=1, p=12, k=3, n=6, rho=1.0, gamma1=0.2, gamma2=0.6)
        R = 1.0
        sep = solve_separate(ens, cfg, R)
        kernel = make_kernel("squared")
        xi_bar = ens.hidden_restricted(0, normalized=True)

        def f(w):
            z = ens.features[0] @ w
            val = np.sum(kernel.value(ens.labels[0], z)) / cfg.samples_per_task[0]
            val += 0.5 * (cfg.gamma1 + cfg.gamma2) * w @ w
            val -= 0.5 * cfg.gamma2 * R * float(xi_bar @ w) ** 2
            return val

        res = minimize(f, np.zeros(3), method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000})
        assert np.max(np.abs(sep.weights[0] - res.x)) < 1e-6

    def test_strong_convexity_precondition(self):
        cfg, ens = make_setup(gamma1=0.0, gamma2=1.0)
        with pytest.raises(ValueError, match="strong convexity"):
            solve_separate(ens, cfg, 1.0)

    def test_logistic_separate_converges(self):
        cfg, ens = make_setup(loss="logistic", model="binary_classification",
                              gamma1=0.05, gamma2=0.5)
        sep = solve_separate(ens, cfg, 0.7)
        assert sep.grad_norm < 1e-8
