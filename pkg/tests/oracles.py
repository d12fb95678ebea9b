"""Independent brute-force oracles shared by the unit and acceptance tests.

Everything here is deliberately dumb: dense or coarse-to-fine grids over the
raw objectives, no gradients, no solver machinery, so that agreement with
the package's solvers is a genuine cross-check.
"""

import numpy as np

from mtl_asymptotics.theory import CouplingMatrixError, _GeneralSaddle


def grid_search_min(kernel, y, a, b, lo=-20.0, hi=20.0, step=1e-6):
    """Dense-grid minimizer/minimum of ``l(y; x) + (x - a)^2/(2b)``."""
    xs = np.arange(lo, hi, step)
    vals = kernel.value(y, xs) + (xs - a) ** 2 / (2.0 * b)
    i = int(np.argmin(vals))
    return xs[i], float(vals[i])


def prox_grid_oracle(kernel, y, a, b, coarse=1e-3, fine=1e-6):
    """Two-stage dense grid over the prox bracket, final resolution ``fine``.

    The minimizer lies between ``a`` and ``a + b*y``; a coarse pass locates
    it, a fine pass at step 1e-6 pins it down.
    """
    lo = min(a, a + b * y) - coarse
    hi = max(a, a + b * y) + coarse
    xs = np.arange(lo, hi + coarse, coarse)
    vals = kernel.value(y, xs) + (xs - a) ** 2 / (2.0 * b)
    x0 = xs[int(np.argmin(vals))]
    xs = np.arange(x0 - 2 * coarse, x0 + 2 * coarse, fine)
    vals = kernel.value(y, xs) + (xs - a) ** 2 / (2.0 * b)
    i = int(np.argmin(vals))
    return float(xs[i]), float(vals[i])


def eta_max_on_grid(objective, q, r, lo=1e-6, hi=1e5, points=11, rounds=5):
    """Inner maximization by log-grid search with window refinement."""
    lo, hi = np.log(lo), np.log(hi)
    best = -np.inf
    for _ in range(rounds):
        etas = np.exp(np.linspace(lo, hi, points))
        vals = np.array([objective(q, r, e) for e in etas])
        j = int(np.argmax(vals))
        best = float(vals[j])
        lo_new = np.log(etas[max(0, j - 1)])
        hi_new = np.log(etas[min(points - 1, j + 1)])
        lo, hi = lo_new, hi_new
    return best


def saddle_value_oracle(objective, q_hi=5.0, r_hi=5.0, points=11, rounds=4):
    """Brute-force min over a (q, r) grid of eta-grid maxima, refined."""
    q_lo = r_lo = 0.0
    best = (np.inf, 0.0, 0.0)
    for _ in range(rounds):
        qs = np.linspace(q_lo, q_hi, points)
        rs = np.linspace(r_lo, r_hi, points)
        for q in qs:
            for r in rs:
                v = eta_max_on_grid(objective, q, r)
                if v < best[0]:
                    best = (v, q, r)
        _, qb, rb = best
        dq = qs[1] - qs[0]
        dr = rs[1] - rs[0]
        q_lo, q_hi = max(0.0, qb - dq), qb + dq
        r_lo, r_hi = max(0.0, rb - dr), rb + dr
    return best[0]


def general_saddle_oracle(alphas, kappas, rho, gamma1, gamma2, loss, model_kind,
                          grid, box_hi=2.0, points=5, outer_rounds=4,
                          eta_points=7, eta_rounds=5):
    """Grid + refinement over all six variables of the T=2 general problem.

    The inner eta grid is evaluated in one vectorized pass per round (2x2
    coupling matrices in closed form, batched envelopes over the eta combos);
    the method remains plain grid search with window refinement.
    """
    from mtl_asymptotics.losses import make_kernel
    from mtl_asymptotics.theory import _envelope_valgrad_b

    assert len(alphas) == 2, "oracle specialized to two tasks"
    kernel = make_kernel(loss) if isinstance(loss, str) else loss
    kappas = np.asarray(kappas, dtype=float)
    channels = [grid.channel(model_kind, min(k / a, 1.0), rho)
                for k, a in zip(kappas, alphas)]

    def objective_batch(q, r, e1, e2):
        """Objective at (q, r) for every (eta1, eta2) pair, -inf off the cone."""
        E1, E2 = np.meshgrid(e1, e2, indexing="ij")
        E1 = E1.ravel()
        E2 = E2.ravel()
        half = 0.5 * gamma2
        c11 = half + E1
        c22 = half + E2
        c12 = -half
        det = c11 * c22 - c12 * c12
        feasible = (c11 > 0) & (det > 0)
        det_safe = np.where(feasible, det, 1.0)
        i11 = c22 / det_safe
        i22 = c11 / det_safe
        i12 = -c12 / det_safe
        # B = C^{-1} o L, then B^{-1} in closed form
        b11, b22, b12 = i11, i22, rho * i12
        det_b = b11 * b22 - b12 * b12
        feasible &= det_b > 0
        det_b = np.where(feasible, det_b, 1.0)
        quad = 0.5 * (q[0] ** 2 * b22 - 2 * q[0] * q[1] * b12 + q[1] ** 2 * b11) / det_b
        v1 = kappas[0] * i11
        v2 = kappas[1] * i22
        vals = quad
        vals = vals + 0.5 * (gamma1 - E1) * (q[0] ** 2 + r[0] ** 2)
        vals = vals + 0.5 * (gamma1 - E2) * (q[1] ** 2 + r[1] ** 2)
        v1 = np.where(feasible & (v1 > 0), v1, 1.0)
        v2 = np.where(feasible & (v2 > 0), v2, 1.0)
        env1, _ = _envelope_valgrad_b(kernel, channels[0], q[0], r[0], v1)
        env2, _ = _envelope_valgrad_b(kernel, channels[1], q[1], r[1], v2)
        vals = vals + env1 + env2
        return np.where(feasible, vals, -np.inf), E1, E2

    def eta2_max(q, r):
        lo1 = lo2 = -4.0
        hi1 = hi2 = 3.0
        best = -np.inf
        for _ in range(eta_rounds):
            e1s = np.logspace(lo1, hi1, eta_points)
            e2s = np.logspace(lo2, hi2, eta_points)
            vals, E1, E2 = objective_batch(q, r, e1s, e2s)
            k = int(np.argmax(vals))
            best = float(vals[k])
            i, j = divmod(k, eta_points)
            lo1 = np.log10(e1s[max(0, i - 1)])
            hi1 = np.log10(e1s[min(eta_points - 1, i + 1)])
            lo2 = np.log10(e2s[max(0, j - 1)])
            hi2 = np.log10(e2s[min(eta_points - 1, j + 1)])
        return best

    box = [(0.0, box_hi)] * 4
    best = (np.inf, (0.0, 0.0, 0.0, 0.0))
    axes = None
    for _ in range(outer_rounds):
        axes = [np.linspace(lo, hi, points) for lo, hi in box]
        for q1 in axes[0]:
            for r1 in axes[1]:
                for q2 in axes[2]:
                    for r2 in axes[3]:
                        v = eta2_max(np.array([q1, q2]), np.array([r1, r2]))
                        if v < best[0]:
                            best = (v, (q1, r1, q2, r2))
        centers = best[1]
        new_box = []
        for idx, c in enumerate(centers):
            step = axes[idx][1] - axes[idx][0]
            new_box.append((max(0.0, c - step), c + step))
        box = new_box
    return best[0]
