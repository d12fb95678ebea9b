"""Scalar loss kernels: values, derivatives, proximal operators, Moreau envelopes.

Two kernels are shipped: the squared loss ``(x - y)^2 / 2`` used for
regression and the logistic loss ``log(1 + exp(-x*y))`` used for
classification.  Every method broadcasts over numpy arrays in ``y`` and the
envelope point ``a``; the envelope parameter ``b`` is a positive scalar.

The Moreau envelope of a loss ``l(y; .)`` with parameter ``b > 0`` is

    M(a; b) = min_x  l(y; x) + (x - a)^2 / (2 b),

its minimizer is the proximal point ``prox(a; b)`` and its gradient in ``a``
is ``(a - prox) / b``.  For the squared loss everything is closed form; for
the logistic loss the prox solves a strictly increasing scalar equation by
safeguarded Newton (bisection bracket maintained alongside the Newton step).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = ["LossKernel", "SquaredLoss", "LogisticLoss", "make_kernel", "KERNELS"]

# Newton contract for the logistic prox.
PROX_TOL = 1e-12
PROX_MAX_ITER = 50


def _check_b(b):
    """Validate positivity of the envelope parameter (scalar or array)."""
    if np.isscalar(b) or np.ndim(b) == 0:
        b = float(b)
        if not b > 0.0:
            raise ValueError(f"envelope parameter b must be positive, got {b}")
        return b
    b = np.asarray(b, dtype=float)
    if not np.all(b > 0.0):
        raise ValueError("envelope parameter b must be positive everywhere")
    return b


class LossKernel:
    """Common interface of the scalar loss kernels."""

    kind: str

    def value(self, y, x):
        raise NotImplementedError

    def grad(self, y, x):
        """d/dx of the loss at (y, x)."""
        raise NotImplementedError

    def hess(self, y, x):
        """d^2/dx^2 of the loss at (y, x)."""
        raise NotImplementedError

    def prox(self, y, a, b: float):
        """Minimizer of ``l(y; x) + (x - a)^2 / (2 b)``."""
        raise NotImplementedError

    def moreau(self, y, a, b: float):
        """Moreau envelope ``M(a; b)``."""
        b = _check_b(b)
        x = self.prox(y, a, b)
        return self.value(y, x) + (x - a) ** 2 / (2.0 * b)

    def moreau_grad(self, y, a, b: float):
        """d/da of the envelope, via the prox identity ``(a - prox) / b``."""
        b = _check_b(b)
        return (np.asarray(a, dtype=float) - self.prox(y, a, b)) / b

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class SquaredLoss(LossKernel):
    """l(y; x) = (x - y)^2 / 2, all envelope quantities in closed form."""

    kind = "squared"

    def value(self, y, x):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        return 0.5 * (x - y) ** 2

    def grad(self, y, x):
        return np.asarray(x, dtype=float) - np.asarray(y, dtype=float)

    def hess(self, y, x):
        y, x = np.broadcast_arrays(np.asarray(y, float), np.asarray(x, float))
        return np.ones_like(x)

    def prox(self, y, a, b: float):
        b = _check_b(b)
        y = np.asarray(y, dtype=float)
        a = np.asarray(a, dtype=float)
        return (a + b * y) / (1.0 + b)

    def moreau(self, y, a, b: float):
        b = _check_b(b)
        y = np.asarray(y, dtype=float)
        a = np.asarray(a, dtype=float)
        return (a - y) ** 2 / (2.0 * (1.0 + b))

    def moreau_grad(self, y, a, b: float):
        b = _check_b(b)
        y = np.asarray(y, dtype=float)
        a = np.asarray(a, dtype=float)
        return (a - y) / (1.0 + b)


class LogisticLoss(LossKernel):
    """l(y; x) = log(1 + exp(-x*y)), overflow-safe via logaddexp.

    ``logaddexp(0, -x*y)`` evaluates the stable branch automatically: for
    ``-x*y`` beyond ~30 it returns ``-x*y + log1p(exp(x*y))`` to machine
    precision without overflow.
    """

    kind = "logistic"

    def value(self, y, x):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        return np.logaddexp(0.0, -x * y)

    def grad(self, y, x):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        return -y * expit(-x * y)

    def hess(self, y, x):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        s = expit(-x * y)
        return y * y * s * (1.0 - s)

    def prox(self, y, a, b: float, tol: float = PROX_TOL, max_iter: int = PROX_MAX_ITER):
        """Safeguarded Newton on the monotone residual x - a + b*l'(y; x).

        The residual is strictly increasing with slope >= 1, and the root
        lies in the bracket with endpoints ``a`` and ``a + b*y`` (since
        ``|l'| < |y|`` with sign ``-sign(y)``).  Newton steps that leave the
        bracket are replaced by bisection, which guarantees convergence.
        """
        b = _check_b(b)
        y, a = np.broadcast_arrays(np.asarray(y, float), np.asarray(a, float))
        y = y.astype(float, copy=False)
        x = a.astype(float, copy=True)
        lo = np.minimum(a, a + b * y)
        hi = np.maximum(a, a + b * y)
        prev = np.full(x.shape, np.inf)
        for _ in range(max_iter):
            s = expit(-x * y)
            g = x - a - b * y * s
            abs_g = np.abs(g)
            pending = abs_g >= tol
            if not pending.any():
                break
            # shrink the bracket using the sign of the increasing residual
            lo = np.where(pending & (g < 0.0), np.maximum(lo, x), lo)
            hi = np.where(pending & (g > 0.0), np.minimum(hi, x), hi)
            h = 1.0 + b * y * y * s * (1.0 - s)
            xn = x - g / h
            # bisect when Newton left the bracket or failed to halve the
            # residual (breaks the 2-cycles Newton falls into on the flat
            # logistic tails); converged entries stay put either way
            stalled = abs_g > 0.5 * prev
            xn = np.where(stalled | (xn <= lo) | (xn >= hi), 0.5 * (lo + hi), xn)
            x = np.where(pending, xn, x)
            prev = abs_g
        if x.ndim == 0:
            return float(x)
        return x


KERNELS = {"squared": SquaredLoss, "logistic": LogisticLoss}


def make_kernel(kind: str) -> LossKernel:
    """Instantiate a loss kernel by name ('squared' or 'logistic')."""
    try:
        return KERNELS[kind]()
    except KeyError:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {sorted(KERNELS)}") from None
