"""Tensorized Gauss-Hermite quadrature over independent standard Gaussians.

The deterministic predictions all involve expectations of Moreau envelopes
evaluated at ``r*H + q*S`` against a label ``Y`` built from ``S`` and an
extra Gaussian ``Z``.  This module provides the node/weight machinery in the
probabilists' convention (weights sum to one, so integrating the constant 1
returns exactly 1) plus cached "channels": flattened node arrays for the
(S, Z, H) tensor grid of a regression label or the (S, H) grid of a
classification label whose Z dimension is integrated analytically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import ndtr

__all__ = ["QuadratureGrid", "gauss_hermite"]

MIN_ORDER = 8


def gauss_hermite(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E[f(G)], G ~ N(0, 1); weights sum to 1."""
    x, w = hermegauss(order)
    return x, w / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class _Channel:
    """Flattened quadrature arrays for one (model_kind, kappa/alpha, rho).

    ``s`` and ``h`` are the envelope-point factors; ``weight`` are the tensor
    weights.  For regression ``y`` holds the label at each node and ``p_plus``
    is None; for classification ``y`` is None and ``p_plus`` holds
    P(Y = +1 | S) at each node (two-branch mixture over Y = +-1).
    """

    s: np.ndarray
    h: np.ndarray
    weight: np.ndarray
    y: np.ndarray | None
    p_plus: np.ndarray | None


class QuadratureGrid:
    """Gauss-Hermite grid of a given order per dimension (default 48).

    Channels are cached per ``(model_kind, kappa_over_alpha, rho)``; the
    saddle solvers re-evaluate the same channel thousands of times with
    varying (q, r, b), so the node arrays are built once.
    """

    def __init__(self, order: int = 48):
        order = int(order)
        if order < MIN_ORDER:
            raise ValueError(f"quadrature order must be >= {MIN_ORDER}, got {order}")
        self.order = order
        self.nodes, self.weights = gauss_hermite(order)
        self._channels: dict = {}

    def __repr__(self) -> str:
        return f"QuadratureGrid(order={self.order})"

    # -- channel construction ------------------------------------------------
    def channel(self, model_kind: str, kappa_over_alpha: float, rho: float) -> _Channel:
        ka = float(kappa_over_alpha)
        if not 0.0 <= ka <= 1.0:
            raise ValueError(f"kappa/alpha must lie in [0, 1], got {ka}")
        key = (model_kind, ka, float(rho))
        ch = self._channels.get(key)
        if ch is None:
            if model_kind == "linear_regression":
                ch = self._regression_channel(ka, float(rho))
            elif model_kind == "binary_classification":
                ch = self._classification_channel(ka)
            else:
                raise ValueError(f"unknown model_kind {model_kind!r}")
            self._channels[key] = ch
        return ch

    def _regression_channel(self, ka: float, rho: float) -> _Channel:
        if not 0.0 < rho <= 1.0:
            raise ValueError(
                f"regression labels scale like 1/sqrt(rho); need rho in (0, 1], got {rho}"
            )
        c = np.sqrt(ka)
        d = np.sqrt(max(0.0, 1.0 - ka))
        c0 = 1.0 / np.sqrt(rho)
        x, w = self.nodes, self.weights
        if d == 0.0:
            # Y depends on S only: collapse the Z dimension.
            s, h = np.meshgrid(x, x, indexing="ij")
            weight = np.outer(w, w).ravel()
            s = s.ravel()
            h = h.ravel()
            y = c0 * c * s
        else:
            s, z, h = np.meshgrid(x, x, x, indexing="ij")
            weight = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
            s = s.ravel()
            z = z.ravel()
            h = h.ravel()
            y = c0 * (c * s + d * z)
        return _Channel(s=s, h=h, weight=weight, y=y, p_plus=None)

    def _classification_channel(self, ka: float) -> _Channel:
        # Y = sign(c*S + d*Z): the 1/sqrt(rho) scale is irrelevant and Z is
        # integrated analytically, P(Y=+1 | S) = Phi(c*S/d).
        c = np.sqrt(ka)
        d = np.sqrt(max(0.0, 1.0 - ka))
        x, w = self.nodes, self.weights
        s, h = np.meshgrid(x, x, indexing="ij")
        weight = np.outer(w, w).ravel()
        s = s.ravel()
        h = h.ravel()
        if c == 0.0:
            p_plus = np.full_like(s, 0.5)
        elif d == 0.0:
            p_plus = (s > 0.0).astype(float)
        else:
            p_plus = ndtr(c * s / d)
        return _Channel(s=s, h=h, weight=weight, y=None, p_plus=p_plus)
