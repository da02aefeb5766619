"""Gaussian-weighted Hermite functions and their Sobolev inner products.

The family used throughout this package carries the weight exp(-pi x^2) and
is orthonormal in L2(R).  Values are computed by a three-term recurrence

    h_{m+1}(x) = (2 pi x h_m(x) - sqrt(pi m) h_{m-1}(x)) / sqrt(pi (m+1)),
    h_0(x)     = 2^(1/4) exp(-pi x^2),

never by the factorial-and-derivative closed form, which overflows and
cancels already for moderate orders.  Derivatives follow from the ladder
identity  h_m'(x) = sqrt(pi m) h_{m-1}(x) - sqrt(pi (m+1)) h_{m+1}(x).

The W^{1,2} inner products int (h_m h_n + h_m' h_n') dx have an exact
closed form ("multiplication table"), implemented in :func:`gram_w12`.

All functions here are pure; they can be called concurrently without locks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

__all__ = ["HermiteEval", "hermite_values", "hermite_matrix",
           "hermite_derivatives", "gram_w12", "gram_matrix"]

# 2^(1/4), the value of the weighted family at the origin for order zero
_H0_SCALE = 2.0 ** 0.25


@dataclass
class HermiteEval:
    """Values (and optionally derivatives) of orders 0..M at one abscissa."""

    x: float
    values: np.ndarray
    derivatives: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.derivatives is not None:
            self.derivatives = np.asarray(self.derivatives, dtype=np.float64)
            if self.derivatives.shape != self.values.shape:
                raise ContractError(
                    "derivatives length %d != values length %d"
                    % (len(self.derivatives), len(self.values)))


def hermite_matrix(x, max_m: int) -> np.ndarray:
    """Weighted Hermite values of orders 0..max_m on an array of points.

    Parameters
    ----------
    x : array_like
        Evaluation points, any shape.
    max_m : int
        Highest order, >= 0.

    Returns
    -------
    ndarray of shape x.shape + (max_m + 1,).
    """
    if max_m < 0:
        raise ContractError(f"max_m must be >= 0, got {max_m}")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ContractError("evaluation points must be finite")
    out = np.empty(x.shape + (max_m + 1,), dtype=np.float64)
    out[..., 0] = _H0_SCALE * np.exp(-np.pi * x * x)
    if max_m >= 1:
        two_pi_x = 2.0 * np.pi * x
        out[..., 1] = two_pi_x * out[..., 0] / math.sqrt(np.pi)
        for m in range(1, max_m):
            out[..., m + 1] = (two_pi_x * out[..., m]
                               - math.sqrt(np.pi * m) * out[..., m - 1]
                               ) / math.sqrt(np.pi * (m + 1))
    return out


def hermite_values(x: float, max_m: int) -> HermiteEval:
    """Evaluate orders 0..max_m at a single point (values only)."""
    if not (isinstance(x, (int, float)) and math.isfinite(x)):
        raise ContractError(f"x must be a finite real, got {x!r}")
    return HermiteEval(x=float(x), values=hermite_matrix(float(x), max_m))


def hermite_derivatives(ev: HermiteEval) -> HermiteEval:
    """Fill derivatives of orders 0..M-1 from values of orders 0..M.

    One order of values is consumed by the ladder identity, so the result
    carries both values and derivatives up to ``len(ev.values) - 2``.
    """
    n_vals = len(ev.values)
    if n_vals < 2:
        raise ContractError(
            "need values up to order max_m + 1 to differentiate up to max_m")
    max_m = n_vals - 2
    m = np.arange(max_m + 1)
    # sqrt(pi*0) kills the h_{-1} term, so one formula covers m = 0 too
    lower = np.concatenate(([0.0], ev.values[:max_m]))
    deriv = np.sqrt(np.pi * m) * lower - np.sqrt(np.pi * (m + 1)) * ev.values[1:]
    return HermiteEval(x=ev.x, values=ev.values[:max_m + 1], derivatives=deriv)


def gram_w12(m: int, n: int) -> float:
    """Exact W^{1,2} inner product between weighted Hermite orders m and n.

    Diagonal entries are 1 + pi (2m + 1); entries two orders apart are
    -pi sqrt(l (l-1)) with l = max(m, n); everything else vanishes.
    """
    if m < 0 or n < 0:
        raise ContractError(f"orders must be >= 0, got ({m}, {n})")
    if m == n:
        return 1.0 + np.pi * (2 * m + 1)
    if abs(m - n) == 2:
        ell = max(m, n)
        return -np.pi * math.sqrt(ell * (ell - 1))
    return 0.0


def gram_matrix(n: int) -> np.ndarray:
    """The n x n W^{1,2} Gram matrix of weighted Hermite orders 0..n-1."""
    if n < 1:
        raise ContractError(f"matrix size must be >= 1, got {n}")
    idx = np.arange(n, dtype=np.float64)
    g = np.diag(1.0 + np.pi * (2.0 * idx + 1.0))
    if n > 2:
        ell = idx[2:]
        off = -np.pi * np.sqrt(ell * (ell - 1.0))
        g += np.diag(off, k=2) + np.diag(off, k=-2)
    return g
