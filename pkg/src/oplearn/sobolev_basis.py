"""W^{1,2}-orthonormal basis built from the weighted Hermite family.

Basis element k (0-based; the k+1-th element in 1-based labelling) is a
combination of Hermite orders 0..k,

    e_k = sum_m  T[k, m] * h_m,

where T comes from modified Gram-Schmidt run in the exact inner product of
:func:`oplearn.hermite.gram_w12`.  Because that Gram matrix couples only
orders at distance 0 and 2, even and odd Hermite orders never mix and T
inherits a checkerboard sparsity.

Functions in span{e_0, ..., e_{N-1}} are carried as coefficient vectors;
orthonormality makes the W^{1,2} inner product a plain dot product.

A BasisSet is immutable after construction and safe to share across threads.
Sampling requires exclusive use of its random generator; parallel callers
should derive independent streams per partition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionError, ContractError
from .hermite import gram_matrix, hermite_matrix

__all__ = ["BasisSet", "FunctionElement", "CompactSetSpec", "build_basis",
           "evaluate", "evaluate_many", "sample_compact", "w12_inner"]


@dataclass(frozen=True)
class BasisSet:
    """Change of basis from Hermite orders to the W^{1,2}-orthonormal family."""

    n_basis: int
    transform: np.ndarray   # (N, N) lower triangular, positive diagonal
    gram: np.ndarray        # (N, N) analytic Hermite W^{1,2} Gram matrix

    def hermite_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        """Re-express e-basis coefficients in Hermite orders: a -> T^t a.

        Works on a single vector (N,) or a stack (..., N).
        """
        return np.asarray(coeffs, dtype=np.float64) @ self.transform


@dataclass
class FunctionElement:
    """A function in the basis span, stored as its coefficient vector.

    By orthonormality the squared W^{1,2} norm is just ||coeffs||^2.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 1:
            raise ContractError("coefficients must form a 1-d vector")
        if not np.all(np.isfinite(self.coeffs)):
            raise ContractError("coefficients must be finite")


@dataclass(frozen=True)
class CompactSetSpec:
    """The coefficient cube: n_basis coordinates, each in [-bound, bound]."""

    n_basis: int = 5
    bound: float = 5.0

    def __post_init__(self):
        if self.n_basis < 1:
            raise ContractError(f"n_basis must be >= 1, got {self.n_basis}")
        if not self.bound >= 0.0:
            raise ContractError(f"bound must be >= 0, got {self.bound}")


def build_basis(n_basis: int) -> BasisSet:
    """Orthonormalize the first n_basis Hermite orders in W^{1,2}.

    Modified Gram-Schmidt against the analytic Gram matrix, with one
    re-orthogonalization sweep.  Rows of the returned transform satisfy
    T G T^t = I to 1e-10 for n_basis <= 64.
    """
    if not 1 <= n_basis <= 64:
        raise ContractError(f"n_basis must be in [1, 64], got {n_basis}")
    g = gram_matrix(n_basis)
    t = np.zeros((n_basis, n_basis))
    for k in range(n_basis):
        w = np.zeros(n_basis)
        w[k] = 1.0
        for _ in range(2):  # second sweep mops up rounding in the projections
            for j in range(k):
                w -= (t[j] @ g @ w) * t[j]
        norm_sq = w @ g @ w
        if not norm_sq > 1e-12:
            raise ConstructionError(
                f"Gram matrix numerically singular at element {k}")
        t[k] = w / np.sqrt(norm_sq)
    return BasisSet(n_basis=n_basis, transform=t, gram=g)


def evaluate(basis: BasisSet, fe: FunctionElement, x: float) -> float:
    """Pointwise value of the represented function at x."""
    if len(fe.coeffs) != basis.n_basis:
        raise ContractError(
            f"coefficient length {len(fe.coeffs)} != basis size {basis.n_basis}")
    h = hermite_matrix(float(x), basis.n_basis - 1)
    return float(h @ basis.hermite_coeffs(fe.coeffs))


def evaluate_many(basis: BasisSet, coeffs: np.ndarray, x) -> np.ndarray:
    """Pointwise values for one or many coefficient rows.

    Shapes: coeffs (N,) with x of any shape gives values of x's shape;
    coeffs (R, N) with x (R, ...) gives per-record values (R, ...);
    coeffs (R, N) with x (P,) evaluates every record on a shared grid,
    giving (R, P).  The data generators and the sensor sampler use these.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[-1] != basis.n_basis:
        raise ContractError(
            f"coefficient length {coeffs.shape[-1]} != basis size {basis.n_basis}")
    hc = basis.hermite_coeffs(coeffs)
    x = np.asarray(x, dtype=np.float64)
    h = hermite_matrix(x, basis.n_basis - 1)
    if coeffs.ndim == 1:
        return h @ hc
    if coeffs.ndim == 2:
        n_records = coeffs.shape[0]
        if x.ndim >= 1 and x.shape[0] == n_records:
            # per-record points: contract the basis axis row by row
            return np.einsum("r...m,rm->r...", h, hc)
        if x.ndim == 1:
            return hc @ h.T  # shared grid
    raise ContractError(
        f"unsupported shapes: coeffs {coeffs.shape}, x {x.shape}")


def sample_compact(spec: CompactSetSpec,
                   rng: np.random.Generator) -> FunctionElement:
    """Draw one element uniformly from the coefficient cube."""
    return FunctionElement(
        coeffs=rng.uniform(-spec.bound, spec.bound, size=spec.n_basis))


def w12_inner(fe1: FunctionElement, fe2: FunctionElement) -> float:
    """W^{1,2} inner product; a dot product thanks to orthonormality."""
    if len(fe1.coeffs) != len(fe2.coeffs):
        raise ContractError(
            f"length mismatch: {len(fe1.coeffs)} vs {len(fe2.coeffs)}")
    return float(fe1.coeffs @ fe2.coeffs)
