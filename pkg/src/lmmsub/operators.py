"""Matrix-free linear operators and a conjugate-gradient solver."""
from dataclasses import dataclass
from typing import Callable

import numpy as np

DENSE_CAP = 4_000_000


class NumericalBreakdownError(ArithmeticError):
    """Raised when CG produces a non-finite quantity."""

    def __init__(self, iteration, message="non-finite value in conjugate gradients"):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class SizeGuardError(ValueError):
    pass


@dataclass(frozen=True)
class LinearOperator:
    """A linear map R^domain_dim -> R^codomain_dim given by its actions."""

    domain_dim: int
    codomain_dim: int
    apply: Callable[[np.ndarray], np.ndarray]
    adjoint_apply: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.domain_dim < 1 or self.codomain_dim < 1:
            raise ValueError("operator dimensions must be positive")

    def __matmul__(self, u):
        return self.apply(u)

    @property
    def T(self):
        return LinearOperator(self.codomain_dim, self.domain_dim, self.adjoint_apply, self.apply)

    @classmethod
    def from_matrix(cls, A):
        A = np.asarray(A, dtype=float)
        return cls(A.shape[1], A.shape[0], lambda u: A @ u, lambda w: A.T @ w)

    @classmethod
    def identity(cls, n):
        return cls(n, n, lambda u: np.array(u, dtype=float), lambda w: np.array(w, dtype=float))


@dataclass(frozen=True)
class CGSettings:
    max_iters: int = 100
    residual_tol: float = 1e-25

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.residual_tol < 0:
            raise ValueError("residual_tol must be nonnegative")


@dataclass(frozen=True)
class CGResult:
    solution: np.ndarray
    iterations: int
    final_residual_norm: float
    converged: bool


def cg_solve(gram_apply, rhs, settings=CGSettings()):
    """Solve ``gram_apply(w) = rhs`` by conjugate gradients from ``w = 0``.

    ``residual_tol`` is compared against the Euclidean norm of the recursively
    updated residual. Raises :class:`NumericalBreakdownError` on non-finite
    iterates or on a non-positive curvature ``<p, G p>``.
    """
    b = np.asarray(rhs, dtype=float)
    w = np.zeros_like(b)
    r = b.copy()
    rr = float(r @ r)
    tol_sq = settings.residual_tol ** 2
    if not np.isfinite(rr):
        raise NumericalBreakdownError(0)
    if rr <= tol_sq:
        return CGResult(w, 0, float(np.sqrt(rr)), True)
    p = r.copy()
    it = 0
    for it in range(1, settings.max_iters + 1):
        Gp = gram_apply(p)
        pGp = float(p @ Gp)
        if not np.isfinite(pGp) or pGp <= 0.0:
            raise NumericalBreakdownError(it, "non-positive or non-finite curvature in conjugate gradients")
        alpha = rr / pGp
        w = w + alpha * p
        r = r - alpha * Gp
        rr_new = float(r @ r)
        if not np.isfinite(rr_new) or not np.isfinite(alpha):
            raise NumericalBreakdownError(it)
        if rr_new <= tol_sq:
            return CGResult(w, it, float(np.sqrt(rr_new)), True)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return CGResult(w, it, float(np.sqrt(rr)), False)


def materialize_dense(op, cap=DENSE_CAP):
    """Dense matrix of ``op`` obtained by probing with standard basis vectors."""
    if op.domain_dim * op.codomain_dim > cap:
        raise SizeGuardError(
            f"{op.codomain_dim}x{op.domain_dim} operator exceeds dense cap of {cap} entries"
        )
    M = np.empty((op.codomain_dim, op.domain_dim))
    e = np.zeros(op.domain_dim)
    for j in range(op.domain_dim):
        e[j] = 1.0
        M[:, j] = op.apply(e)
        e[j] = 0.0
    return M


def op_norm_estimate(op, iters=50, seed=0):
    """Lower estimate of the spectral norm of ``op`` by power iteration on op^T op.

    The returned value is the largest Rayleigh-quotient estimate seen so far,
    so it never decreases as ``iters`` grows.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(op.domain_dim)
    u /= np.linalg.norm(u)
    best = 0.0
    for _ in range(iters):
        Au = op.apply(u)
        best = max(best, float(np.linalg.norm(Au)))
        v = op.adjoint_apply(Au)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            break
        u = v / nv
    return best
