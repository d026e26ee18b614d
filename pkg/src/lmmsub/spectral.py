"""Dense spectral oracles for the factorization Jacobians and a weak-alignment probe."""
from dataclasses import dataclass
from math import comb
from typing import Optional

import numpy as np

from .operators import DENSE_CAP, SizeGuardError
from .parameterizations import make_map

RANK_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    computed_eigenvalues: np.ndarray
    predicted_eigenvalues: np.ndarray
    max_abs_deviation: float


@dataclass(frozen=True)
class AlignmentReport:
    j: int
    residual_ratio: float
    sigma_j_sq: float
    imbalance: Optional[float] = None


def _report(computed, predicted):
    computed = np.sort(np.asarray(computed, dtype=float))
    predicted = np.sort(np.asarray(predicted, dtype=float))
    if computed.shape != predicted.shape:
        raise AssertionError(f"spectrum sizes differ: {computed.size} vs {predicted.size}")
    dev = float(np.max(np.abs(computed - predicted))) if computed.size else 0.0
    return SpectrumReport(computed, predicted, dev)


def _gram_eigenvalues(J):
    # eigenvalues of J J^T: squared singular values padded with zeros up to the codomain size
    if J.size > DENSE_CAP:
        raise SizeGuardError(f"dense Jacobian with {J.size} entries exceeds cap {DENSE_CAP}")
    s = np.linalg.svd(J, compute_uv=False)
    return np.concatenate([s**2, np.zeros(J.shape[0] - s.size)])


def _padded_singular_values(M, size):
    s = np.linalg.svd(M, compute_uv=False)
    return np.concatenate([s, np.zeros(size - s.size)])[:size]


def check_bm_spectrum(X):
    """Compare eig(J J^T) of X -> X X^T against {2(s_i^2 + s_j^2) : i <= j} plus zeros.

    J J^T vanishes on antisymmetric matrices, which contributes d(d-1)/2 zeros.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d, r = X.shape
    fmap = make_map("burer_monteiro", d=d, r=r)
    computed = _gram_eigenvalues(fmap.dense_jacobian(fmap.flatten(X)))
    s2 = _padded_singular_values(X, d) ** 2
    i, j = np.triu_indices(d)
    predicted = np.concatenate([2.0 * (s2[i] + s2[j]), np.zeros(d * (d - 1) // 2)])
    return _report(computed, predicted)


def check_asym_spectrum(X, Y):
    """Compare eig(J J^T) of (X, Y) -> X Y^T against {s_i(X)^2 + s_j(Y)^2}."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValueError("X and Y need the same number of columns")
    (d1, r), d2 = X.shape, Y.shape[0]
    fmap = make_map("asymmetric_factor", d1=d1, d2=d2, r=r)
    computed = _gram_eigenvalues(fmap.dense_jacobian(fmap.flatten(X, Y)))
    sx = _padded_singular_values(X, d1) ** 2
    sy = _padded_singular_values(Y, d2) ** 2
    return _report(computed, np.add.outer(sx, sy).ravel())


def numeric_rank(J, rtol=RANK_RTOL):
    s = np.linalg.svd(J, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


def check_cp_rank(kind, factors):
    """(numeric Jacobian rank, predicted rank) for the CP maps and Burer-Monteiro.

    ``kind`` is ``"symmetric_cp"`` (factors = [X]), ``"asymmetric_cp"``
    (factors = [W, X, Y]) or ``"burer_monteiro"`` (factors = [X]).
    """
    mats = [np.atleast_2d(np.asarray(F, dtype=float)) for F in factors]
    r = mats[0].shape[1]
    if kind == "symmetric_cp":
        (X,) = mats
        fmap = make_map(kind, d=X.shape[0], r=r)
        predicted = X.shape[0] * r
    elif kind == "asymmetric_cp":
        W, X, Y = mats
        fmap = make_map(kind, d1=W.shape[0], d2=X.shape[0], d3=Y.shape[0], r=r)
        predicted = (W.shape[0] + X.shape[0] + Y.shape[0] - 2) * r
    elif kind == "burer_monteiro":
        (X,) = mats
        fmap = make_map(kind, d=X.shape[0], r=r)
        rt = numeric_rank(X)
        predicted = X.shape[0] * rt - comb(rt, 2)
    else:
        raise ValueError(f"unsupported kind {kind!r}")
    J = fmap.dense_jacobian(fmap.flatten(*mats))
    return numeric_rank(J), predicted


def _right_factor_imbalance(fmap, x):
    X, Y = fmap.factors(x)
    _, _, VXt = np.linalg.svd(X, full_matrices=False)
    _, _, VYt = np.linalg.svd(Y, full_matrices=False)
    signs = np.sign(np.sum(VXt * VYt, axis=1))
    signs[signs == 0] = 1.0
    return float(np.linalg.norm(VXt - signs[:, None] * VYt))


def weak_alignment_probe(fmap, x, z_star, rho):
    """Smallest j whose top-j left singular subspace of J(x) captures z - z* up to ratio rho.

    Reports the achieved residual ratio and the squared j-th singular value. When
    no j reaches rho, j is the numerical rank. For the asymmetric factorization the
    distance between the right singular vectors of the two factors is also recorded.
    """
    x = fmap._check(x)
    e = fmap.eval(x) - np.asarray(z_star, dtype=float)
    ne = np.linalg.norm(e)
    if ne == 0.0:
        raise ValueError("probe needs F(x) != z*")
    J = fmap.dense_jacobian(x)
    U, s, _ = np.linalg.svd(J, full_matrices=False)
    rank = numeric_rank(J, rtol=1e-10)
    coeffs = U[:, :rank].T @ e
    # residual after projecting on the top j directions, j = 1..rank, summed from the
    # orthogonal remainder and the uncaptured tail to avoid cancellation
    outside = np.linalg.norm(e - U[:, :rank] @ coeffs) ** 2
    tail = np.concatenate([np.cumsum((coeffs**2)[::-1])[::-1][1:], [0.0]])
    resid = np.sqrt(outside + tail) / ne
    hits = np.nonzero(resid <= rho)[0]
    idx = int(hits[0]) if hits.size else rank - 1
    imbalance = _right_factor_imbalance(fmap, x) if fmap.kind == "asymmetric_factor" else None
    if rank == 0:
        return AlignmentReport(0, 1.0, 0.0, imbalance)
    return AlignmentReport(idx + 1, float(min(resid[idx], 1.0)), float(s[idx] ** 2), imbalance)
