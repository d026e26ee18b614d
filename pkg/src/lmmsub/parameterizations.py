"""Smooth parameterizations F with matrix-free Jacobian actions.

Every map works on flat parameter vectors. Factor matrices are flattened
column-major (``order="F"``) and concatenated in argument order, e.g. a point
``(X, Y)`` of :class:`AsymmetricFactor` is ``concat(vec(X), vec(Y))``. Outputs
are column-major flattenings of the full matrix or tensor (no packed
symmetric storage), so that tensor entry ``T[i1, i2, i3]`` sits at index
``i3*d1*d2 + i2*d1 + i1``.
"""
from dataclasses import dataclass
from math import comb, sqrt

import numpy as np

from .operators import CGSettings, LinearOperator, cg_solve, materialize_dense

SVD_RANK_RTOL = 1e-10


class DimensionError(ValueError):
    pass


def _vec(M):
    return np.ravel(M, order="F")


class ParamMap:
    """Base class for a smooth map F: R^n -> R^m.

    Subclasses implement ``eval``, ``jvp``, ``vjp`` and ``_gram`` (the action
    of ``J^T J + lam I`` for ``lam >= 0``).
    """

    kind = "base"
    lipschitz_jacobian = None

    @property
    def n(self):
        raise NotImplementedError

    @property
    def m(self):
        raise NotImplementedError

    def _check(self, x, length=None, what="point"):
        x = np.asarray(x, dtype=float)
        expected = self.n if length is None else length
        if x.ndim != 1 or x.shape[0] != expected:
            raise DimensionError(f"{self.kind}: {what} must have shape ({expected},), got {x.shape}")
        return x

    def gram_damped_apply(self, x, lam, u):
        """(J(x)^T J(x) + lam I) u for lam > 0."""
        if not lam > 0:
            raise ValueError(f"damping must be positive, got {lam}")
        return self._gram(self._check(x), self._check(u, what="direction"), float(lam))

    def gram_apply(self, x, u, lam=0.0):
        """Like :meth:`gram_damped_apply` but allows ``lam = 0`` (Gauss-Newton)."""
        if lam < 0:
            raise ValueError(f"damping must be nonnegative, got {lam}")
        return self._gram(self._check(x), self._check(u, what="direction"), float(lam))

    def jacobian(self, x):
        x = self._check(x)
        return LinearOperator(self.n, self.m, lambda u: self.jvp(x, u), lambda w: self.vjp(x, w))

    def dense_jacobian(self, x):
        return materialize_dense(self.jacobian(x))

    def range_projection(self, x, v):
        """Orthogonal projection of ``v`` onto the range of J(x) (dense SVD)."""
        J = self.dense_jacobian(x)
        U, s, _ = np.linalg.svd(J, full_matrices=False)
        if s.size == 0 or s[0] == 0.0:
            return np.zeros(self.m)
        U = U[:, s > SVD_RANK_RTOL * s[0]]
        return U @ (U.T @ v)

    def random_point(self, rng, scale=1.0):
        return scale * rng.standard_normal(self.n)


@dataclass(frozen=True)
class HadamardSquare(ParamMap):
    """x -> x * x (componentwise square) on R^r."""

    r: int
    kind = "hadamard"
    lipschitz_jacobian = 2.0

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be positive")

    @property
    def n(self):
        return self.r

    @property
    def m(self):
        return self.r

    def eval(self, x):
        x = self._check(x)
        return x * x

    def jvp(self, x, u):
        return 2.0 * self._check(x) * self._check(u, what="direction")

    def vjp(self, x, w):
        return 2.0 * self._check(x) * self._check(w, self.m, "cotangent")

    def _gram(self, x, u, lam):
        return 4.0 * x * x * u + lam * u

    def range_projection(self, x, v):
        x = self._check(x)
        v = self._check(v, self.m, "cotangent")
        amax = np.max(np.abs(x))
        if amax == 0.0:
            return np.zeros_like(v)
        return np.where(np.abs(x) > SVD_RANK_RTOL * amax, v, 0.0)


@dataclass(frozen=True)
class BurerMonteiro(ParamMap):
    """X -> X X^T for X in R^{d x r}."""

    d: int
    r: int
    kind = "burer_monteiro"
    lipschitz_jacobian = 2.0

    def __post_init__(self):
        if self.d < 1 or self.r < 1:
            raise ValueError("dimensions must be positive")

    @property
    def n(self):
        return self.d * self.r

    @property
    def m(self):
        return self.d * self.d

    def factors(self, x):
        return self._check(x).reshape(self.d, self.r, order="F")

    def flatten(self, X):
        return _vec(X)

    def eval(self, x):
        X = self.factors(x)
        return _vec(X @ X.T)

    def jvp(self, x, u):
        X = self.factors(x)
        D = self.factors(u)
        S = D @ X.T
        return _vec(S + S.T)

    def vjp(self, x, w):
        X = self.factors(x)
        Z = self._check(w, self.m, "cotangent").reshape(self.d, self.d, order="F")
        return _vec((Z + Z.T) @ X)

    def _gram(self, x, u, lam):
        X = x.reshape(self.d, self.r, order="F")
        D = u.reshape(self.d, self.r, order="F")
        out = 2.0 * (D @ (X.T @ X) + X @ (D.T @ X)) + lam * D
        return _vec(out)

    def range_projection(self, x, v):
        # Range of J(X) is the tangent space {P S + S P - P S P : S symmetric}
        # with P the projector onto col(X).
        X = self.factors(x)
        V = self._check(v, self.m, "cotangent").reshape(self.d, self.d, order="F")
        S = 0.5 * (V + V.T)
        U, s, _ = np.linalg.svd(X, full_matrices=False)
        if s.size == 0 or s[0] == 0.0:
            return np.zeros(self.m)
        # J J^T eigenvalues are 2(s_i^2 + s_j^2); drop pairs below the SVD threshold.
        keep = 2.0 * s**2 > (SVD_RANK_RTOL**2) * 4.0 * s[0] ** 2
        U = U[:, keep]
        US = U.T @ S
        PS = U @ US
        out = PS + PS.T - U @ (US @ U) @ U.T
        return _vec(out)


@dataclass(frozen=True)
class AsymmetricFactor(ParamMap):
    """(X, Y) -> X Y^T with X in R^{d1 x r}, Y in R^{d2 x r}."""

    d1: int
    d2: int
    r: int
    kind = "asymmetric_factor"
    lipschitz_jacobian = sqrt(2.0)

    def __post_init__(self):
        if min(self.d1, self.d2, self.r) < 1:
            raise ValueError("dimensions must be positive")

    @property
    def n(self):
        return (self.d1 + self.d2) * self.r

    @property
    def m(self):
        return self.d1 * self.d2

    def factors(self, x):
        x = self._check(x)
        k = self.d1 * self.r
        return x[:k].reshape(self.d1, self.r, order="F"), x[k:].reshape(self.d2, self.r, order="F")

    def flatten(self, X, Y):
        return np.concatenate([_vec(X), _vec(Y)])

    def eval(self, x):
        X, Y = self.factors(x)
        return _vec(X @ Y.T)

    def jvp(self, x, u):
        X, Y = self.factors(x)
        Xt, Yt = self.factors(u)
        return _vec(X @ Yt.T + Xt @ Y.T)

    def vjp(self, x, w):
        X, Y = self.factors(x)
        Z = self._check(w, self.m, "cotangent").reshape(self.d1, self.d2, order="F")
        return self.flatten(Z @ Y, Z.T @ X)

    def _gram(self, x, u, lam):
        X, Y = self.factors(x)
        Xt, Yt = self.factors(u)
        gx = X @ (Yt.T @ Y) + Xt @ (Y.T @ Y) + lam * Xt
        gy = Y @ (Xt.T @ X) + Yt @ (X.T @ X) + lam * Yt
        return self.flatten(gx, gy)

    def range_projection(self, x, v):
        X, Y = self.factors(x)
        V = self._check(v, self.m, "cotangent").reshape(self.d1, self.d2, order="F")
        Ux, sx, _ = np.linalg.svd(X, full_matrices=False)
        Uy, sy, _ = np.linalg.svd(Y, full_matrices=False)
        top = (sx[0] ** 2 if sx.size else 0.0) + (sy[0] ** 2 if sy.size else 0.0)
        if top == 0.0:
            return np.zeros(self.m)
        thresh = SVD_RANK_RTOL**2 * top
        Ux = Ux[:, sx**2 > thresh]
        Uy = Uy[:, sy**2 > thresh]
        PV = Ux @ (Ux.T @ V)
        out = PV + (V @ Uy) @ Uy.T - (PV @ Uy) @ Uy.T
        return _vec(out)


@dataclass(frozen=True)
class SymmetricCP(ParamMap):
    """X -> sum_l X_l (x) X_l (x) X_l, a symmetric d x d x d tensor."""

    d: int
    r: int
    kind = "symmetric_cp"

    def __post_init__(self):
        if self.d < 1 or self.r < 1:
            raise ValueError("dimensions must be positive")

    @property
    def n(self):
        return self.d * self.r

    @property
    def m(self):
        return self.d**3

    def factors(self, x):
        return self._check(x).reshape(self.d, self.r, order="F")

    def flatten(self, X):
        return _vec(X)

    def _tensor(self, w):
        return self._check(w, self.m, "cotangent").reshape(self.d, self.d, self.d, order="F")

    def eval(self, x):
        X = self.factors(x)
        return _vec(np.einsum("il,jl,kl->ijk", X, X, X))

    def jvp(self, x, u):
        X = self.factors(x)
        D = self.factors(u)
        T = np.einsum("il,jl,kl->ijk", D, X, X)
        # Sum over the three placements of D; the transposes permute modes.
        return _vec(T + T.transpose(1, 0, 2) + T.transpose(1, 2, 0))

    def vjp(self, x, w):
        X = self.factors(x)
        T = self._tensor(w)
        Ts = T + T.transpose(1, 0, 2) + T.transpose(2, 1, 0)
        return _vec(np.einsum("ijk,jl,kl->il", Ts, X, X))

    def _gram(self, x, u, lam):
        X = x.reshape(self.d, self.r, order="F")
        D = u.reshape(self.d, self.r, order="F")
        G = X.T @ X
        out = 3.0 * D @ (G * G) + 6.0 * X @ ((D.T @ X) * G) + lam * D
        return _vec(out)


@dataclass(frozen=True)
class AsymmetricCP(ParamMap):
    """(W, X, Y) -> sum_l W_l (x) X_l (x) Y_l."""

    d1: int
    d2: int
    d3: int
    r: int
    kind = "asymmetric_cp"

    def __post_init__(self):
        if min(self.d1, self.d2, self.d3, self.r) < 1:
            raise ValueError("dimensions must be positive")

    @property
    def n(self):
        return (self.d1 + self.d2 + self.d3) * self.r

    @property
    def m(self):
        return self.d1 * self.d2 * self.d3

    def factors(self, x):
        x = self._check(x)
        a = self.d1 * self.r
        b = a + self.d2 * self.r
        return (
            x[:a].reshape(self.d1, self.r, order="F"),
            x[a:b].reshape(self.d2, self.r, order="F"),
            x[b:].reshape(self.d3, self.r, order="F"),
        )

    def flatten(self, W, X, Y):
        return np.concatenate([_vec(W), _vec(X), _vec(Y)])

    def eval(self, x):
        W, X, Y = self.factors(x)
        return _vec(np.einsum("il,jl,kl->ijk", W, X, Y))

    def jvp(self, x, u):
        W, X, Y = self.factors(x)
        Wt, Xt, Yt = self.factors(u)
        T = (
            np.einsum("il,jl,kl->ijk", Wt, X, Y)
            + np.einsum("il,jl,kl->ijk", W, Xt, Y)
            + np.einsum("il,jl,kl->ijk", W, X, Yt)
        )
        return _vec(T)

    def vjp(self, x, w):
        W, X, Y = self.factors(x)
        T = self._check(w, self.m, "cotangent").reshape(self.d1, self.d2, self.d3, order="F")
        return self.flatten(
            np.einsum("ijk,jl,kl->il", T, X, Y),
            np.einsum("ijk,il,kl->jl", T, W, Y),
            np.einsum("ijk,il,jl->kl", T, W, X),
        )

    def _gram(self, x, u, lam):
        W, X, Y = self.factors(x)
        Wt, Xt, Yt = self.factors(u)
        WW, XX, YY = W.T @ W, X.T @ X, Y.T @ Y
        WtW, XtX, YtY = Wt.T @ W, Xt.T @ X, Yt.T @ Y
        gw = Wt @ (XX * YY) + W @ (XtX * YY + XX * YtY) + lam * Wt
        gx = Xt @ (WW * YY) + X @ (WtW * YY + WW * YtY) + lam * Xt
        gy = Yt @ (WW * XX) + Y @ (WtW * XX + WW * XtX) + lam * Yt
        return self.flatten(gw, gx, gy)


def make_map(kind, **dims):
    """Construct a map from its kind name and dimensions."""
    classes = {
        "hadamard": HadamardSquare,
        "burer_monteiro": BurerMonteiro,
        "asymmetric_factor": AsymmetricFactor,
        "symmetric_cp": SymmetricCP,
        "asymmetric_cp": AsymmetricCP,
    }
    try:
        cls = classes[kind]
    except KeyError:
        raise ValueError(f"unknown map kind {kind!r}") from None
    return cls(**dims)


def lmm_direction(fmap, x, lam, v, cg=CGSettings()):
    """Solve (J^T J + lam I) delta = J^T v by CG; the LMM step is x - gamma * delta."""
    if not lam > 0:
        raise ValueError(f"damping must be positive, got {lam}")
    return _direction(fmap, x, lam, v, cg)


def _direction(fmap, x, lam, v, cg):
    x = fmap._check(x)
    g = fmap.vjp(x, v)
    res = cg_solve(lambda u: fmap._gram(x, u, lam), g, cg)
    return res.solution, res


@dataclass(frozen=True)
class Exact:
    """Projected norm through the exact range projector of J(x)."""


@dataclass(frozen=True)
class Surrogate:
    """Projected norm sqrt(v^T P(x, eps) v) with eps = delta_proj * lam."""

    delta_proj: float = 1e-6


def projected_subgradient_norm(fmap, x, v, mode=Exact(), lam=1.0, cg=CGSettings()):
    """Norm of the projection of ``v`` onto range(J(x)), exactly or by a damped surrogate."""
    x = fmap._check(x)
    v = fmap._check(v, fmap.m, "cotangent")
    if isinstance(mode, Exact):
        return float(np.linalg.norm(fmap.range_projection(x, v)))
    eps = mode.delta_proj * lam
    if not eps > 0:
        raise ValueError("surrogate projection needs a positive delta_proj * lam")
    g = fmap.vjp(x, v)
    w = cg_solve(lambda u: fmap._gram(x, u, eps), g, cg).solution
    return float(np.sqrt(max(float(g @ w), 0.0)))


def damped_projection_matrix(fmap, x, lam):
    """Dense P(x, lam) = J (J^T J + lam I)^{-1} J^T; test oracle only."""
    J = fmap.dense_jacobian(x)
    return J @ np.linalg.solve(J.T @ J + lam * np.eye(J.shape[1]), J.T)


def predicted_rank(fmap, x=None):
    """Generic Jacobian rank predicted for full-rank factors."""
    if isinstance(fmap, SymmetricCP):
        return fmap.d * fmap.r
    if isinstance(fmap, AsymmetricCP):
        return (fmap.d1 + fmap.d2 + fmap.d3 - 2) * fmap.r
    if isinstance(fmap, BurerMonteiro):
        rt = fmap.r if x is None else int(np.linalg.matrix_rank(fmap.factors(x)))
        return fmap.d * rt - comb(rt, 2)
    if isinstance(fmap, AsymmetricFactor):
        return (fmap.d1 + fmap.d2 - fmap.r) * fmap.r
    if isinstance(fmap, HadamardSquare):
        return fmap.r if x is None else int(np.count_nonzero(x))
    raise TypeError(type(fmap).__name__)
