"""Seeded generators for the benchmark problems: NNLS, low-rank matrix and CP tensor recovery."""
from dataclasses import dataclass, field

import numpy as np

from .losses import CorruptionSpec, MeasurementMap, OuterLoss, corrupt, make_gaussian_map
from .parameterizations import make_map
from .solver import LossProxy, relative_error

INIT_REL_ERR = 1e-2


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class GroundTruth:
    x_star: np.ndarray
    z_star: np.ndarray
    h_star: float


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    map: object
    loss: OuterLoss
    x0: np.ndarray
    gt: GroundTruth
    damping: LossProxy
    meta: dict = field(default_factory=dict)


def _streams(seed, k=5):
    """Independent generators for truth, measurements, corruption, spurious signal, init."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(k)]


def orthonormal_columns(d, k, rng):
    """d x k matrix with orthonormal columns from QR of a Gaussian, diag(R) made positive."""
    if k > d:
        raise ValueError(f"cannot fit {k} orthonormal columns in dimension {d}")
    Q, R = np.linalg.qr(rng.standard_normal((d, k)))
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


def spectrum(r_star, tau):
    """r_star values linearly spaced from 1 down to 1/tau."""
    if r_star < 1 or tau < 1:
        raise ValueError("need r_star >= 1 and tau >= 1")
    return np.linspace(1.0, 1.0 / tau, r_star)


def conditioned_matrix(m, n, kappa, seed):
    """Gaussian m x n matrix whose singular values are respaced linearly from s_max to s_max/kappa."""
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    if m < n or n < 1:
        raise ValueError("need m >= n >= 1")
    if n == 1 and kappa != 1:
        raise ValueError("a single column has condition number 1")
    G = np.random.default_rng(seed).standard_normal((m, n)) / np.sqrt(m)
    U, s, Vt = np.linalg.svd(G, full_matrices=False)
    ramp = np.linspace(s[0], s[0] / kappa, n)
    return (U * ramp) @ Vt


def init_relative(fmap, x_star, rho0, seed, tol=1e-6, max_steps=100):
    """x* + s xi with a seeded unit direction xi and s chosen by bisection so the image error is rho0."""
    if rho0 <= 0:
        raise ValueError("rho0 must be positive")
    x_star = np.asarray(x_star, dtype=float)
    z_star = fmap.eval(x_star)
    xi = np.random.default_rng(seed).standard_normal(x_star.shape)
    xi /= np.linalg.norm(xi)

    def err(s):
        return relative_error(fmap.eval(x_star + s * xi), z_star)

    lo, hi = 0.0, max(rho0 * np.linalg.norm(x_star), 1e-12)
    for _ in range(200):
        if err(hi) >= rho0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise GenerationError(f"could not bracket relative error {rho0}")
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        e = err(mid)
        if abs(e - rho0) <= tol * rho0:
            return x_star + mid * xi
        if e < rho0:
            lo = mid
        else:
            hi = mid
    raise GenerationError(
        f"bisection did not reach relative error {rho0} (bracket [{lo}, {hi}] gives {err(lo)}, {err(hi)});"
        " the error along the chosen direction may be non-monotone"
    )


def default_damping(problem, kind):
    """LossProxy rule used by the benchmarks for each problem family and loss kind."""
    if problem == "nnls":
        # l2: 1e-2 ||Ax - b||; l2sq: the same quantity written as sqrt(2 f)
        return LossProxy(1e-2, 1.0) if kind != "l2sq" else LossProxy(1e-2 * np.sqrt(2.0), 0.5)
    if kind == "l2sq":
        return LossProxy(2.5e-3, 0.5)
    return LossProxy(1e-3 if problem == "tensor" else 1e-5, 1.0)


def _pad(F, r):
    return np.hstack([F, np.zeros((F.shape[0], r - F.shape[1]))])


def _measure(m, N, rng):
    if m == "identity":
        return MeasurementMap(N)
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise ValueError(f"m must be a positive integer or 'identity', got {m!r}")
    return make_gaussian_map(int(m), N, rng)


def _finish(fmap, meas, kind, x_star, p_fail, z_bar, rngs, damping, meta, rho0):
    z_star = fmap.eval(x_star)
    b = meas.apply(z_star)
    corrupt_seed = int(rngs[2].integers(0, 2**63))
    if p_fail > 0:
        b = corrupt(b, CorruptionSpec(p_fail, corrupt_seed), meas, z_bar)
    loss = OuterLoss(kind, meas, b)
    h_star = loss.value(z_star)
    loss = OuterLoss(kind, meas, b, h_star)
    init_seed = int(rngs[4].integers(0, 2**63))
    x0 = init_relative(fmap, x_star, rho0, init_seed)
    meta = dict(meta, m=meas.m, p_fail=p_fail, corruption_seed=corrupt_seed)
    return ProblemInstance(fmap, loss, x0, GroundTruth(x_star, z_star, h_star), damping, meta)


def _check_ranks(r, r_star, p_fail):
    if not 1 <= r_star <= r:
        raise ValueError(f"need 1 <= r_star <= r, got r_star={r_star}, r={r}")
    if not 0 <= p_fail < 1:
        raise ValueError("p_fail must lie in [0, 1)")


def gen_nnls(r, r_star, tau, m, kappa_A=10.0, kind="l2", seed=0, rho0=INIT_REL_ERR):
    """min ||A (x * x) - b|| with a conditioned Gaussian A and a sparse nonnegative z*."""
    _check_ranks(r, r_star, 0.0)
    if kind not in ("l2", "l2sq"):
        raise ValueError("NNLS instances use the l2 or l2sq loss")
    if m < r:
        raise ValueError(f"need m >= r, got m={m}, r={r}")
    rngs = _streams(seed)
    fmap = make_map("hadamard", r=r)
    z_star = np.concatenate([spectrum(r_star, tau), np.zeros(r - r_star)])
    A = conditioned_matrix(m, r, kappa_A, rngs[1])
    meas = MeasurementMap(r, A)
    meta = dict(problem="nnls", r=r, r_star=r_star, tau=tau, kappa_A=kappa_A, kind=kind, seed=seed)
    return _finish(fmap, meas, kind, np.sqrt(z_star), 0.0, None, rngs, default_damping("nnls", kind), meta, rho0)


def _matrix_factors(sym, dims, r, r_star, tau, rng):
    root = np.sqrt(spectrum(r_star, tau))
    if sym:
        return [_pad(orthonormal_columns(dims[0], r_star, rng) * root, r)]
    return [_pad(orthonormal_columns(d, r_star, rng) * root, r) for d in dims]


def gen_matrix(sym, d, r, r_star, tau, m="identity", kind="l2", p_fail=0.0, seed=0, rho0=INIT_REL_ERR):
    """Low-rank PSD (X X^T) or asymmetric (X Y^T) recovery from identity or Gaussian measurements.

    Ground-truth factors are U D^(1/2) (and V D^(1/2)) padded with zero columns to width r.
    Outliers copy measurements of an independent spurious signal of the same type.
    """
    _check_ranks(r, r_star, p_fail)
    dims = (d,) if sym else tuple(d)
    if any(di < r_star for di in dims):
        raise ValueError("each dimension must be at least r_star")
    rngs = _streams(seed)
    if sym:
        fmap = make_map("burer_monteiro", d=dims[0], r=r)
    else:
        fmap = make_map("asymmetric_factor", d1=dims[0], d2=dims[1], r=r)
    x_star = fmap.flatten(*_matrix_factors(sym, dims, r, r_star, tau, rngs[0]))
    z_bar = fmap.eval(fmap.flatten(*_matrix_factors(sym, dims, r, r_star, tau, rngs[3])))
    meas = _measure(m, fmap.m, rngs[1])
    meta = dict(problem="matrix_sym" if sym else "matrix_asym", d=dims, r=r, r_star=r_star, tau=tau,
                kind=kind, seed=seed)
    return _finish(fmap, meas, kind, x_star, p_fail, z_bar, rngs, default_damping("matrix", kind), meta, rho0)


def _tensor_factors(sym, dims, r, r_star, tau, rng):
    root = np.cbrt(spectrum(r_star, tau))
    if sym:
        return [_pad(orthonormal_columns(dims[0], r_star, rng) * root, r)]
    return [_pad(orthonormal_columns(d, r_star, rng) * root, r) for d in dims]


def gen_tensor(sym, dims, r, r_star, tau, m="identity", kind="l2", p_fail=0.0, seed=0, rho0=INIT_REL_ERR):
    """Symmetric or asymmetric CP recovery; factor columns are U D^(1/3) padded to width r."""
    _check_ranks(r, r_star, p_fail)
    dims = (dims,) if np.isscalar(dims) else tuple(dims)
    if sym and len(dims) != 1 or not sym and len(dims) != 3:
        raise ValueError("symmetric tensors take one dimension, asymmetric tensors take three")
    if any(di < r_star for di in dims):
        raise ValueError("each dimension must be at least r_star")
    rngs = _streams(seed)
    if sym:
        fmap = make_map("symmetric_cp", d=dims[0], r=r)
    else:
        fmap = make_map("asymmetric_cp", d1=dims[0], d2=dims[1], d3=dims[2], r=r)
    x_star = fmap.flatten(*_tensor_factors(sym, dims, r, r_star, tau, rngs[0]))
    z_bar = fmap.eval(fmap.flatten(*_tensor_factors(sym, dims, r, r_star, tau, rngs[3])))
    meas = _measure(m, fmap.m, rngs[1])
    meta = dict(problem="tensor_sym" if sym else "tensor_asym", d=dims, r=r, r_star=r_star, tau=tau,
                kind=kind, seed=seed)
    return _finish(fmap, meas, kind, x_star, p_fail, z_bar, rngs, default_damping("tensor", kind), meta, rho0)
