"""Convex outer losses h(z) = l(A z - b), Gaussian sensing maps and outliers."""
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class MeasurementMap:
    """Linear measurement map z -> A z; ``matrix=None`` means the identity on R^N."""

    N: int
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.matrix is not None:
            A = np.asarray(self.matrix, dtype=float)
            if A.ndim != 2 or A.shape[1] != self.N:
                raise ValueError(f"measurement matrix must have {self.N} columns, got shape {A.shape}")
            object.__setattr__(self, "matrix", A)

    @classmethod
    def identity(cls, N):
        return cls(N)

    @property
    def is_identity(self):
        return self.matrix is None

    @property
    def m(self):
        return self.N if self.matrix is None else self.matrix.shape[0]

    def apply(self, z):
        return np.array(z, dtype=float) if self.matrix is None else self.matrix @ z

    def adjoint(self, y):
        return np.array(y, dtype=float) if self.matrix is None else self.matrix.T @ y


def make_gaussian_map(m, N, seed):
    """Dense m x N map with i.i.d. N(0, 1/m) entries."""
    if m < 1 or N < 1:
        raise ValueError("m and N must be positive")
    rng = np.random.default_rng(seed)
    return MeasurementMap(N, rng.standard_normal((m, N)) / np.sqrt(m))


KINDS = ("l2sq", "l2", "l1")


@dataclass(frozen=True, eq=False)
class OuterLoss:
    """h(z) = 0.5||Az-b||^2 (``l2sq``), ||Az-b||_2 (``l2``) or ||Az-b||_1 (``l1``)."""

    kind: str
    map: MeasurementMap
    b: np.ndarray
    h_star: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"loss kind must be one of {KINDS}, got {self.kind!r}")
        b = np.asarray(self.b, dtype=float)
        if b.shape != (self.map.m,):
            raise ValueError(f"b must have shape ({self.map.m},), got {b.shape}")
        object.__setattr__(self, "b", b)

    @property
    def smooth(self):
        return self.kind == "l2sq"

    def residual(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.map.N,):
            raise ValueError(f"z must have shape ({self.map.N},), got {z.shape}")
        return self.map.apply(z) - self.b

    def value(self, z):
        r = self.residual(z)
        if self.kind == "l2sq":
            return 0.5 * float(r @ r)
        if self.kind == "l2":
            return float(np.linalg.norm(r))
        return float(np.abs(r).sum())

    def subgradient(self, z):
        """Minimal-norm style subgradient: sign(0) = 0 and 0 at the l2 kink."""
        r = self.residual(z)
        if self.kind == "l2sq":
            s = r
        elif self.kind == "l2":
            nr = np.linalg.norm(r)
            s = r / nr if nr > 0 else np.zeros_like(r)
        else:
            s = np.sign(r)
        return self.map.adjoint(s)


def loss_value(loss, z):
    return loss.value(z)


def loss_subgradient(loss, z):
    return loss.subgradient(z)


@dataclass(frozen=True)
class CorruptionSpec:
    p_fail: float
    seed: int

    def __post_init__(self):
        # values at or above 1/2 are accepted so breakdown can be observed
        if not 0.0 <= self.p_fail < 1.0:
            raise ValueError(f"p_fail must lie in [0, 1), got {self.p_fail}")


def corrupted_indices(m, p_fail, seed):
    """floor(p_fail * m) distinct indices drawn by a seeded shuffle of range(m)."""
    k = int(np.floor(p_fail * m))
    perm = np.random.default_rng(seed).permutation(m)
    return np.sort(perm[:k])


def corrupt(b_clean, spec, meas, z_bar):
    """Replace floor(p_fail * m) entries of ``b_clean`` by the matching entries of A(z_bar)."""
    b = np.array(b_clean, dtype=float)
    idx = corrupted_indices(b.shape[0], spec.p_fail, spec.seed)
    if idx.size:
        b[idx] = meas.apply(z_bar)[idx]
    return b


def empirical_rip(meas, paramkind, d, r, trials, seed, norm="l2"):
    """Extreme ratios ||A(Z)|| / ||Z||_F over random rank-r signals.

    ``paramkind`` is ``"sym"`` (Z = X X^T, d x d) or ``"asym"`` (Z = X Y^T with
    ``d = (d1, d2)``). ``norm`` is ``"l2"`` (||A(Z)||_2 / ||Z||_F), ``"l2sq"``
    (squared ratio) or ``"l1"`` (||A(Z)||_1 / ||Z||_F).
    Diagnostic only: the ratios are statistical, not certified RIP constants.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if norm not in ("l2", "l2sq", "l1"):
        raise ValueError(f"unknown norm {norm!r}")
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(trials):
        if paramkind == "sym":
            X = rng.standard_normal((d, r))
            Z = X @ X.T
        elif paramkind == "asym":
            d1, d2 = d
            Z = rng.standard_normal((d1, r)) @ rng.standard_normal((d2, r)).T
        else:
            raise ValueError(f"unknown paramkind {paramkind!r}")
        z = np.ravel(Z, order="F")
        y = meas.apply(z)
        if norm == "l1":
            ratios.append(np.abs(y).sum() / np.linalg.norm(z))
        else:
            ratio = np.linalg.norm(y) / np.linalg.norm(z)
            ratios.append(ratio**2 if norm == "l2sq" else ratio)
    return float(min(ratios)), float(max(ratios))
