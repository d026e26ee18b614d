"""Damped preconditioned subgradient method and its baselines.

All three methods share one loop that evaluates the state at step ``k``,
checks termination, picks a subgradient ``v_k`` of ``h`` at ``z_k = F(x_k)``
and moves along

* ``lmm``:         (J^T J + lam_k I)^{-1} J^T v_k
* ``gnp``:         (J^T J)^{-1} J^T v_k, solved by CG on the undamped Gram
* ``subgradient``: J^T v_k
"""
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .operators import CGSettings, NumericalBreakdownError, cg_solve
from .parameterizations import Exact, Surrogate, projected_subgradient_norm

DIVERGENCE_REL_ERR = 1e6
GAP_FLOOR = 1e-15


@dataclass(frozen=True)
class ExactDistance:
    """lam_k = C * ||z_k - z*||; needs the ground truth."""

    C: float


@dataclass(frozen=True)
class LossProxy:
    """lam_k = c * f(x_k)^p."""

    c: float
    p: float = 1.0


@dataclass(frozen=True)
class PolyakCfg:
    gamma: float
    damping: Union[ExactDistance, LossProxy] = LossProxy(1e-5)
    h_star: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.h_star):
            raise ValueError("Polyak stepsizes need a finite h_star")


@dataclass(frozen=True)
class GeometricCfg:
    """gamma_k = gamma q^k and lam_k = lam q^k."""

    gamma: float
    lam: float
    q: float

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ValueError("q must lie in (0, 1)")


@dataclass(frozen=True)
class ConstantCfg:
    """gamma_k = gamma and lam_k = lam q^k."""

    gamma: float
    lam: float
    q: float

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ValueError("q must lie in (0, 1)")


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 500
    success_rel_err: float = 1e-8
    cg: CGSettings = field(default_factory=CGSettings)
    proj_mode: Union[Exact, Surrogate] = field(default_factory=Exact)
    record_every: int = 1
    gap_floor: float = GAP_FLOOR

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.record_every < 1:
            raise ValueError("record_every must be positive")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    f: float
    rel_err_z: Optional[float]
    gamma: float
    lam: float
    proj_norm: float
    cg_iters: int


@dataclass
class Trace:
    records: list
    termination: str  # "converged" | "budget" | "diverged"
    final_x: np.ndarray
    reason: str = ""

    @property
    def converged(self):
        return self.termination == "converged"

    @property
    def final_rel_err(self):
        for rec in reversed(self.records):
            if rec.rel_err_z is not None:
                return rec.rel_err_z
        return None

    @property
    def iterations(self):
        """Index of the last evaluated iterate."""
        return self.records[-1].k if self.records else 0


def relative_error(z, z_star):
    z_star = np.asarray(z_star, dtype=float)
    nz = np.linalg.norm(z_star)
    if nz == 0.0:
        raise ValueError("relative error is undefined for a zero ground truth")
    return float(np.linalg.norm(np.asarray(z, dtype=float) - z_star) / nz)


def _damping(rule, f, z, z_star):
    if isinstance(rule, ExactDistance):
        return rule.C * float(np.linalg.norm(z - z_star))
    return rule.c * max(f, 0.0) ** rule.p


def _run(method, fmap, loss, x0, cfg, opts, z_star):
    if method == "subgradient" and isinstance(cfg, ConstantCfg):
        raise ValueError("the subgradient baseline takes Polyak or geometric stepsizes")
    if isinstance(cfg, PolyakCfg) and isinstance(cfg.damping, ExactDistance) and z_star is None:
        raise ValueError("ExactDistance damping needs the ground truth z_star")
    x = fmap._check(np.array(x0, dtype=float))
    if z_star is not None:
        z_star = np.asarray(z_star, dtype=float)
    records = []

    def finish(termination, rec, reason=""):
        if rec is not None:
            records.append(rec)
        return Trace(records, termination, x, reason)

    if opts.max_iters == 0:
        return finish("budget", None)

    for k in range(opts.max_iters + 1):
        z = fmap.eval(x)
        f = loss.value(z) if np.all(np.isfinite(z)) else math.inf
        rel = relative_error(z, z_star) if z_star is not None and math.isfinite(f) else None
        if z_star is not None and rel is None:
            rel = math.inf

        def terminal():
            return IterationRecord(k, f, rel, 0.0, 0.0, math.nan, 0)

        if not math.isfinite(f) or (rel is not None and rel > DIVERGENCE_REL_ERR):
            return finish("diverged", terminal(), "non-finite loss" if not math.isfinite(f) else "relative error blow-up")
        if rel is not None and rel <= opts.success_rel_err:
            return finish("converged", terminal())
        if k == opts.max_iters:
            return finish("budget", terminal())

        v = loss.subgradient(z)
        proj_norm = math.nan
        cg_iters = 0

        if isinstance(cfg, PolyakCfg):
            gap = f - cfg.h_star
            # the squared loss is compared on the residual scale, like the nonsmooth kinds
            gap_scale = math.sqrt(2.0 * max(gap, 0.0)) if loss.smooth else gap
            if gap_scale <= opts.gap_floor * max(1.0, abs(cfg.h_star)):
                if rel is None:
                    return finish("converged", terminal(), "optimality gap closed")
                return finish("diverged", terminal(), "stalled: optimality gap closed above the target error")
            lam = _damping(cfg.damping, f, z, z_star)
            if method == "lmm" and lam <= 0.0:
                return finish("converged", terminal(), "zero damping at the solution")
            if method == "subgradient":
                g = fmap.vjp(x, v)
                proj_norm = float(np.linalg.norm(g))
            else:
                try:
                    proj_norm = projected_subgradient_norm(fmap, x, v, opts.proj_mode, lam=lam, cg=opts.cg)
                except NumericalBreakdownError as exc:
                    return finish("diverged", terminal(), str(exc))
            if proj_norm == 0.0:
                return finish("diverged", terminal(), "zero projected subgradient")
            gamma = cfg.gamma * gap / proj_norm**2
        elif isinstance(cfg, GeometricCfg):
            gamma = cfg.gamma * cfg.q**k
            lam = cfg.lam * cfg.q**k
        else:
            gamma = cfg.gamma
            lam = cfg.lam * cfg.q**k

        if method == "subgradient":
            lam = 0.0
            step = g if isinstance(cfg, PolyakCfg) else fmap.vjp(x, v)
        else:
            if method == "gnp":
                lam = 0.0
            rhs = fmap.vjp(x, v)
            try:
                res = cg_solve(lambda u: fmap._gram(x, u, lam), rhs, opts.cg)
            except NumericalBreakdownError as exc:
                return finish("diverged", terminal(), str(exc))
            step = res.solution
            cg_iters = res.iterations

        if k % opts.record_every == 0:
            records.append(IterationRecord(k, f, rel, gamma, lam, proj_norm, cg_iters))
        x = x - gamma * step
    raise AssertionError("unreachable")


def lmm_run(fmap, loss, x0, cfg, opts=SolverOptions(), z_star=None):
    """Run the damped (Levenberg-Morrison-Marquardt) subgradient method."""
    return _run("lmm", fmap, loss, x0, cfg, opts, z_star)


def gnp_run(fmap, loss, x0, cfg, opts=SolverOptions(), z_star=None):
    """Gauss-Newton preconditioned subgradient method (zero damping)."""
    return _run("gnp", fmap, loss, x0, cfg, opts, z_star)


def subgradient_run(fmap, loss, x0, cfg, opts=SolverOptions(), z_star=None):
    """Plain subgradient method with Polyak or geometric stepsizes."""
    return _run("subgradient", fmap, loss, x0, cfg, opts, z_star)


METHODS = {"lmm": lmm_run, "gnp": gnp_run, "subgradient": subgradient_run}
