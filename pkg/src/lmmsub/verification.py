"""Static registry of numerical self-checks run by ``lmmsub verify``."""
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .operators import CGSettings, cg_solve
from .parameterizations import lmm_direction, make_map
from .spectral import check_asym_spectrum, check_bm_spectrum, check_cp_rank, weak_alignment_probe

SMALL_MAPS = {
    "hadamard": dict(r=6),
    "burer_monteiro": dict(d=5, r=3),
    "asymmetric_factor": dict(d1=4, d2=5, r=2),
    "symmetric_cp": dict(d=4, r=2),
    "asymmetric_cp": dict(d1=3, d2=4, d3=5, r=2),
}


@dataclass(frozen=True)
class Check:
    name: str
    threshold: float
    run: Callable[[], float]  # returns the measured deviation


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    deviation: float
    threshold: float


def _adjoint(kind, probes=100):
    fmap = make_map(kind, **SMALL_MAPS[kind])
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(probes):
        x, u, w = rng.standard_normal(fmap.n), rng.standard_normal(fmap.n), rng.standard_normal(fmap.m)
        lhs, rhs = fmap.jvp(x, u) @ w, u @ fmap.vjp(x, w)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    return worst


def _finite_difference(kind, probes=20, t=1e-5):
    fmap = make_map(kind, **SMALL_MAPS[kind])
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(probes):
        x = rng.uniform(-1, 1, fmap.n)
        u = rng.uniform(-1, 1, fmap.n)
        x, u = x / np.linalg.norm(x), u / np.linalg.norm(u)
        fd = (fmap.eval(x + t * u) - fmap.eval(x - t * u)) / (2 * t)
        worst = max(worst, float(np.linalg.norm(fd - fmap.jvp(x, u))))
    return worst


def _gram(kind, probes=20):
    fmap = make_map(kind, **SMALL_MAPS[kind])
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(probes):
        x, u = rng.standard_normal(fmap.n), rng.standard_normal(fmap.n)
        lam = float(rng.uniform(0.1, 2.0))
        ref = fmap.vjp(x, fmap.jvp(x, u)) + lam * u
        got = fmap.gram_damped_apply(x, lam, u)
        worst = max(worst, float(np.linalg.norm(got - ref) / np.linalg.norm(ref)))
    return worst


def _direction(kind, probes=5):
    fmap = make_map(kind, **SMALL_MAPS[kind])
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(probes):
        x, v = rng.standard_normal(fmap.n), rng.standard_normal(fmap.m)
        lam = 0.5
        J = fmap.dense_jacobian(x)
        ref = np.linalg.solve(J.T @ J + lam * np.eye(fmap.n), J.T @ v)
        got, _ = lmm_direction(fmap, x, lam, v, CGSettings())
        worst = max(worst, float(np.linalg.norm(got - ref) / np.linalg.norm(ref)))
    return worst


def _cg_dense():
    rng = np.random.default_rng(5)
    B = rng.standard_normal((30, 30))
    G = B @ B.T + np.eye(30)
    b = rng.standard_normal(30)
    res = cg_solve(lambda u: G @ u, b, CGSettings())
    ref = np.linalg.solve(G, b)
    return float(np.linalg.norm(res.solution - ref) / np.linalg.norm(ref))


def _bm_spectrum(instances=10):
    rng = np.random.default_rng(6)
    return max(check_bm_spectrum(rng.standard_normal((6, 3))).max_abs_deviation for _ in range(instances))


def _asym_spectrum(instances=10):
    rng = np.random.default_rng(7)
    return max(
        check_asym_spectrum(rng.standard_normal((4, 2)), rng.standard_normal((5, 2))).max_abs_deviation
        for _ in range(instances)
    )


def _rank(kind, shapes, instances=10):
    rng = np.random.default_rng(8)
    misses = 0
    for _ in range(instances):
        got, want = check_cp_rank(kind, [rng.standard_normal(s) for s in shapes])
        misses += got != want
    return float(misses)


def _hadamard_alignment(probes=50):
    """Largest violation of sigma_j^2 >= s(rho) ||z - z*|| inside the delta(rho) ball."""
    z_star = np.array([1.0, 0.6, 0.3, 0.0, 0.0])
    r, r_star = z_star.size, int(np.count_nonzero(z_star))
    fmap = make_map("hadamard", r=r)
    rng = np.random.default_rng(9)
    worst = 0.0
    for rho in (0.1, 0.3):
        s = rho / max(np.sqrt(r - r_star), 1.0)
        delta = hadamard_delta(z_star, s)
        for _ in range(probes):
            e = rng.standard_normal(r)
            e *= rng.uniform(0.05, 1.0) * delta / np.linalg.norm(e)
            x = rng.choice([-1.0, 1.0], r) * np.sqrt(np.abs(z_star + e))
            z = fmap.eval(x)
            dist = np.linalg.norm(z - z_star)
            rep = weak_alignment_probe(fmap, x, z_star, rho)
            worst = max(worst, s * dist - rep.sigma_j_sq, rep.residual_ratio - rho)
    return max(worst, 0.0)


def hadamard_delta(z_star, s):
    """Radius of the ball on which the squared-variable map is weakly aligned."""
    nz = z_star[z_star != 0]
    gaps = [abs(a - b) / 2 for a in z_star for b in z_star if a != b]
    return min(min(gaps, default=np.inf), np.min(nz / (1 + s)), np.min(nz / 2))


def registry():
    checks = []
    for kind in SMALL_MAPS:
        checks.append(Check(f"adjoint/{kind}", 1e-10, lambda k=kind: _adjoint(k)))
        checks.append(Check(f"finite_difference/{kind}", 1e-6, lambda k=kind: _finite_difference(k)))
        checks.append(Check(f"damped_gram/{kind}", 1e-12, lambda k=kind: _gram(k)))
        checks.append(Check(f"lmm_direction/{kind}", 1e-8, lambda k=kind: _direction(k)))
    checks += [
        Check("cg/dense_spd", 1e-8, _cg_dense),
        Check("spectrum/burer_monteiro", 1e-8, _bm_spectrum),
        Check("spectrum/asymmetric_factor", 1e-8, _asym_spectrum),
        Check("rank/symmetric_cp", 0.0, lambda: _rank("symmetric_cp", [(5, 2)])),
        Check("rank/asymmetric_cp", 0.0, lambda: _rank("asymmetric_cp", [(4, 2), (4, 2), (4, 2)])),
        Check("rank/burer_monteiro", 0.0, lambda: _rank("burer_monteiro", [(5, 2)])),
        Check("alignment/hadamard", 0.0, _hadamard_alignment),
    ]
    return checks


def run_checks(pattern="*"):
    from fnmatch import fnmatch

    results = []
    for check in registry():
        if not fnmatch(check.name, pattern):
            continue
        try:
            dev = float(check.run())
        except Exception:  # a crashing check is a failing check
            dev = float("inf")
        passed = bool(np.isfinite(dev) and dev <= check.threshold)
        results.append(CheckResult(check.name, passed, dev, check.threshold))
    return results
