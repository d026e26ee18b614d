"""Damped preconditioned subgradient methods for composite problems min h(F(x))."""
from .estimators import LowRankMatrixSensingLMM, NonnegativeLeastSquaresLMM
from .parameterizations import make_map
from .problems import gen_matrix, gen_nnls, gen_tensor
from .solver import (
    ConstantCfg,
    ExactDistance,
    GeometricCfg,
    LossProxy,
    PolyakCfg,
    SolverOptions,
    Trace,
    gnp_run,
    lmm_run,
    subgradient_run,
)

__version__ = "0.1.0"

__all__ = [
    "ConstantCfg",
    "ExactDistance",
    "GeometricCfg",
    "LossProxy",
    "LowRankMatrixSensingLMM",
    "NonnegativeLeastSquaresLMM",
    "PolyakCfg",
    "SolverOptions",
    "Trace",
    "gen_matrix",
    "gen_nnls",
    "gen_tensor",
    "gnp_run",
    "lmm_run",
    "make_map",
    "subgradient_run",
]
