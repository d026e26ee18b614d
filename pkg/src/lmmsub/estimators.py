"""scikit-learn style regressors built on the damped subgradient solver."""
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .losses import MeasurementMap, OuterLoss
from .parameterizations import make_map
from .solver import LossProxy, PolyakCfg, SolverOptions, lmm_run


def _options(est, y):
    # stop once the optimality gap is below tol relative to the data, in the loss's own norm
    scale = np.abs(y).sum() if est.loss == "l1" else np.linalg.norm(y)
    floor = est.tol * max(float(scale), 1.0)
    return SolverOptions(max_iters=est.max_iter, gap_floor=floor)


class NonnegativeLeastSquaresLMM(RegressorMixin, BaseEstimator):
    """Nonnegative regression y ~ X w with w = x * x, fitted by the damped method.

    Polyak stepsizes assume the optimal loss ``h_star`` is known (0 for
    consistent systems). Damping follows lambda_k = damping * ||X w_k - y||.
    """

    def __init__(self, loss="l2", gamma=1.0, damping=1e-2, h_star=0.0, tol=1e-10, max_iter=2000,
                 random_state=None):
        self.loss = loss
        self.gamma = gamma
        self.damping = damping
        self.h_star = h_star
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.loss not in ("l2", "l2sq"):
            raise ValueError(f"loss must be 'l2' or 'l2sq', got {self.loss!r}")
        n = X.shape[1]
        fmap = make_map("hadamard", r=n)
        loss = OuterLoss(self.loss, MeasurementMap(n, X), y)
        rule = LossProxy(self.damping) if self.loss == "l2" else LossProxy(self.damping * np.sqrt(2.0), 0.5)
        # start from a positive point at the scale of the unconstrained fit
        w_ls = np.linalg.lstsq(X, y, rcond=None)[0]
        scale = np.sqrt(max(float(np.mean(np.abs(w_ls))), 1e-12))
        rng = np.random.default_rng(self.random_state)
        x0 = scale * (1.0 + 0.1 * rng.random(n))
        trace = lmm_run(fmap, loss, x0, PolyakCfg(self.gamma, rule, self.h_star), _options(self, y))
        self.coef_ = fmap.eval(trace.final_x)
        self.n_iter_ = trace.iterations
        self.termination_ = trace.termination
        self.n_features_in_ = n
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_


class LowRankMatrixSensingLMM(RegressorMixin, BaseEstimator):
    """PSD low-rank matrix sensing y_i = <A_i, M>, M = U U^T, with a robust loss.

    Each row of ``X`` is a column-major vectorized d x d sensing matrix. The
    factor starts from the top eigenpairs of the back-projection sum_i y_i A_i.
    """

    def __init__(self, rank=1, loss="l1", gamma=1.0, damping=1e-5, h_star=0.0, tol=1e-10, max_iter=500):
        self.rank = rank
        self.loss = loss
        self.gamma = gamma
        self.damping = damping
        self.h_star = h_star
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        d = int(round(np.sqrt(X.shape[1])))
        if d * d != X.shape[1]:
            raise ValueError(f"rows of X must have a square length, got {X.shape[1]}")
        if not 1 <= self.rank <= d:
            raise ValueError(f"rank must lie in [1, {d}], got {self.rank}")
        fmap = make_map("burer_monteiro", d=d, r=self.rank)
        loss = OuterLoss(self.loss, MeasurementMap(d * d, X), y)
        back = (X.T @ y).reshape(d, d, order="F")
        vals, vecs = np.linalg.eigh(0.5 * (back + back.T))
        top = np.argsort(vals)[::-1][: self.rank]
        U0 = vecs[:, top] * np.sqrt(np.maximum(vals[top], 0.0))
        cfg = PolyakCfg(self.gamma, LossProxy(self.damping), self.h_star)
        trace = lmm_run(fmap, loss, fmap.flatten(U0), cfg, _options(self, y))
        self.components_ = fmap.factors(trace.final_x)
        self.n_iter_ = trace.iterations
        self.termination_ = trace.termination
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def matrix_(self):
        check_is_fitted(self, "components_")
        return self.components_ @ self.components_.T

    def predict(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ np.ravel(self.matrix_, order="F")
