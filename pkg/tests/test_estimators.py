import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lmmsub import LowRankMatrixSensingLMM, NonnegativeLeastSquaresLMM
from lmmsub.problems import conditioned_matrix


def nnls_data(seed=0):
    rng = np.random.default_rng(seed)
    A = conditioned_matrix(40, 8, 5.0, seed)
    w = np.concatenate([rng.uniform(0.5, 1.5, 4), np.zeros(4)])
    return A, A @ w, w


def sensing_data(d=6, r=2, m=120, seed=0):
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((d, r))
    M = U @ U.T
    X = rng.standard_normal((m, d * d)) / np.sqrt(m)
    return X, X @ np.ravel(M, order="F"), M


def test_params_roundtrip():
    est = NonnegativeLeastSquaresLMM(loss="l2sq", gamma=0.5, max_iter=10)
    params = est.get_params()
    assert params["loss"] == "l2sq" and params["gamma"] == 0.5 and params["max_iter"] == 10
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    assert LowRankMatrixSensingLMM(rank=3).set_params(loss="l2").loss == "l2"


def test_not_fitted():
    with pytest.raises(NotFittedError):
        NonnegativeLeastSquaresLMM().predict(np.ones((2, 3)))
    with pytest.raises(NotFittedError):
        LowRankMatrixSensingLMM().predict(np.ones((2, 4)))


@pytest.mark.parametrize("loss", ["l2", "l2sq"])
def test_nnls_recovers_sparse_nonnegative_weights(loss):
    X, y, w = nnls_data()
    est = NonnegativeLeastSquaresLMM(loss=loss, random_state=0).fit(X, y)
    assert est.termination_ == "converged"
    assert np.all(est.coef_ >= 0)
    assert np.linalg.norm(est.coef_ - w) <= 1e-6 * np.linalg.norm(w)
    assert est.score(X, y) > 1 - 1e-10
    assert est.predict(X).shape == y.shape


def test_nnls_validation():
    X, y, _ = nnls_data()
    with pytest.raises(ValueError):
        NonnegativeLeastSquaresLMM(loss="l1").fit(X, y)
    with pytest.raises(ValueError):
        NonnegativeLeastSquaresLMM().fit(X, y[:-1])
    est = NonnegativeLeastSquaresLMM(max_iter=5).fit(X, y)
    with pytest.raises(ValueError):
        est.predict(X[:, :3])


def test_sensing_recovers_low_rank_matrix():
    X, y, M = sensing_data()
    est = LowRankMatrixSensingLMM(rank=2).fit(X, y)
    assert est.termination_ == "converged"
    assert est.components_.shape == (6, 2)
    assert np.linalg.norm(est.matrix_ - M) <= 1e-6 * np.linalg.norm(M)
    np.testing.assert_allclose(est.predict(X), y, atol=1e-6 * np.abs(y).max())


def test_sensing_validation():
    X, y, _ = sensing_data()
    with pytest.raises(ValueError):
        LowRankMatrixSensingLMM().fit(X[:, :35], y)
    with pytest.raises(ValueError):
        LowRankMatrixSensingLMM(rank=7).fit(X, y)
