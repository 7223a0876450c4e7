"""scikit-learn compatible estimators on top of the ADMM solvers."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import (Dataset, ParameterError, PenaltyKind, PenaltySpec, SolverConfig, Task,
                   check_tau)
from .nonconvex import LLAConfig, lla_solve
from .select import default_grid, grid_search
from .solvers import solve


class _QuantileADMMBase(BaseEstimator):
    _task = Task.REGRESSION

    def __init__(self, tau=0.5, lam=None, penalty="l1", a=None, variant="m-slack-gb",
                 mu=10.0, nu=0.75, n_blocks=1, max_iter=500, tol=1e-4, consensus_tol=1e-2,
                 fit_intercept=True, n_lambdas=20, lambda_ratio=0.01, max_outer=3):
        self.tau = tau
        self.lam = lam
        self.penalty = penalty
        self.a = a
        self.variant = variant
        self.mu = mu
        self.nu = nu
        self.n_blocks = n_blocks
        self.max_iter = max_iter
        self.tol = tol
        self.consensus_tol = consensus_tol
        self.fit_intercept = fit_intercept
        self.n_lambdas = n_lambdas
        self.lambda_ratio = lambda_ratio
        self.max_outer = max_outer

    def _config(self) -> SolverConfig:
        return SolverConfig(tau=self.tau, mu=self.mu, nu=self.nu, M=self.n_blocks,
                            max_iter=self.max_iter, tol=self.tol, variant=self.variant,
                            consensus_tol=self.consensus_tol)

    def _fit_dataset(self, data: Dataset):
        check_tau(self.tau, self._task)
        cfg = self._config()
        kind = PenaltyKind(self.penalty)
        lla = LLAConfig(max_outer=self.max_outer, inner_cfg=cfg)
        if self.lam is None:
            grid = default_grid(data, self.tau, self.n_lambdas, self.lambda_ratio)
            best, path = grid_search(data, grid, kind, cfg, a=self.a, lla=lla)
            self.lambda_ = best.lambda_scalar
            self.hbic_ = best.hbic
            self.hbic_path_ = [(r.lambda_scalar, r.hbic, r.support_size) for r in path]
            fit = best.fit
        else:
            if not self.lam >= 0:
                raise ParameterError(f"lam must be nonnegative, got {self.lam}")
            pen = PenaltySpec.uniform(kind, self.lam, data.p, data.has_intercept, self.a)
            fit = solve(data, pen, cfg) if kind is PenaltyKind.WEIGHTED_L1 else lla_solve(data, pen, lla)
            self.lambda_ = float(self.lam)
        beta = fit.beta
        if data.has_intercept:
            self.intercept_, self.coef_ = float(beta[0]), beta[1:].copy()
        else:
            self.intercept_, self.coef_ = 0.0, beta.copy()
        self.n_iter_ = fit.n_iter
        self.converged_ = fit.converged
        self.fit_result_ = fit
        self.n_features_in_ = self.coef_.shape[0]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_ + self.intercept_


class QuantileADMMRegressor(RegressorMixin, _QuantileADMMBase):
    """Penalized quantile regression fitted by consensus ADMM.

    With ``lam=None`` the penalty level is picked by HBIC over a log grid.
    ``n_blocks`` splits the rows into that many simulated machines.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        return self._fit_dataset(Dataset.regression(X, y, intercept=self.fit_intercept))

    def predict(self, X):
        return self.decision_function(X)


class QuantileADMMClassifier(ClassifierMixin, _QuantileADMMBase):
    """Sparse linear classifier with the quantile (tau = 1: hinge) loss on margins."""

    _task = Task.CLASSIFICATION

    def __init__(self, tau=1.0, lam=None, penalty="l1", a=None, variant="m-slack-gb",
                 mu=10.0, nu=0.75, n_blocks=1, max_iter=500, tol=1e-4, consensus_tol=1e-2,
                 fit_intercept=True, n_lambdas=20, lambda_ratio=0.01, max_outer=3):
        super().__init__(tau=tau, lam=lam, penalty=penalty, a=a, variant=variant, mu=mu, nu=nu,
                         n_blocks=n_blocks, max_iter=max_iter, tol=tol,
                         consensus_tol=consensus_tol, fit_intercept=fit_intercept,
                         n_lambdas=n_lambdas, lambda_ratio=lambda_ratio, max_outer=max_outer)

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = np.unique(y)
        if self.classes_.shape[0] != 2:
            raise ValueError(f"need exactly two classes, got {self.classes_.shape[0]}")
        signs = np.where(y == self.classes_[1], 1.0, -1.0)
        return self._fit_dataset(Dataset.classification(X, signs, intercept=self.fit_intercept))

    def predict(self, X):
        score = self.decision_function(X)
        return np.where(score >= 0, self.classes_[1], self.classes_[0])
