"""Linear and logistic regression kernels with full coefficient covariance.

OLS is solved through a Householder QR of the design; logistic regression uses
iteratively reweighted least squares with step-halving. Both return a
:class:`FitResult` carrying the Wald covariance used downstream for inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

RANK_TOL = 1e-10
SEPARATION_BOUND = 30.0


class RegressionError(ValueError):
    """Base class for regression failures."""


class RankDeficientError(RegressionError):
    """The design matrix is (numerically) rank deficient."""

    def __init__(self, column: str, index: int):
        super().__init__(f"design is rank deficient: column {column!r} (index {index}) "
                         "is a linear combination of earlier columns")
        self.column = column
        self.index = index


class ConvergenceError(RegressionError):
    """IRLS did not converge."""


class SeparationError(ConvergenceError):
    """Quasi-complete or complete separation detected in a logistic fit."""


@dataclass(frozen=True)
class DesignMatrix:
    """Model matrix with a role tag for each column.

    Roles are tuples: ``("intercept",)``, ``("exposure", j)``,
    ``("product", j, k)`` (``j == k`` for a square) and ``("covariate", name)``.
    """

    values: np.ndarray
    roles: tuple
    names: tuple

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("design values must be a 2-d array")
        object.__setattr__(self, "values", values)
        if len(self.roles) != values.shape[1] or len(self.names) != values.shape[1]:
            raise ValueError("roles and names must have one entry per design column")
        n_intercept = sum(1 for r in self.roles if r[0] == "intercept")
        if n_intercept != 1:
            raise ValueError(f"design needs exactly one intercept column, got {n_intercept}")
        allowed = {"intercept", "exposure", "product", "covariate"}
        bad = [r for r in self.roles if r[0] not in allowed]
        if bad:
            raise ValueError(f"unknown column roles: {bad}")

    @property
    def shape(self):
        return self.values.shape

    def columns_with_role(self, kind: str) -> list[int]:
        return [i for i, r in enumerate(self.roles) if r[0] == kind]

    @classmethod
    def from_array(cls, values, names: Sequence[str] | None = None) -> "DesignMatrix":
        """Wrap a raw matrix whose first column is the intercept; other columns are covariates."""
        values = np.asarray(values, dtype=float)
        p = values.shape[1]
        names = tuple(names) if names is not None else ("(Intercept)",) + tuple(f"x{i}" for i in range(1, p))
        roles = (("intercept",),) + tuple(("covariate", nm) for nm in names[1:])
        return cls(values, roles, names)


DesignLike = Union[DesignMatrix, np.ndarray]


@dataclass
class FitResult:
    beta: np.ndarray
    covariance: np.ndarray
    residual_variance: float
    link: str
    n: int
    converged: bool = True
    names: tuple = field(default=())
    iterations: int = 0

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def _as_design(design: DesignLike) -> DesignMatrix:
    if isinstance(design, DesignMatrix):
        return design
    return DesignMatrix.from_array(design)


def _check_rank(r_diag: np.ndarray, names: Sequence[str]) -> None:
    mag = np.abs(r_diag)
    bad = np.flatnonzero(mag <= RANK_TOL * mag.max()) if mag.size else []
    if len(bad):
        k = int(bad[0])
        raise RankDeficientError(str(names[k]), k)


def _qr_solve(X: np.ndarray, y: np.ndarray, names: Sequence[str]):
    Q, R = np.linalg.qr(X, mode="reduced")
    _check_rank(np.diag(R), names)
    beta = np.linalg.solve(R, Q.T @ y)
    r_inv = np.linalg.solve(R, np.eye(R.shape[0]))
    return beta, r_inv @ r_inv.T


def fit_linear(design: DesignLike, y) -> FitResult:
    """Ordinary least squares with covariance ``s^2 (X'X)^{-1}``, ``s^2 = RSS/(n-p)``."""
    dm = _as_design(design)
    X = dm.values
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError(f"outcome has shape {y.shape}, expected ({n},)")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("design and outcome must be finite")
    if n <= p:
        raise RegressionError(f"need more rows than columns (n={n}, p={p})")
    beta, xtx_inv = _qr_solve(X, y, dm.names)
    resid = y - X @ beta
    s2 = float(resid @ resid) / (n - p)
    cov = s2 * xtx_inv
    return FitResult(beta, (cov + cov.T) / 2, s2, "identity", n, True, tuple(dm.names))


def expit(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-np.logaddexp(0.0, -x))


def _binomial_deviance(y, p):
    p = np.clip(p, 1e-300, 1.0)
    q = np.clip(1.0 - p, 1e-300, 1.0)
    with np.errstate(invalid="ignore"):
        ll = np.where(y > 0, y * np.log(p), 0.0) + np.where(y < 1, (1 - y) * np.log(q), 0.0)
    return -2.0 * float(ll.sum())


def fit_logistic(design: DesignLike, y, max_iter: int = 50, fractional: bool = False) -> FitResult:
    """Logistic regression by IRLS with step-halving.

    Converges when the largest absolute score component falls below 1e-8 or the
    relative deviance change falls below 1e-10. ``fractional=True`` accepts
    outcomes in [0, 1] (quasi-likelihood fit used for marginal structural models).
    """
    dm = _as_design(design)
    X = dm.values
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError(f"outcome has shape {y.shape}, expected ({n},)")
    if fractional:
        if np.any((y < 0) | (y > 1)):
            raise ValueError("fractional logistic outcome must lie in [0, 1]")
    elif not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic outcome must be binary 0/1")
    if n < p or (n == p and not fractional):
        raise RegressionError(f"need more rows than columns (n={n}, p={p})")

    beta = np.zeros(p)
    eta = X @ beta
    mu = expit(eta)
    dev = _binomial_deviance(y, mu)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = np.clip(mu * (1 - mu), 1e-12, None)
        z = eta + (y - mu) / w
        sw = np.sqrt(w)
        try:
            target, _ = _qr_solve(X * sw[:, None], z * sw, dm.names)
        except RankDeficientError:
            if np.max(np.abs(beta)) > SEPARATION_BOUND / 2:
                raise SeparationError("quasi-separation: fitted probabilities collapsed to 0/1") from None
            raise
        step = target - beta
        new_dev = np.inf
        for _ in range(30):
            cand = beta + step
            cand_mu = expit(X @ cand)
            new_dev = _binomial_deviance(y, cand_mu)
            if new_dev <= dev + 1e-12 * abs(dev):
                break
            step /= 2
        beta = cand
        eta = X @ beta
        mu = cand_mu
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise SeparationError(
                f"quasi-separation: |coefficient| exceeded {SEPARATION_BOUND:g} "
                f"({dm.names[int(np.argmax(np.abs(beta)))]!r})")
        score = X.T @ (y - mu)
        rel_change = abs(dev - new_dev) / (abs(new_dev) + 0.1)
        dev = new_dev
        if np.max(np.abs(score)) < 1e-8 or rel_change < 1e-10:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations")

    w = mu * (1 - mu)
    _, info_inv = _qr_solve(X * np.sqrt(w)[:, None], np.zeros(n), dm.names)
    return FitResult(beta, (info_inv + info_inv.T) / 2, float("nan"), "logit", n, True,
                     tuple(dm.names), it)


def predict(fit: FitResult, design: DesignLike) -> np.ndarray:
    X = design.values if isinstance(design, DesignMatrix) else np.asarray(design, dtype=float)
    if X.ndim != 2 or X.shape[1] != fit.beta.shape[0]:
        raise ValueError(f"design has {X.shape[-1]} columns, fit has {fit.beta.shape[0]} coefficients")
    eta = X @ fit.beta
    if fit.link == "logit":
        return expit(eta)
    return eta


def bootstrap_coefficients(X, y, counts) -> tuple[np.ndarray, np.ndarray]:
    """OLS coefficients for many row-resamples at once.

    ``counts`` is a (B, n) matrix of resample multiplicities. Each resample's
    normal equations are assembled as a count-weighted Gram matrix, so no
    resampled design is materialized. Returns ``(betas, ok)`` where ``ok`` flags
    resamples whose Gram factor passed the rank tolerance.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    C = np.asarray(counts, dtype=float)
    n, p = X.shape
    outer = (X[:, :, None] * X[:, None, :]).reshape(n, p * p)
    G = (C @ outer).reshape(-1, p, p)
    rhs = C @ (X * y[:, None])
    B = G.shape[0]
    ok = np.ones(B, dtype=bool)
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        L = np.zeros_like(G)
        for b in range(B):
            try:
                L[b] = np.linalg.cholesky(G[b])
            except np.linalg.LinAlgError:
                ok[b] = False
    diag = np.abs(np.diagonal(L, axis1=1, axis2=2))
    ok &= np.all(diag > RANK_TOL * diag.max(axis=1, keepdims=True), axis=1)
    betas = np.full((B, p), np.nan)
    if ok.any():
        Lk = L[ok]
        tmp = np.linalg.solve(Lk, rhs[ok][..., None])
        betas[ok] = np.linalg.solve(np.swapaxes(Lk, 1, 2), tmp)[..., 0]
    return betas, ok
