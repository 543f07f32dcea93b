"""Quantile g-computation.

The mixture effect ``psi`` is the change in the expected outcome when every
quantized exposure is raised by one level at the same time. For a linear,
additive, identity-link outcome model it is the sum of the exposure
coefficients, with variance ``1' S 1`` over their covariance block. For other
models it is estimated as the polynomial coefficients of a marginal structural
model fit to predictions made with all exposures set to each level, and its
variance comes from a row bootstrap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .quantize import QuantizedMatrix, quantize_matrix
from .regress import (
    DesignMatrix,
    FitResult,
    RegressionError,
    bootstrap_coefficients,
    fit_linear,
    fit_logistic,
    predict,
)
from .streams import SeedLike, resample_counts, stream

Z_CRIT = 1.96
DEFAULT_BOOTSTRAP = 200


@dataclass(frozen=True)
class ModelSpec:
    """Outcome-model terms and the degree of the mixture dose-response.

    Every exposure enters with a main term. ``products`` lists extra exposure
    products by 0-based column pair; ``(j, j)`` is a square term.
    """

    products: tuple = ()
    msm_degree: int = 1
    q: int = 4
    link: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "products", tuple(tuple(int(i) for i in pair) for pair in self.products))
        if self.link not in ("identity", "logit"):
            raise ValueError(f"link must be 'identity' or 'logit', got {self.link!r}")
        if self.q < 2:
            raise ValueError("q must be >= 2")
        if not 1 <= self.msm_degree <= self.q - 1:
            raise ValueError(f"msm_degree must be in 1..q-1 (q={self.q}), got {self.msm_degree}")
        for pair in self.products:
            if len(pair) != 2:
                raise ValueError(f"product term must reference two exposures: {pair}")

    @property
    def additive(self) -> bool:
        return not self.products

    def check(self, d: int) -> None:
        for j, k in self.products:
            if not (0 <= j < d and 0 <= k < d):
                raise ValueError(f"product term ({j}, {k}) references an undeclared exposure (d={d})")


@dataclass
class MixtureData:
    exposures: np.ndarray
    y: np.ndarray
    covariates: Optional[np.ndarray] = None
    exposure_names: Optional[tuple] = None
    covariate_names: Optional[tuple] = None

    def __post_init__(self):
        self.exposures = np.asarray(self.exposures, dtype=float)
        if self.exposures.ndim == 1:
            self.exposures = self.exposures[:, None]
        self.y = np.asarray(self.y, dtype=float)
        n, d = self.exposures.shape
        if self.y.shape != (n,):
            raise ValueError(f"outcome length {self.y.shape} does not match {n} exposure rows")
        if self.covariates is not None:
            self.covariates = np.asarray(self.covariates, dtype=float)
            if self.covariates.ndim == 1:
                self.covariates = self.covariates[:, None]
            if self.covariates.shape[0] != n:
                raise ValueError("covariate rows do not match exposure rows")
            if self.covariates.shape[1] == 0:
                self.covariates = None
        if self.exposure_names is None:
            self.exposure_names = tuple(f"X{j + 1}" for j in range(d))
        if self.covariates is not None and self.covariate_names is None:
            self.covariate_names = tuple(f"Z{j + 1}" for j in range(self.covariates.shape[1]))

    @property
    def n(self) -> int:
        return self.exposures.shape[0]

    @property
    def d(self) -> int:
        return self.exposures.shape[1]

    def take(self, idx) -> "MixtureData":
        cov = None if self.covariates is None else self.covariates[idx]
        return MixtureData(self.exposures[idx], self.y[idx], cov, self.exposure_names, self.covariate_names)


@dataclass
class MixtureEstimate:
    psi: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    weights_positive: dict
    weights_negative: dict
    partial_effect_positive: float
    partial_effect_negative: float
    underlying_fit: FitResult
    variance_method: str
    n_bootstrap: int = 0
    bootstrap_failures: int = 0
    quantized: Optional[QuantizedMatrix] = field(default=None, repr=False)

    @property
    def z(self) -> np.ndarray:
        return self.psi / self.se


def build_design(data: MixtureData, spec: ModelSpec, exposures=None) -> DesignMatrix:
    """Outcome-model design: intercept, main terms, products, covariates.

    ``exposures`` replaces the observed exposure matrix (used to set
    exposures to fixed levels while keeping covariates as observed).
    """
    X = data.exposures if exposures is None else np.asarray(exposures, dtype=float)
    n, d = X.shape
    spec.check(d)
    names = data.exposure_names
    cols = [np.ones(n)]
    roles = [("intercept",)]
    labels = ["(Intercept)"]
    for j in range(d):
        cols.append(X[:, j])
        roles.append(("exposure", j))
        labels.append(names[j])
    for j, k in spec.products:
        cols.append(X[:, j] * X[:, k])
        roles.append(("product", j, k))
        labels.append(f"{names[j]}*{names[k]}")
    if data.covariates is not None:
        for c in range(data.covariates.shape[1]):
            cols.append(data.covariates[:, c])
            roles.append(("covariate", data.covariate_names[c]))
            labels.append(data.covariate_names[c])
    return DesignMatrix(np.column_stack(cols), tuple(roles), tuple(labels))


def exposure_columns(design: DesignMatrix) -> list[int]:
    return design.columns_with_role("exposure")


def psi_linear(fit: FitResult, exposure_columns: Sequence[int]) -> tuple[float, float]:
    """Sum of exposure coefficients and its variance ``1' S 1``."""
    idx = np.asarray(list(exposure_columns), dtype=int)
    p = fit.beta.shape[0]
    if idx.size == 0 or np.any((idx < 0) | (idx >= p)):
        raise IndexError(f"exposure columns {idx.tolist()} out of range for {p} coefficients")
    psi = float(fit.beta[idx].sum())
    var = float(fit.covariance[np.ix_(idx, idx)].sum())
    return psi, var


def weights_partition(fit: FitResult, exposure_columns: Sequence[int], names: Sequence[str] | None = None,
                      spec: ModelSpec | None = None):
    """Split exposure coefficients into positive and negative weight maps.

    Each sign group is normalized to sum to one; zero coefficients belong to
    neither group. Returns ``(positive, negative, (partial_pos, partial_neg))``.
    """
    if spec is not None and not spec.additive:
        raise ValueError("weights are undefined when the outcome model has product or square terms")
    idx = list(exposure_columns)
    if names is None:
        names = [fit.names[i] if fit.names else f"X{k + 1}" for k, i in enumerate(idx)]
    beta = fit.beta[idx]
    pos_total = float(beta[beta > 0].sum())
    neg_total = float(beta[beta < 0].sum())
    positive = {nm: float(b / pos_total) for nm, b in zip(names, beta) if b > 0}
    negative = {nm: float(b / neg_total) for nm, b in zip(names, beta) if b < 0}
    return positive, negative, (pos_total, neg_total)


def msm_basis(levels, degree: int) -> np.ndarray:
    levels = np.asarray(levels, dtype=float)
    return np.vander(levels, degree + 1, increasing=True)


def _fit_underlying(design: DesignMatrix, y, link: str) -> FitResult:
    return fit_linear(design, y) if link == "identity" else fit_logistic(design, y)


def _level_designs(data: MixtureData, spec: ModelSpec) -> list[DesignMatrix]:
    return [build_design(data, spec, np.full(data.exposures.shape, float(level)))
            for level in range(spec.q)]


def _fit_msm(mean_pred: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """Polynomial MSM on per-level mean predictions; returns all MSM coefficients.

    Every subject contributes one pseudo-row per level, so the stacked fit is
    balanced and its normal equations reduce to these level means.
    """
    basis = msm_basis(np.arange(spec.q), spec.msm_degree)
    if spec.link == "identity":
        return np.linalg.lstsq(basis, mean_pred, rcond=None)[0]
    return fit_logistic(DesignMatrix.from_array(basis), mean_pred, fractional=True).beta


def msm_psi(data: MixtureData, spec: ModelSpec) -> tuple[np.ndarray, FitResult]:
    """Three-step g-computation: fit, predict at each joint level, fit the MSM.

    Returns ``(psi, underlying_fit)`` with ``psi`` the non-intercept MSM
    coefficients (linear first).
    """
    design = build_design(data, spec)
    fit = _fit_underlying(design, data.y, spec.link)
    mean_pred = np.array([predict(fit, dl).mean() for dl in _level_designs(data, spec)])
    return _fit_msm(mean_pred, spec)[1:], fit


def _max_retries(B: int) -> int:
    return max(1, math.ceil(0.1 * B))


def _bootstrap_loop(data: MixtureData, spec: ModelSpec, B: int, seed: SeedLike):
    rngs = [stream(seed, b) for b in range(B)]
    out = np.empty((B, spec.msm_degree))
    retries = 0
    for b, rng in enumerate(rngs):
        while True:
            counts = resample_counts(rng, data.n)
            try:
                out[b] = msm_psi(data.take(np.repeat(np.arange(data.n), counts)), spec)[0]
                break
            except RegressionError:
                retries += 1
                if retries > _max_retries(B):
                    raise RegressionError(f"bootstrap failed: more than {_max_retries(B)} "
                                          "resamples could not be fit") from None
    return out, retries


def _bootstrap_vectorized(data: MixtureData, spec: ModelSpec, B: int, seed: SeedLike):
    design = build_design(data, spec).values
    levels = np.stack([dl.values for dl in _level_designs(data, spec)])  # (q, n, p)
    rngs = [stream(seed, b) for b in range(B)]
    counts = np.stack([resample_counts(rng, data.n) for rng in rngs])
    betas, ok = bootstrap_coefficients(design, data.y, counts)
    retries = 0
    while not ok.all():
        bad = np.flatnonzero(~ok)
        retries += bad.size
        if retries > _max_retries(B):
            raise RegressionError(f"bootstrap failed: more than {_max_retries(B)} resamples could not be fit")
        counts[bad] = np.stack([resample_counts(rngs[b], data.n) for b in bad])
        betas[bad], ok[bad] = bootstrap_coefficients(design, data.y, counts[bad])
    mean_design = np.einsum("bn,lnp->blp", counts / data.n, levels)
    mean_pred = np.einsum("blp,bp->bl", mean_design, betas)
    pinv = np.linalg.pinv(msm_basis(np.arange(spec.q), spec.msm_degree))
    return (mean_pred @ pinv.T)[:, 1:], retries


def _weights(fit: FitResult, design: DesignMatrix, spec: ModelSpec, data: MixtureData):
    if not spec.additive:
        return {}, {}, (float("nan"), float("nan"))
    return weights_partition(fit, exposure_columns(design), data.exposure_names)


def analytic_estimate(data: MixtureData, spec: ModelSpec) -> MixtureEstimate:
    """Closed-form path for linear, additive, identity-link models."""
    if spec.link != "identity" or not spec.additive or spec.msm_degree != 1:
        raise ValueError("analytic variance requires a linear, additive, identity-link model with msm_degree=1")
    design = build_design(data, spec)
    fit = fit_linear(design, data.y)
    psi, var = psi_linear(fit, exposure_columns(design))
    se = math.sqrt(max(var, 0.0))
    pos, neg, (pp, pn) = _weights(fit, design, spec, data)
    return MixtureEstimate(np.array([psi]), np.array([se]), np.array([psi - Z_CRIT * se]),
                           np.array([psi + Z_CRIT * se]), pos, neg, pp, pn, fit, "analytic")


def bootstrap_ci(data: MixtureData, spec: ModelSpec, B: int = DEFAULT_BOOTSTRAP,
                 seed: SeedLike = None, vectorized: bool | None = None) -> MixtureEstimate:
    """MSM estimate with nonparametric bootstrap standard errors and Wald CIs.

    Resample ``b`` draws from a stream derived from ``(seed, b)`` alone.
    Failed resamples are redrawn from the same stream, at most ``ceil(0.1 B)``
    times in total.
    """
    if B < 2:
        raise ValueError("need at least 2 bootstrap iterations")
    psi, fit = msm_psi(data, spec)
    if vectorized is None:
        vectorized = spec.link == "identity"
    if vectorized and spec.link != "identity":
        raise ValueError("vectorized bootstrap supports the identity link only")
    runner = _bootstrap_vectorized if vectorized else _bootstrap_loop
    draws, retries = runner(data, spec, B, seed)
    se = draws.std(axis=0, ddof=1)
    design = build_design(data, spec)
    pos, neg, (pp, pn) = _weights(fit, design, spec, data)
    return MixtureEstimate(psi, se, psi - Z_CRIT * se, psi + Z_CRIT * se, pos, neg, pp, pn, fit,
                           "bootstrap", B, retries)


def qgcomp(exposures, y, spec: ModelSpec | None = None, covariates=None, *, B: int = DEFAULT_BOOTSTRAP,
           seed: SeedLike = None, variance: str = "auto", exposure_names=None,
           covariate_names=None) -> MixtureEstimate:
    """Quantize exposures and estimate the mixture effect.

    ``variance="auto"`` uses the closed form when the model is linear,
    additive and identity-link with ``msm_degree=1`` and the bootstrap
    otherwise.
    """
    spec = spec or ModelSpec()
    qm = quantize_matrix(exposures, spec.q, exposure_names)
    data = MixtureData(qm.scores, y, covariates, qm.column_names, covariate_names)
    simple = spec.link == "identity" and spec.additive and spec.msm_degree == 1
    if variance == "auto":
        variance = "analytic" if simple else "bootstrap"
    if variance == "analytic":
        est = analytic_estimate(data, spec)
    elif variance == "bootstrap":
        est = bootstrap_ci(data, spec, B, seed)
    else:
        raise ValueError(f"unknown variance method {variance!r}")
    est.quantized = qm
    return est
