"""Weighted quantile sum regression.

Weights are averaged over bootstrap fits in a training subset, each fit
keeping only the coefficients of the allowed sign and normalizing them to one.
The weighted index ``S = sum_j w_j X_j`` is then regressed on the outcome in
the validation subset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .qgc import Z_CRIT, MixtureData
from .quantize import quantize_matrix
from .regress import DesignMatrix, RegressionError, bootstrap_coefficients, fit_linear
from .streams import SeedLike, resample_counts, stream

# Cap on the resample-by-observation matrix materialized per batch.
_BATCH_CELLS = 4_000_000


@dataclass(frozen=True)
class WqsConfig:
    train_fraction: float = 0.4
    n_bootstrap: int = 100
    direction: str = "positive"
    quadratic_index: bool = False
    q: int = 4
    seed: SeedLike = None

    def __post_init__(self):
        if not 0.0 <= self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in [0, 1)")
        if self.n_bootstrap < 1:
            raise ValueError("n_bootstrap must be >= 1")
        if self.direction not in ("positive", "negative"):
            raise ValueError("direction must be 'positive' or 'negative'")
        if self.q < 2:
            raise ValueError("q must be >= 2")


@dataclass
class WqsEstimate:
    psi: np.ndarray
    se: np.ndarray
    t_statistic: np.ndarray
    weights: np.ndarray
    index: np.ndarray
    validation_fit: object = field(repr=False, default=None)
    train_size: int = 0
    validation_size: int = 0
    uniform_fallbacks: int = 0
    bootstrap_failures: int = 0
    exposure_names: tuple = ()

    @property
    def ci_lower(self) -> np.ndarray:
        return self.psi - Z_CRIT * self.se

    @property
    def ci_upper(self) -> np.ndarray:
        return self.psi + Z_CRIT * self.se


def split_sample(n: int, train_fraction: float, seed: SeedLike = None) -> tuple[np.ndarray, np.ndarray]:
    """Random train/validation split; ``train_fraction == 0`` uses all rows for both."""
    if not 0.0 <= train_fraction < 1.0:
        raise ValueError("train_fraction must lie in [0, 1)")
    if train_fraction == 0.0:
        idx = np.arange(n)
        return idx, idx.copy()
    perm = stream(seed, 0).permutation(n)
    k = int(round(n * train_fraction))
    return np.sort(perm[:k]), np.sort(perm[k:])


def _design(data: MixtureData) -> np.ndarray:
    cols = [np.ones(data.n), data.exposures]
    if data.covariates is not None:
        cols.append(data.covariates)
    return np.column_stack(cols)


def constrain_coefficients(beta_exposures: np.ndarray, direction: str = "positive") -> Optional[np.ndarray]:
    """Keep same-sign coefficients and normalize them to one; ``None`` when none qualify."""
    b = np.asarray(beta_exposures, dtype=float)
    kept = np.where(b > 0, b, 0.0) if direction == "positive" else np.where(b < 0, -b, 0.0)
    total = kept.sum()
    if total <= 0:
        return None
    return kept / total


def bootstrap_weights(train: MixtureData, config: WqsConfig, return_diagnostics: bool = False):
    """Mean of the per-resample constrained weights, renormalized to the simplex."""
    n, d = train.n, train.d
    X = _design(train)
    if n <= X.shape[1]:
        raise RegressionError(f"training set too small: {n} rows for {X.shape[1]} coefficients")
    B = config.n_bootstrap
    max_retries = max(1, math.ceil(0.1 * B))
    rngs = [stream(config.seed, 1, b) for b in range(B)]
    chunk = max(1, _BATCH_CELLS // n)
    raw = np.empty((B, d))
    retries = 0
    for start in range(0, B, chunk):
        ids = np.arange(start, min(B, start + chunk))
        counts = np.stack([resample_counts(rngs[b], n) for b in ids])
        betas, ok = bootstrap_coefficients(X, train.y, counts)
        while not ok.all():
            bad = np.flatnonzero(~ok)
            retries += bad.size
            if retries > max_retries:
                raise RegressionError(f"WQS bootstrap failed: more than {max_retries} resamples could not be fit")
            counts[bad] = np.stack([resample_counts(rngs[ids[i]], n) for i in bad])
            betas[bad], ok[bad] = bootstrap_coefficients(X, train.y, counts[bad])
        raw[ids] = betas[:, 1:d + 1]

    if config.direction == "positive":
        kept = np.where(raw > 0, raw, 0.0)
    else:
        kept = np.where(raw < 0, -raw, 0.0)
    totals = kept.sum(axis=1)
    empty = totals <= 0
    w = np.divide(kept, totals[:, None], out=np.full_like(kept, 1.0 / d), where=~empty[:, None])
    mean = w.mean(axis=0)
    mean = mean / mean.sum()
    if return_diagnostics:
        return mean, {"uniform_fallbacks": int(empty.sum()), "bootstrap_failures": retries}
    return mean


def wqs_fit(exposures, y, covariates=None, config: WqsConfig | None = None, exposure_names=None) -> WqsEstimate:
    """Fit WQS regression and report the index coefficient(s) from the validation set."""
    config = config or WqsConfig()
    qm = quantize_matrix(exposures, config.q, exposure_names)
    data = MixtureData(qm.scores, y, covariates, qm.column_names)
    train_idx, valid_idx = split_sample(data.n, config.train_fraction, config.seed)
    weights, diag = bootstrap_weights(data.take(train_idx), config, return_diagnostics=True)

    valid = data.take(valid_idx)
    S = valid.exposures @ weights
    if np.ptp(S) <= 1e-12 * max(1.0, float(np.abs(S).max())):
        raise RegressionError("degenerate WQS index: all validation index values are equal")
    cols = [np.ones(valid.n), S]
    names = ["(Intercept)", "wqs"]
    roles = [("intercept",), ("exposure", 0)]
    if config.quadratic_index:
        cols.append(S ** 2)
        names.append("wqs^2")
        roles.append(("product", 0, 0))
    if valid.covariates is not None:
        for c in range(valid.covariates.shape[1]):
            cols.append(valid.covariates[:, c])
            names.append(valid.covariate_names[c])
            roles.append(("covariate", valid.covariate_names[c]))
    fit = fit_linear(DesignMatrix(np.column_stack(cols), tuple(roles), tuple(names)), valid.y)
    k = 3 if config.quadratic_index else 2
    psi = fit.beta[1:k]
    se = fit.se[1:k]
    return WqsEstimate(psi, se, psi / se, weights, data.exposures @ weights, fit,
                       len(train_idx), len(valid_idx), diag["uniform_fallbacks"],
                       diag["bootstrap_failures"], qm.column_names)
