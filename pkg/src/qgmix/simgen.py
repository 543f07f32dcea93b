"""Simulated mixtures of quantized exposures for the eight study scenarios.

Outcomes follow

    Y = sum_j b_j X_j + b_11 X_1 X_1 + b_12 X_1 X_2 + b_C C + e,  e ~ N(0, 1)

with every exposure (and the hidden confounder C) uniform on ``0..q-1``.
Correlation between X_1 and X_2 (or C) is induced by copying X_1 with
probability ``sqrt(rho)`` and otherwise drawing one of the other observed
values of X_1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

EQUAL_SPLIT_TOTAL = 0.25

# Realized Pearson correlation between base and copy for the preset
# copy_prob = sqrt(rho), measured at n = 10**6 (see tests/test_simgen.py).
CALIBRATED_CORRELATION = {0.4: 0.633, 0.75: 0.865, 0.9: 0.949}


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation cell.

    When ``equal_split_betas`` is set every exposure gets coefficient
    ``EQUAL_SPLIT_TOTAL / d`` and ``beta1``/``beta2`` are ignored.
    """

    id: int
    beta1: float = 0.0
    beta2: float = 0.0
    beta_11: float = 0.0
    beta_12: float = 0.0
    beta_C: float = 0.0
    rho_x1x2: float = 0.0
    rho_xC: float = 0.0
    n: int = 500
    d: int = 4
    q: int = 4
    equal_split_betas: bool = False

    def __post_init__(self):
        for name in ("beta1", "beta2", "beta_11", "beta_12", "beta_C"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        for name in ("rho_x1x2", "rho_xC"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.d < 2:
            raise ValueError("need at least 2 exposures")
        if self.q < 2:
            raise ValueError("q must be >= 2")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def betas(self) -> np.ndarray:
        if self.equal_split_betas:
            return np.full(self.d, EQUAL_SPLIT_TOTAL / self.d)
        b = np.zeros(self.d)
        b[0], b[1] = self.beta1, self.beta2
        return b

    @property
    def truth(self) -> tuple[float, float]:
        """Mixture effect (linear, quadratic) implied by the coefficients."""
        return float(self.betas.sum()), float(self.beta_11 + self.beta_12)

    @property
    def nonlinear(self) -> bool:
        return self.beta_11 != 0.0 or self.beta_12 != 0.0

    @property
    def products(self) -> tuple:
        """Outcome-model product terms matching the generating model."""
        terms = []
        if self.beta_11 != 0.0:
            terms.append((0, 0))
        if self.beta_12 != 0.0:
            terms.append((0, 1))
        return tuple(terms)

    @property
    def copy_prob_x1x2(self) -> float:
        return math.sqrt(self.rho_x1x2)

    @property
    def copy_prob_xC(self) -> float:
        return math.sqrt(self.rho_xC)

    @property
    def has_confounder(self) -> bool:
        return self.beta_C != 0.0 or self.rho_xC > 0.0

    def with_overrides(self, **kw) -> "ScenarioSpec":
        return replace(self, **kw)


_PRESETS = {
    1: dict(),
    2: dict(beta1=0.25, beta2=-0.25),
    3: dict(beta1=0.25),
    4: dict(beta1=0.25, beta2=0.25, equal_split_betas=True),
    5: dict(beta1=0.25, beta2=-0.1, rho_x1x2=0.4),
    6: dict(beta1=0.25, beta_C=0.5, rho_xC=0.75),
    7: dict(beta1=0.25, beta2=0.25, beta_12=-0.15),
    8: dict(beta1=0.25, beta2=0.25, beta_11=-0.15),
}

# Scenario 5 is reported over a grid of co-pollutant strength and correlation.
SCENARIO5_BETA2 = (-0.2, -0.1, -0.05)
SCENARIO5_RHO = (0.0, 0.4, 0.75)


def scenario(id: int, **overrides) -> ScenarioSpec:
    """Preset for scenario ``id`` (1-8) with optional field overrides."""
    if id not in _PRESETS:
        raise ValueError(f"unknown scenario id {id!r}; expected 1-8")
    return ScenarioSpec(id=id, **{**_PRESETS[id], **overrides})


def draw_quantized_uniform(n: int, q: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1 or q < 2:
        raise ValueError("need n >= 1 and q >= 2")
    return rng.integers(0, q, n)


def draw_correlated(base, copy_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Copy ``base[i]`` with probability ``copy_prob``, else take ``base[j]`` for a random ``j != i``."""
    if not 0.0 <= copy_prob <= 1.0:
        raise ValueError("copy_prob must lie in [0, 1]")
    base = np.asarray(base)
    n = base.size
    copy = rng.random(n) < copy_prob
    if n == 1:
        return base.copy()
    other = rng.integers(0, n - 1, n)
    other += other >= np.arange(n)
    return np.where(copy, base, base[other])


@dataclass
class SimDataset:
    exposures: np.ndarray
    outcome: np.ndarray
    truth: tuple
    hidden_confounder: Optional[np.ndarray] = None

    def realized_correlations(self) -> dict:
        out = {"x1x2": float(np.corrcoef(self.exposures[:, 0], self.exposures[:, 1])[0, 1])}
        if self.hidden_confounder is not None:
            out["x1C"] = float(np.corrcoef(self.exposures[:, 0], self.hidden_confounder)[0, 1])
        return out


def generate_dataset(spec: ScenarioSpec, rng: np.random.Generator) -> SimDataset:
    n, d, q = spec.n, spec.d, spec.q
    X = np.empty((n, d), dtype=int)
    X[:, 0] = draw_quantized_uniform(n, q, rng)
    if spec.rho_x1x2 > 0:
        X[:, 1] = draw_correlated(X[:, 0], spec.copy_prob_x1x2, rng)
    else:
        X[:, 1] = draw_quantized_uniform(n, q, rng)
    for j in range(2, d):
        X[:, j] = draw_quantized_uniform(n, q, rng)
    C = draw_correlated(X[:, 0], spec.copy_prob_xC, rng) if spec.has_confounder else None

    Xf = X.astype(float)
    y = Xf @ spec.betas + spec.beta_11 * Xf[:, 0] ** 2 + spec.beta_12 * Xf[:, 0] * Xf[:, 1]
    if C is not None:
        y = y + spec.beta_C * C
    y = y + rng.standard_normal(n)
    return SimDataset(X, y, spec.truth, C)
