"""Mixture effects of quantized exposures: quantile g-computation and WQS regression."""

__version__ = "0.1.0"

from .qgc import MixtureData, MixtureEstimate, ModelSpec, bootstrap_ci, msm_psi, psi_linear, qgcomp, weights_partition
from .quantize import QuantizedMatrix, quantize_column, quantize_matrix
from .regress import DesignMatrix, FitResult, fit_linear, fit_logistic, predict
from .wqs import WqsConfig, WqsEstimate, wqs_fit

__all__ = [
    "DesignMatrix", "FitResult", "MixtureData", "MixtureEstimate", "ModelSpec", "QuantizedMatrix",
    "WqsConfig", "WqsEstimate", "bootstrap_ci", "fit_linear", "fit_logistic", "msm_psi", "predict",
    "psi_linear", "qgcomp", "quantize_column", "quantize_matrix", "weights_partition", "wqs_fit",
]
