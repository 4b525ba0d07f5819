"""Symbolic engine for symmetric-ordered quadrature polynomials.

Exposes the exponential-polynomial coefficient ring, the Moyal star algebra,
the time-ordered commutator expansion, the classical unstable-manifold
series, and the assembled analytic predictions.
"""

from .exppoly import ExpPoly
from .algebra import WeylPolynomial, quantize_polynomial, quantize_v
from .dyson import OrderStarvationError, dominant_and_remainder, dyson_expand
from .normalform import UnstableManifold, dominant_coefficients
from .predictions import (
    OrderError,
    ScalingPrediction,
    bplus_matrix_element,
    build_dimer_prediction,
    count_pairings,
    cumulant_prediction,
    expectation_finite_time,
    expectation_series,
    gaussian_moment,
    otoc_finite_time,
    otoc_series,
    quantized_observable,
    thermal_covariance,
    wick_expectation,
)

__all__ = [
    "ExpPoly",
    "WeylPolynomial",
    "quantize_polynomial",
    "quantize_v",
    "OrderStarvationError",
    "dominant_and_remainder",
    "dyson_expand",
    "UnstableManifold",
    "dominant_coefficients",
    "OrderError",
    "ScalingPrediction",
    "bplus_matrix_element",
    "build_dimer_prediction",
    "count_pairings",
    "cumulant_prediction",
    "expectation_finite_time",
    "expectation_series",
    "gaussian_moment",
    "otoc_finite_time",
    "otoc_series",
    "quantized_observable",
    "thermal_covariance",
    "wick_expectation",
]
