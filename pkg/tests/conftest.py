"""Shared fixtures: benchmark models and deterministic hypothesis settings."""

import numpy as np
from hypothesis import HealthCheck, settings

from plhom.flux_model import (
    ConstantWeight,
    DiagonalShiftWeight,
    FluxModel,
    LayeredWeight,
    MatrixWeight,
    TrigWeight,
)

settings.register_profile(
    "ci",
    max_examples=20,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


def two_plus_sin(t):
    return 2.0 + np.sin(2.0 * np.pi * t)


def model_1d(p, mu_reg=0.0):
    """d=1 benchmark: a(y) = 2 + sin(2 pi y)."""
    return FluxModel(p, LayeredWeight(1, two_plus_sin), mu_reg)


def model_layered_2d(p, mu_reg=0.0):
    """d=2 layered benchmark: a(y) = 2 + sin(2 pi y_1)."""
    return FluxModel(p, LayeredWeight(2, two_plus_sin), mu_reg)


def model_diagonal_2d(p, mu_reg=0.0):
    """d=2 benchmark with equal partials: a(y) = 2 + sin(2 pi (y_1 + y_2))."""
    return FluxModel(p, DiagonalShiftWeight(2, two_plus_sin), mu_reg)


def model_const(p, value=1.0, dim=2, mu_reg=0.0):
    return FluxModel(p, ConstantWeight(dim, value), mu_reg)


def model_matrix_2d(p, mu_reg=0.0):
    """Symmetric positive definite matrix weight with oscillating entries."""
    diag0 = TrigWeight(2, 2.0, [(0.5, (1, 0), 0.0)])
    diag1 = TrigWeight(2, 2.0, [(0.5, (0, 1), 0.0)])
    off = TrigWeight(2, 0.5, [(0.2, (1, 1), 0.0)])
    return FluxModel(p, MatrixWeight(2, [[diag0, off], [off, diag1]]), mu_reg)
