"""Trial data generation and measurement-error contamination.

The error structures are small frozen dataclasses; :func:`contaminate`
dispatches on their type. Random draws always come from a caller-owned
``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from mecor.errors import LengthMismatch, OutOfDomain
from mecor.stats_core import TrialDataset, as_vector

__all__ = [
    "TrialGenerator",
    "Classical",
    "Heteroscedastic",
    "Systematic",
    "Differential",
    "PrognosticFactor",
    "ErrorModelSpec",
    "generate_true",
    "draw_factor",
    "contaminate",
    "tau_from_r2",
    "population_naive_slope",
]


@dataclass(frozen=True)
class TrialGenerator:
    """Parameters of ``Y = alpha_y + beta_y * X + eps``, ``eps ~ N(0, sigma^2)``."""

    alpha_y: float = 120.0
    beta_y: float = 6.9
    sigma: float = 12.6
    n_per_arm: int = 200

    def __post_init__(self):
        if not self.sigma > 0:
            raise OutOfDomain(f"sigma must be positive, got {self.sigma}")
        if self.n_per_arm < 2:
            raise OutOfDomain(f"n_per_arm must be at least 2, got {self.n_per_arm}")


def _nonneg(name, value):
    if not value >= 0:
        raise OutOfDomain(f"{name} must be non-negative, got {value}")


@dataclass(frozen=True)
class Classical:
    tau: float = 0.0

    def __post_init__(self):
        _nonneg("tau", self.tau)


@dataclass(frozen=True)
class Heteroscedastic:
    tau0: float
    tau1: float

    def __post_init__(self):
        _nonneg("tau0", self.tau0)
        _nonneg("tau1", self.tau1)


@dataclass(frozen=True)
class Systematic:
    theta0: float = 0.0
    theta1: float = 1.0
    tau: float = 0.0

    def __post_init__(self):
        if self.theta1 == 0:
            raise OutOfDomain("theta1 must be non-zero")
        _nonneg("tau", self.tau)


@dataclass(frozen=True)
class Differential:
    """Arm-specific affine error: ``Y* = theta0x + theta1x * Y + e_x``.

    ``theta00``/``theta10`` belong to arm 0 and ``theta01``/``theta11`` to arm 1.
    """

    theta00: float = 0.0
    theta01: float = 0.0
    theta10: float = 1.0
    theta11: float = 1.0
    tau0: float = 0.0
    tau1: float = 0.0

    def __post_init__(self):
        if self.theta10 == 0 or self.theta11 == 0:
            raise OutOfDomain("theta10 and theta11 must be non-zero")
        _nonneg("tau0", self.tau0)
        _nonneg("tau1", self.tau1)

    def intercept(self, arm: int) -> float:
        return self.theta01 if arm else self.theta00

    def slope(self, arm: int) -> float:
        return self.theta11 if arm else self.theta10

    def tau(self, arm: int) -> float:
        return self.tau1 if arm else self.tau0


@dataclass(frozen=True)
class PrognosticFactor:
    """Error shifted by a binary prognostic factor: ``Y* = Y + zeta * S + e``.

    ``gamma_y`` is the factor's effect on the true endpoint and
    ``prevalence`` is ``P(S = 1)``.
    """

    zeta: float = 0.5
    gamma_y: float = 10.0
    prevalence: float = 0.25
    tau: float = 6.6

    def __post_init__(self):
        if not 0.0 <= self.prevalence <= 1.0:
            raise OutOfDomain(f"prevalence must lie in [0, 1], got {self.prevalence}")
        _nonneg("tau", self.tau)


ErrorModelSpec = Union[Classical, Heteroscedastic, Systematic, Differential, PrognosticFactor]


def treatment_vector(n_per_arm: int) -> np.ndarray:
    return np.repeat([0.0, 1.0], n_per_arm)


def draw_factor(n: int, prevalence: float, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(n) < prevalence).astype(float)


def generate_true(
    gen: TrialGenerator,
    rng: np.random.Generator,
    factor=None,
    factor_effect: float = 0.0,
) -> TrialDataset:
    """Draw error-free endpoints for ``n_per_arm`` subjects per arm.

    Arm 0 occupies the first ``n_per_arm`` rows. When ``factor`` is given its
    contribution ``factor_effect * factor`` is added to every endpoint.
    """
    x = treatment_vector(gen.n_per_arm)
    y = gen.alpha_y + gen.beta_y * x + gen.sigma * rng.standard_normal(x.size)
    if factor is not None:
        y = y + factor_effect * np.asarray(factor, dtype=float)
    return TrialDataset(x, y)


def contaminate(y_true, x, spec: ErrorModelSpec, rng: np.random.Generator, factor=None) -> np.ndarray:
    """Return the error-prone endpoint ``Y*`` for true endpoints ``y_true``.

    One standard-normal draw is consumed per subject whatever the spec, so
    specs sharing a generator state see the same underlying noise.
    """
    y = as_vector(y_true, "y_true")
    x = as_vector(x, "x")
    if x.shape != y.shape:
        raise LengthMismatch(f"y_true has {y.size} rows but x has {x.size}")
    z = rng.standard_normal(y.size)
    if isinstance(spec, Classical):
        return y + spec.tau * z
    if isinstance(spec, Heteroscedastic):
        return y + np.where(x == 1, spec.tau1, spec.tau0) * z
    if isinstance(spec, Systematic):
        return spec.theta0 + spec.theta1 * y + spec.tau * z
    if isinstance(spec, Differential):
        arm1 = x == 1
        theta0 = np.where(arm1, spec.theta01, spec.theta00)
        theta1 = np.where(arm1, spec.theta11, spec.theta10)
        tau = np.where(arm1, spec.tau1, spec.tau0)
        return theta0 + theta1 * y + tau * z
    if isinstance(spec, PrognosticFactor):
        if factor is None:
            raise OutOfDomain("the prognostic-factor model needs the factor values")
        s = as_vector(factor, "factor")
        if s.shape != y.shape:
            raise LengthMismatch(f"factor has {s.size} rows but y_true has {y.size}")
        return y + spec.zeta * s + spec.tau * z
    raise TypeError(f"unsupported error model {type(spec).__name__}")


def tau_from_r2(r2: float, theta1: float, sigma: float) -> float:
    """Error SD giving ``R^2 = theta1^2 sigma^2 / (theta1^2 sigma^2 + tau^2)``."""
    if not 0.0 < r2 <= 1.0:
        raise OutOfDomain(f"r2 must lie in (0, 1], got {r2}")
    return abs(theta1) * sigma * math.sqrt((1.0 - r2) / r2)


def population_naive_slope(gen: TrialGenerator, spec: ErrorModelSpec) -> float:
    """Expected slope of ``Y*`` on ``X`` under the given error structure."""
    a, b = gen.alpha_y, gen.beta_y
    if isinstance(spec, (Classical, Heteroscedastic)):
        return b
    if isinstance(spec, Systematic):
        return spec.theta1 * b
    if isinstance(spec, Differential):
        return spec.theta01 - spec.theta00 + (spec.theta11 - spec.theta10) * a + spec.theta11 * b
    if isinstance(spec, PrognosticFactor):
        return b
    raise TypeError(f"unsupported error model {type(spec).__name__}")
