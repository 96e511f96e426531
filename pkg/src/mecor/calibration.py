"""Estimation of the measurement-error model from an external calibration sample."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from mecor.errors import (
    DegenerateCalibration,
    LengthMismatch,
    MissingTreatment,
    OutOfDomain,
    TooFewObservations,
)
from mecor.stats_core import RegressionFit, as_vector, ols_fit, t_quantile

__all__ = [
    "CalibrationDataset",
    "SystematicCalibration",
    "DifferentialCalibration",
    "fit_systematic",
    "fit_differential",
    "theta1_significant",
]


@dataclass(frozen=True)
class CalibrationDataset:
    """Paired true and error-prone measurements on subjects outside the trial.

    ``treatment`` is only needed for the pilot-study (differential) form.
    """

    y_true: np.ndarray
    y_observed: np.ndarray
    treatment: np.ndarray | None = None

    def __post_init__(self):
        yt = as_vector(self.y_true, "y_true")
        yo = as_vector(self.y_observed, "y_observed")
        if yt.shape != yo.shape:
            raise LengthMismatch(f"y_true has {yt.size} rows but y_observed has {yo.size}")
        object.__setattr__(self, "y_true", yt)
        object.__setattr__(self, "y_observed", yo)
        if self.treatment is not None:
            x = as_vector(self.treatment, "treatment")
            if x.shape != yt.shape:
                raise LengthMismatch(f"treatment has {x.size} rows but y_true has {yt.size}")
            if not np.all((x == 0) | (x == 1)):
                raise OutOfDomain("treatment must be coded 0/1")
            object.__setattr__(self, "treatment", x)

    @property
    def k(self) -> int:
        return int(self.y_true.size)

    def arm(self, x: int) -> "CalibrationDataset":
        if self.treatment is None:
            raise MissingTreatment("calibration sample has no treatment column")
        mask = self.treatment == x
        return CalibrationDataset(self.y_true[mask], self.y_observed[mask])


@dataclass(frozen=True)
class SystematicCalibration:
    theta0_hat: float
    theta1_hat: float
    t2: float
    syy: float
    k: int
    fit: RegressionFit = field(repr=False)

    @property
    def theta1_variance(self) -> float:
        return self.t2 / self.syy


@dataclass(frozen=True)
class DifferentialCalibration:
    """Per-arm error-model estimates from a two-arm pilot.

    ``theta_covariance`` is ordered ``(theta00, theta10, theta01, theta11)``,
    i.e. the arm-0 intercept/slope block first, so it is block diagonal.
    """

    theta00_hat: float
    theta01_hat: float
    theta10_hat: float
    theta11_hat: float
    t2_by_arm: tuple[float, float]
    syy_by_arm: tuple[float, float]
    k_by_arm: tuple[int, int]
    theta_covariance: np.ndarray = field(repr=False)
    fits: tuple[RegressionFit, RegressionFit] = field(repr=False)

    def intercept(self, arm: int) -> float:
        return self.theta01_hat if arm else self.theta00_hat

    def slope(self, arm: int) -> float:
        return self.theta11_hat if arm else self.theta10_hat


def _fit_arm(y_true, y_observed, label: str) -> RegressionFit:
    k = len(y_true)
    if k < 3:
        raise TooFewObservations(f"{label} needs at least 3 rows, got {k}")
    if np.ptp(y_true) == 0:
        raise DegenerateCalibration(f"{label}: y_true has zero variance")
    return ols_fit(y_true, y_observed)


def fit_systematic(cal: CalibrationDataset) -> SystematicCalibration:
    """Regress ``y_observed`` on ``y_true`` over the whole calibration sample."""
    fit = _fit_arm(cal.y_true, cal.y_observed, "calibration sample")
    return SystematicCalibration(
        theta0_hat=fit.intercept,
        theta1_hat=fit.slope,
        t2=fit.residual_variance,
        syy=fit.sxx,
        k=fit.n,
        fit=fit,
    )


def fit_differential(cal: CalibrationDataset) -> DifferentialCalibration:
    """Fit the error model separately within each arm of a pilot study.

    Cross-arm covariances are zero by construction.
    """
    if cal.treatment is None:
        raise MissingTreatment("differential calibration requires a treatment column")
    fits = []
    for x in (0, 1):
        mask = cal.treatment == x
        fits.append(_fit_arm(cal.y_true[mask], cal.y_observed[mask], f"calibration arm {x}"))
    f0, f1 = fits
    cov = np.zeros((4, 4))
    for i, f in enumerate(fits):
        block = [
            [f.intercept_variance, f.slope_intercept_covariance],
            [f.slope_intercept_covariance, f.slope_variance],
        ]
        cov[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = block
    cov.setflags(write=False)
    return DifferentialCalibration(
        theta00_hat=f0.intercept,
        theta01_hat=f1.intercept,
        theta10_hat=f0.slope,
        theta11_hat=f1.slope,
        t2_by_arm=(f0.residual_variance, f1.residual_variance),
        syy_by_arm=(f0.sxx, f1.sxx),
        k_by_arm=(f0.n, f1.n),
        theta_covariance=cov,
        fits=(f0, f1),
    )


def theta1_significant(cal_fit: SystematicCalibration, alpha: float = 0.05, df: float | None = None) -> bool:
    """Whether ``|theta1_hat| / se`` exceeds the two-sided ``t`` critical value.

    ``df`` defaults to ``k - 2``; the Fieller interval passes the trial's
    ``N - 2`` so that the gate matches the quantile used in its quadratic.
    A perfect calibration (``t2 == 0``) is significant whenever the slope is
    non-zero.
    """
    if not 0.0 < alpha < 1.0:
        raise OutOfDomain(f"alpha must lie in (0, 1), got {alpha}")
    if cal_fit.theta1_hat == 0.0:
        return False
    if cal_fit.t2 == 0.0:
        return True
    df = cal_fit.k - 2 if df is None else df
    stat = abs(cal_fit.theta1_hat) / math.sqrt(cal_fit.t2 / cal_fit.syy)
    return stat > t_quantile(1.0 - alpha / 2.0, df)
