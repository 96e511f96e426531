"""Simple linear regression, variance estimators and t-distribution functions.

Everything here is a pure function of its inputs. Regression results are
frozen dataclasses holding read-only numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from mecor.errors import (
    DegenerateRegressor,
    LengthMismatch,
    NonFiniteInput,
    OutOfDomain,
    TooFewObservations,
    ZeroVariance,
)

__all__ = [
    "RegressionFit",
    "TrialDataset",
    "TDistSpec",
    "as_vector",
    "ols_fit",
    "hc_variance",
    "normal_cdf",
    "normal_quantile",
    "t_pdf",
    "t_cdf",
    "t_sf",
    "t_quantile",
    "noncentral_t_cdf",
    "wald_test",
]

QUANTILE_TOL = 1e-10


def as_vector(values, name: str = "values") -> np.ndarray:
    """Return ``values`` as a read-only 1-d float array, rejecting NaN/inf."""
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise LengthMismatch(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RegressionFit:
    """Least-squares fit of ``y = intercept + slope * x``.

    Variances are the homoscedastic ones, built from ``residual_variance``
    (divisor ``n - 2``). With only two points the fit is exact and all
    variance fields are NaN.
    """

    intercept: float
    slope: float
    residual_variance: float
    slope_variance: float
    intercept_variance: float
    slope_intercept_covariance: float
    residuals: np.ndarray = field(repr=False)
    n: int
    sxx: float
    x_mean: float


@dataclass(frozen=True)
class TrialDataset:
    """Binary treatment indicator and the (possibly error-prone) endpoint."""

    treatment: np.ndarray
    endpoint: np.ndarray

    def __post_init__(self):
        x = as_vector(self.treatment, "treatment")
        y = as_vector(self.endpoint, "endpoint")
        if x.shape != y.shape:
            raise LengthMismatch(
                f"treatment has {x.size} rows but endpoint has {y.size}"
            )
        if x.size < 4:
            raise TooFewObservations(f"a trial needs at least 4 rows, got {x.size}")
        if not np.all((x == 0) | (x == 1)):
            raise OutOfDomain("treatment must be coded 0/1")
        if x.all() or not x.any():
            raise DegenerateRegressor("both treatment arms must be non-empty")
        object.__setattr__(self, "treatment", x)
        object.__setattr__(self, "endpoint", y)

    @property
    def n(self) -> int:
        return int(self.treatment.size)

    def arm(self, x: int) -> np.ndarray:
        return self.endpoint[self.treatment == x]


@dataclass(frozen=True)
class TDistSpec:
    df: float
    noncentrality: float = 0.0

    def __post_init__(self):
        if not (self.df > 0):
            raise OutOfDomain(f"degrees of freedom must be positive, got {self.df}")
        if not math.isfinite(self.noncentrality):
            raise NonFiniteInput("noncentrality must be finite")


def ols_fit(x, y) -> RegressionFit:
    """Fit ``y`` on ``x`` by ordinary least squares.

    Parameters
    ----------
    x, y : array_like
        Equal-length vectors with at least two rows; ``x`` must vary.

    Returns
    -------
    RegressionFit
    """
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    if x.shape != y.shape:
        raise LengthMismatch(f"x has {x.size} rows but y has {y.size}")
    n = x.size
    if n < 2:
        raise TooFewObservations(f"need at least 2 rows, got {n}")
    x_mean = x.mean()
    y_mean = y.mean()
    xc = x - x_mean
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise DegenerateRegressor("all x values are equal")
    slope = float(xc @ (y - y_mean)) / sxx
    intercept = float(y_mean - slope * x_mean)
    residuals = y - intercept - slope * x
    # centring removes the O(eps * |y|) drift so residuals sum to zero
    residuals = residuals - residuals.mean()
    residuals.setflags(write=False)
    if n > 2:
        s2 = float(residuals @ residuals) / (n - 2)
        slope_var = s2 / sxx
        intercept_var = s2 * (1.0 / n + x_mean**2 / sxx)
        cov = -x_mean * s2 / sxx
    else:
        s2 = slope_var = intercept_var = cov = math.nan
    return RegressionFit(
        intercept=intercept,
        slope=slope,
        residual_variance=s2,
        slope_variance=slope_var,
        intercept_variance=intercept_var,
        slope_intercept_covariance=cov,
        residuals=residuals,
        n=n,
        sxx=sxx,
        x_mean=float(x_mean),
    )


def hat_values(x) -> np.ndarray:
    """Leverages of a one-regressor model with intercept."""
    x = as_vector(x, "x")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise DegenerateRegressor("all x values are equal")
    return 1.0 / x.size + xc**2 / sxx


def hc_variance(fit: RegressionFit, x, flavor: str = "HC0") -> float:
    """Heteroscedasticity-consistent variance of the slope.

    ``HC0`` is the White estimator; ``HC3`` divides each squared residual
    by ``(1 - h_i)**2``.
    """
    x = as_vector(x, "x")
    if x.size != fit.n:
        raise LengthMismatch(f"fit has {fit.n} rows but x has {x.size}")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise DegenerateRegressor("all x values are equal")
    w2 = np.asarray(fit.residuals) ** 2
    flavor = flavor.upper()
    if flavor == "HC3":
        h = 1.0 / x.size + xc**2 / sxx
        if np.any(h >= 1.0):
            raise DegenerateRegressor("an observation has leverage 1; HC3 is undefined")
        w2 = w2 / (1.0 - h) ** 2
    elif flavor != "HC0":
        raise OutOfDomain(f"unknown HC flavor {flavor!r}")
    return float(np.sum(xc**2 * w2)) / sxx**2


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise OutOfDomain(f"probability must lie in (0, 1), got {p}")
    return float(special.ndtri(p))


def _check_df(df: float) -> None:
    if not (df > 0) or math.isnan(df):
        raise OutOfDomain(f"degrees of freedom must be positive, got {df}")


def t_pdf(t: float, df: float) -> float:
    _check_df(df)
    logc = special.gammaln((df + 1) / 2) - special.gammaln(df / 2) - 0.5 * math.log(df * math.pi)
    return math.exp(logc - (df + 1) / 2 * math.log1p(t * t / df))


def t_sf(t: float, df: float) -> float:
    """Upper tail ``P(T > t)`` of the central t distribution."""
    _check_df(df)
    if not math.isfinite(t):
        if math.isnan(t):
            raise NonFiniteInput("t is NaN")
        return 0.0 if t > 0 else 1.0
    # P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2)
    tail = 0.5 * float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))
    return tail if t >= 0 else 1.0 - tail


def t_cdf(t: float, df: float) -> float:
    """``P(T <= t)`` of the central t distribution."""
    _check_df(df)
    if math.isnan(t):
        raise NonFiniteInput("t is NaN")
    if not math.isfinite(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))
    return 1.0 - tail if t >= 0 else tail


def t_quantile(p: float, df: float) -> float:
    """Inverse of :func:`t_cdf`.

    Starts from the inverse regularized incomplete beta function and polishes
    with Newton steps on the CDF until ``|cdf(q) - p| < 1e-10``.
    """
    if not 0.0 < p < 1.0:
        raise OutOfDomain(f"probability must lie in (0, 1), got {p}")
    _check_df(df)
    if p == 0.5:
        return 0.0
    lower = p < 0.5
    tail = p if lower else 1.0 - p
    x = float(special.betaincinv(df / 2.0, 0.5, 2.0 * tail))
    q = math.sqrt(df * (1.0 - x) / x) if x > 0 else math.inf
    q = -q if lower else q
    if not math.isfinite(q):
        q = math.copysign(1e300, q)
    for _ in range(50):
        err = t_cdf(q, df) - p
        if abs(err) < QUANTILE_TOL:
            break
        dens = t_pdf(q, df)
        if dens <= 0.0:
            break
        q -= err / dens
    return q


def noncentral_t_cdf(t: float, spec: TDistSpec) -> float:
    """``P(T <= t)`` for a (possibly noncentral) t distribution."""
    if not math.isfinite(t):
        if math.isnan(t):
            raise NonFiniteInput("t is NaN")
        return 1.0 if t > 0 else 0.0
    if spec.noncentrality == 0.0:
        return t_cdf(t, spec.df)
    val = float(special.nctdtr(spec.df, spec.noncentrality, t))
    if not math.isfinite(val):
        # nctdtr can return NaN deep in a tail; P(T <= t) = 1 - P(T' <= -t) with T' ~ nct(df, -ncp)
        val = 1.0 - float(special.nctdtr(spec.df, -spec.noncentrality, -t))
    if not math.isfinite(val):
        raise NonFiniteInput(f"noncentral t CDF did not converge at t={t}, ncp={spec.noncentrality}")
    return min(1.0, max(0.0, val))


def wald_test(
    fit: RegressionFit, null_value: float, variance: float, df: float
) -> tuple[float, float]:
    """Two-sided t test of ``slope == null_value``.

    Returns ``(statistic, p_value)``.
    """
    if not (variance > 0):
        raise ZeroVariance(f"variance must be positive, got {variance}")
    stat = (fit.slope - null_value) / math.sqrt(variance)
    p = min(1.0, 2.0 * t_sf(abs(stat), df))
    return stat, p
