"""Naive and measurement-error corrected treatment-effect estimators.

Corrected estimators divide out the calibration slope(s). Four interval
constructions are provided: zero-variance (calibration treated as known),
Delta method, Fieller (systematic error only) and a nonparametric
percentile bootstrap. All Wald-type intervals use ``t`` with ``N - 2``
degrees of freedom from the trial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from mecor.calibration import (
    CalibrationDataset,
    DifferentialCalibration,
    SystematicCalibration,
    theta1_significant,
)
from mecor.errors import (
    DegenerateRegressor,
    MissingTreatment,
    OutOfDomain,
    ThetaOneZero,
    ThetaZero,
    ZeroSE,
)
from mecor.stats_core import (
    TDistSpec,
    TrialDataset,
    hc_variance,
    noncentral_t_cdf,
    ols_fit,
    t_quantile,
)

__all__ = [
    "CorrectedEstimate",
    "IntervalResult",
    "naive_estimate",
    "correct_systematic",
    "correct_differential",
    "ci_zero_variance",
    "ci_delta",
    "ci_fieller",
    "ci_bootstrap",
    "percentile_ranks",
    "percentile_interval",
    "power_type2",
    "sample_size_inflation",
    "solve_sample_size",
]

NAIVE = "Naive"
SYSTEMATIC = "SystematicCorrected"
DIFFERENTIAL = "DifferentialCorrected"

FIELLER_UNBOUNDED = "FiellerUnbounded"
DEGENERATE_BOOTSTRAP = "DegenerateBootstrap"


@dataclass(frozen=True)
class CorrectedEstimate:
    """Point estimates of ``alpha_Y`` and ``beta_Y`` plus the plug-ins behind them.

    ``trial`` and ``calibration`` are kept so interval builders can reuse
    them without the caller threading them through again.
    """

    alpha_hat: float
    beta_hat: float
    method: str
    components: dict = field(default_factory=dict)
    trial: TrialDataset | None = field(default=None, repr=False)
    calibration: SystematicCalibration | DifferentialCalibration | None = field(default=None, repr=False)


@dataclass(frozen=True)
class IntervalResult:
    lower: float
    upper: float
    level: float
    method: str
    defined: bool = True
    failure_reason: str | None = None
    n_replicates: int | None = None
    n_dropped: int = 0

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.defined and self.lower <= value <= self.upper


def _check_level(level: float) -> None:
    if not 0.0 < level < 1.0:
        raise OutOfDomain(f"level must lie in (0, 1), got {level}")


def _wald(center: float, variance: float, df: float, level: float, method: str) -> IntervalResult:
    _check_level(level)
    tq = t_quantile(0.5 + level / 2.0, df)
    half = tq * math.sqrt(variance)
    return IntervalResult(center - half, center + half, level, method)


def _arm_variances(trial: TrialDataset) -> tuple[tuple[float, float], tuple[int, int]]:
    s2, n = [], []
    for x in (0, 1):
        y = trial.arm(x)
        if y.size < 2:
            raise DegenerateRegressor(f"trial arm {x} needs at least 2 rows")
        s2.append(float(np.var(y, ddof=1)))
        n.append(int(y.size))
    return (s2[0], s2[1]), (n[0], n[1])


def naive_estimate(
    trial: TrialDataset, variance_flavor: str = "homoscedastic", level: float = 0.95
) -> tuple[CorrectedEstimate, IntervalResult]:
    """Regress the observed endpoint on treatment, ignoring measurement error.

    ``variance_flavor`` is ``"homoscedastic"``, ``"HC0"`` or ``"HC3"``.
    """
    fit = ols_fit(trial.treatment, trial.endpoint)
    if variance_flavor.lower() == "homoscedastic":
        var = fit.slope_variance
    else:
        var = hc_variance(fit, trial.treatment, variance_flavor)
    est = CorrectedEstimate(
        alpha_hat=fit.intercept,
        beta_hat=fit.slope,
        method=NAIVE,
        components={
            "beta_star": fit.slope,
            "alpha_star": fit.intercept,
            "s2": fit.residual_variance,
            "sxx": fit.sxx,
            "n": fit.n,
            "slope_variance": var,
            "variance_flavor": variance_flavor,
        },
        trial=trial,
    )
    return est, _wald(fit.slope, var, fit.n - 2, level, "NaiveWald")


def correct_systematic(trial: TrialDataset, cal: SystematicCalibration) -> CorrectedEstimate:
    """Divide the naive estimates by the calibration slope."""
    if cal.theta1_hat == 0.0:
        raise ThetaOneZero("estimated theta1 is exactly zero")
    fit = ols_fit(trial.treatment, trial.endpoint)
    theta0, theta1 = cal.theta0_hat, cal.theta1_hat
    return CorrectedEstimate(
        alpha_hat=(fit.intercept - theta0) / theta1,
        beta_hat=fit.slope / theta1,
        method=SYSTEMATIC,
        components={
            "beta_star": fit.slope,
            "alpha_star": fit.intercept,
            "theta0": theta0,
            "theta1": theta1,
            "s2": fit.residual_variance,
            "t2": cal.t2,
            "sxx": fit.sxx,
            "syy": cal.syy,
            "n": fit.n,
            "k": cal.k,
        },
        trial=trial,
        calibration=cal,
    )


def correct_differential(trial: TrialDataset, cal: DifferentialCalibration) -> CorrectedEstimate:
    """Invert the arm-specific error models.

    ``alpha = (alpha* - theta00) / theta10`` and
    ``beta = (beta* + alpha* - theta01) / theta11 - alpha``.
    """
    if cal.theta10_hat == 0.0 or cal.theta11_hat == 0.0:
        raise ThetaZero("an estimated arm slope (theta10 or theta11) is exactly zero")
    fit = ols_fit(trial.treatment, trial.endpoint)
    a_star, b_star = fit.intercept, fit.slope
    alpha = (a_star - cal.theta00_hat) / cal.theta10_hat
    beta = (b_star + a_star - cal.theta01_hat) / cal.theta11_hat - alpha
    s2_arm, n_arm = _arm_variances(trial)
    return CorrectedEstimate(
        alpha_hat=alpha,
        beta_hat=beta,
        method=DIFFERENTIAL,
        components={
            "beta_star": b_star,
            "alpha_star": a_star,
            "theta00": cal.theta00_hat,
            "theta01": cal.theta01_hat,
            "theta10": cal.theta10_hat,
            "theta11": cal.theta11_hat,
            "t2_0": cal.t2_by_arm[0],
            "t2_1": cal.t2_by_arm[1],
            "syy_0": cal.syy_by_arm[0],
            "syy_1": cal.syy_by_arm[1],
            "s2_0": s2_arm[0],
            "s2_1": s2_arm[1],
            "n_0": n_arm[0],
            "n_1": n_arm[1],
            "sxx": fit.sxx,
            "n": fit.n,
        },
        trial=trial,
        calibration=cal,
    )


def ci_zero_variance(est: CorrectedEstimate, level: float = 0.95) -> IntervalResult:
    """Wald interval treating the estimated error parameters as known."""
    c = est.components
    n = c["n"]
    if est.method == SYSTEMATIC:
        var = (c["s2"] / c["theta1"] ** 2) / c["sxx"]
    elif est.method == DIFFERENTIAL:
        trial, cal = est.trial, est.calibration
        x = trial.treatment
        arm1 = x == 1
        adjusted = np.where(
            arm1,
            (trial.endpoint - cal.theta01_hat) / cal.theta11_hat,
            (trial.endpoint - cal.theta00_hat) / cal.theta10_hat,
        )
        var = hc_variance(ols_fit(x, adjusted), x, "HC3")
    elif est.method == NAIVE:
        var = c["slope_variance"]
    else:
        raise OutOfDomain(f"unknown estimate method {est.method!r}")
    return _wald(est.beta_hat, var, n - 2, level, "ZeroVariance")


def delta_variance(est: CorrectedEstimate) -> float:
    """First-order Taylor variance of the corrected slope, with plug-ins."""
    c = est.components
    if est.method == SYSTEMATIC:
        return (c["s2"] / c["sxx"] + est.beta_hat**2 * c["t2"] / c["syy"]) / c["theta1"] ** 2
    if est.method != DIFFERENTIAL:
        raise OutOfDomain(f"Delta method needs a corrected estimate, got {est.method!r}")
    cal = est.calibration
    f0, f1 = cal.fits
    a, b = est.alpha_hat, est.beta_hat
    var_a_star = c["s2_0"] / c["n_0"]
    var_b_star = c["s2_1"] / c["n_1"] + c["s2_0"] / c["n_0"]
    cov_ab_star = -c["s2_0"] / c["n_0"]
    var_alpha = (
        var_a_star
        + a**2 * f0.slope_variance
        + f0.intercept_variance
        + 2.0 * a * f0.slope_intercept_covariance
    ) / c["theta10"] ** 2
    var_beta = (
        (b + a) ** 2 * f1.slope_variance
        + var_b_star
        + var_a_star
        + 2.0 * cov_ab_star
        + f1.intercept_variance
        + 2.0 * (b + a) * f1.slope_intercept_covariance
    ) / c["theta11"] ** 2 + var_alpha
    return var_beta


def ci_delta(est: CorrectedEstimate, cal=None, level: float = 0.95) -> IntervalResult:
    """Delta-method Wald interval around the corrected slope.

    ``cal`` is accepted for symmetry with the other builders; the estimate
    already carries its calibration fit.
    """
    if cal is not None and cal is not est.calibration:
        est = CorrectedEstimate(est.alpha_hat, est.beta_hat, est.method, est.components, est.trial, cal)
    return _wald(est.beta_hat, delta_variance(est), est.components["n"] - 2, level, "Delta")


def fieller_roots(
    beta_star: float, var_beta_star: float, theta1: float, var_theta1: float, tq: float
) -> tuple[float, float] | None:
    """Roots of ``(V_t tq^2 - theta1^2) b^2 + 2 beta* theta1 b + (V_b tq^2 - beta*^2) = 0``.

    Returns ``None`` unless the leading coefficient is negative, i.e. the
    set of accepted ``b`` is a bounded interval.
    """
    a = var_theta1 * tq**2 - theta1**2
    if not a < 0.0:
        return None
    half_b = beta_star * theta1
    c = var_beta_star * tq**2 - beta_star**2
    disc = half_b**2 - a * c
    root = math.sqrt(max(disc, 0.0))
    r1 = (-half_b + root) / a
    r2 = (-half_b - root) / a
    return (min(r1, r2), max(r1, r2))


def ci_fieller(est: CorrectedEstimate, cal: SystematicCalibration | None = None, level: float = 0.95) -> IntervalResult:
    """Fieller interval for the ratio ``beta* / theta1``.

    Undefined (``FiellerUnbounded``) when the calibration slope is not
    significantly different from zero at ``t_{N-2}``.
    """
    if est.method != SYSTEMATIC:
        raise OutOfDomain("Fieller intervals are only defined for systematic correction")
    _check_level(level)
    cal = est.calibration if cal is None else cal
    c = est.components
    df = c["n"] - 2
    alpha = 1.0 - level
    if not theta1_significant(cal, alpha, df=df):
        return IntervalResult(math.nan, math.nan, level, "Fieller", False, FIELLER_UNBOUNDED)
    tq = t_quantile(1.0 - alpha / 2.0, df)
    roots = fieller_roots(c["beta_star"], c["s2"] / c["sxx"], cal.theta1_hat, cal.t2 / cal.syy, tq)
    if roots is None:
        return IntervalResult(math.nan, math.nan, level, "Fieller", False, FIELLER_UNBOUNDED)
    return IntervalResult(roots[0], roots[1], level, "Fieller")


def percentile_ranks(b: int, level: float) -> tuple[int, int]:
    """1-based order-statistic ranks of the percentile interval.

    Lower rank ``ceil(a/2 (B+1))``, upper rank ``floor((1-a/2)(B+1))``,
    clamped to ``[1, B]``. For ``B = 999`` and 95% this gives 25 and 975.
    """
    a = 1.0 - level
    # rounding guards against 0.025 * 1000 evaluating to 25.000000000000004
    lo = math.ceil(round(a / 2.0 * (b + 1), 9))
    hi = math.floor(round((1.0 - a / 2.0) * (b + 1), 9))
    return min(max(lo, 1), b), min(max(hi, 1), b)


def percentile_interval(values, level: float = 0.95) -> tuple[float, float]:
    v = np.sort(np.asarray(values, dtype=float))
    lo, hi = percentile_ranks(v.size, level)
    return float(v[lo - 1]), float(v[hi - 1])


def _resampled_slopes(x: np.ndarray, y: np.ndarray, idx: np.ndarray):
    """OLS intercepts and slopes for each row of resampling indices.

    Rows where the resampled ``x`` is constant get NaN.
    """
    xs = x[idx]
    ys = y[idx]
    xc = xs - xs.mean(axis=1, keepdims=True)
    sxx = np.einsum("ij,ij->i", xc, xc)
    sxy = np.einsum("ij,ij->i", xc, ys)
    ok = np.ptp(xs, axis=1) > 0
    slope = np.full(idx.shape[0], np.nan)
    slope[ok] = sxy[ok] / sxx[ok]
    intercept = ys.mean(axis=1) - slope * xs.mean(axis=1)
    return intercept, slope


def bootstrap_replicates(
    trial: TrialDataset,
    raw_cal: CalibrationDataset,
    spec: Literal["systematic", "differential"],
    b: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Corrected slopes from ``b`` joint resamples of calibration and trial data.

    Replicates whose resampled calibration set cannot identify the error
    model (constant ``y_true``, or a zero slope) are returned as NaN.
    """
    x, y = trial.treatment, trial.endpoint
    if spec == "systematic":
        k = raw_cal.k
        cal_idx = rng.integers(0, k, size=(b, k))
        trial_idx = rng.integers(0, trial.n, size=(b, trial.n))
        _, theta1 = _resampled_slopes(raw_cal.y_true, raw_cal.y_observed, cal_idx)
        _, beta_star = _resampled_slopes(x, y, trial_idx)
        theta1[theta1 == 0.0] = np.nan
        return beta_star / theta1
    if spec == "differential":
        if raw_cal.treatment is None:
            raise MissingTreatment("differential bootstrap needs a treatment column")
        theta0, theta1 = [], []
        for arm in (0, 1):
            mask = raw_cal.treatment == arm
            yt, yo = raw_cal.y_true[mask], raw_cal.y_observed[mask]
            idx = rng.integers(0, yt.size, size=(b, yt.size))
            i0, s0 = _resampled_slopes(yt, yo, idx)
            s0[s0 == 0.0] = np.nan
            theta0.append(i0)
            theta1.append(s0)
        trial_idx = rng.integers(0, trial.n, size=(b, trial.n))
        a_star, b_star = _resampled_slopes(x, y, trial_idx)
        alpha = (a_star - theta0[0]) / theta1[0]
        return (b_star + a_star - theta0[1]) / theta1[1] - alpha
    raise OutOfDomain(f"unknown correction spec {spec!r}")


def ci_bootstrap(
    trial: TrialDataset,
    raw_cal: CalibrationDataset,
    spec: Literal["systematic", "differential"] = "systematic",
    level: float = 0.95,
    b: int = 999,
    rng: np.random.Generator | None = None,
) -> IntervalResult:
    """Nonparametric percentile bootstrap interval for the corrected slope.

    Calibration and trial data are resampled independently (the pilot is
    resampled within arm for ``"differential"``). Degenerate replicates are
    dropped and counted; if more than half are dropped the interval is
    reported as undefined.
    """
    _check_level(level)
    if b < 100:
        raise OutOfDomain(f"need at least 100 bootstrap replicates, got {b}")
    if rng is None:
        rng = np.random.default_rng()
    reps = bootstrap_replicates(trial, raw_cal, spec, b, rng)
    kept = reps[np.isfinite(reps)]
    dropped = b - kept.size
    if dropped > b / 2:
        return IntervalResult(
            math.nan, math.nan, level, "Bootstrap", False, DEGENERATE_BOOTSTRAP, kept.size, dropped
        )
    lo, hi = percentile_interval(kept, level)
    return IntervalResult(lo, hi, level, "Bootstrap", True, None, kept.size, dropped)


def power_type2(effect: float, se: float, df: float, alpha: float = 0.05) -> float:
    """Type-II error of the two-sided Wald t test.

    ``P(|T| < t_{1-alpha/2, df})`` with ``T`` noncentral t, noncentrality
    ``effect / se``.
    """
    if not se > 0:
        raise ZeroSE(f"standard error must be positive, got {se}")
    if not 0.0 < alpha < 1.0:
        raise OutOfDomain(f"alpha must lie in (0, 1), got {alpha}")
    tq = t_quantile(1.0 - alpha / 2.0, df)
    spec = TDistSpec(df, effect / se)
    return noncentral_t_cdf(tq, spec) - noncentral_t_cdf(-tq, spec)


def sample_size_inflation(n: int, reliability: float) -> int:
    """Sample size ``ceil(n / R)`` compensating for classical error."""
    if not 0.0 < reliability <= 1.0:
        raise OutOfDomain(f"reliability must lie in (0, 1], got {reliability}")
    # rounding first keeps 108 / 0.8 from landing at 135.00000000000003
    return math.ceil(round(n / reliability, 9))


def two_arm_se(sd: float, n_total: int) -> float:
    """Standard error of a difference in means with ``n_total / 2`` per arm."""
    return sd * math.sqrt(4.0 / n_total)


def solve_sample_size(
    effect: float,
    sd: float,
    target_type2: float = 0.20,
    alpha: float = 0.05,
    reliability: float = 1.0,
    n_max: int = 10_000_000,
) -> int:
    """Smallest total trial size whose Type-II error is at most ``target_type2``.

    The observed-endpoint SD is ``sd / sqrt(reliability)``; arms are equal
    and the test has ``N - 2`` degrees of freedom.
    """
    if not 0.0 < reliability <= 1.0:
        raise OutOfDomain(f"reliability must lie in (0, 1], got {reliability}")
    if not 0.0 < target_type2 < 1.0:
        raise OutOfDomain(f"target_type2 must lie in (0, 1), got {target_type2}")
    if not sd > 0:
        raise ZeroSE(f"sd must be positive, got {sd}")
    sd_obs = sd / math.sqrt(reliability)

    def type2(n):
        return power_type2(effect, two_arm_se(sd_obs, n), n - 2, alpha)

    lo, hi = 4, 4
    while type2(hi) > target_type2:
        lo, hi = hi, hi * 2
        if hi > n_max:
            raise OutOfDomain("target Type-II error not reachable below n_max")
    while lo < hi:
        mid = (lo + hi) // 2
        if type2(mid) <= target_type2:
            hi = mid
        else:
            lo = mid + 1
    return hi
