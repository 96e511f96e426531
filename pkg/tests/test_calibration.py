import numpy as np
import pytest

from mecor.calibration import CalibrationDataset, fit_differential, fit_systematic, theta1_significant
from mecor.errors import DegenerateCalibration, LengthMismatch, MissingTreatment, OutOfDomain, TooFewObservations


def test_noiseless_systematic_recovers_parameters():
    y = np.array([110.0, 118.5, 121.0, 133.2, 125.1])
    fit = fit_systematic(CalibrationDataset(y, 3.0 + 1.05 * y))
    assert fit.theta1_hat == pytest.approx(1.05, abs=1e-12)
    assert fit.theta0_hat == pytest.approx(3.0, abs=1e-9)
    assert fit.t2 == pytest.approx(0.0, abs=1e-20)
    assert fit.k == 5
    assert fit.syy == pytest.approx(np.sum((y - y.mean()) ** 2))


def test_differential_fit_per_arm():
    y = np.array([100.0, 110, 120, 105, 115, 125])
    x = np.array([0.0, 0, 0, 1, 1, 1])
    obs = np.where(x == 1, 2.0 + 1.2 * y, -1.0 + 0.9 * y)
    fit = fit_differential(CalibrationDataset(y, obs, x))
    assert (fit.theta00_hat, fit.theta10_hat) == pytest.approx((-1.0, 0.9))
    assert (fit.theta01_hat, fit.theta11_hat) == pytest.approx((2.0, 1.2))
    assert fit.k_by_arm == (3, 3)
    assert fit.intercept(1) == fit.theta01_hat and fit.slope(0) == fit.theta10_hat


def test_differential_covariance_is_block_diagonal():
    rng = np.random.default_rng(4)
    x = np.repeat([0.0, 1.0], 10)
    y = 120 + 12 * rng.standard_normal(20)
    obs = y + 5 * rng.standard_normal(20)
    fit = fit_differential(CalibrationDataset(y, obs, x))
    cov = fit.theta_covariance
    assert np.allclose(cov, cov.T)
    assert np.all(cov[:2, 2:] == 0) and np.all(cov[2:, :2] == 0)
    assert cov[1, 1] == pytest.approx(fit.fits[0].slope_variance)
    assert cov[3, 3] == pytest.approx(fit.fits[1].slope_variance)
    assert np.all(np.linalg.eigvalsh(cov) >= -1e-12)


def test_degenerate_inputs():
    with pytest.raises(DegenerateCalibration):
        fit_systematic(CalibrationDataset([5.0, 5.0, 5.0, 5.0], [1.0, 2.0, 3.0, 4.0]))
    with pytest.raises(TooFewObservations):
        fit_systematic(CalibrationDataset([1.0, 2.0], [1.0, 2.0]))
    with pytest.raises(MissingTreatment):
        fit_differential(CalibrationDataset([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]))
    with pytest.raises(TooFewObservations):
        fit_differential(CalibrationDataset([1.0, 2, 3, 4, 5], [1.0, 2, 3, 4, 5], [0, 0, 1, 1, 1]))
    with pytest.raises(LengthMismatch):
        CalibrationDataset([1.0, 2.0], [1.0])
    with pytest.raises(OutOfDomain):
        CalibrationDataset([1.0, 2.0], [1.0, 2.0], [0, 3])


def test_theta1_significance_gate():
    rng = np.random.default_rng(9)
    y = 120 + 12.6 * rng.standard_normal(7)
    noisy = fit_systematic(CalibrationDataset(y, 1.05 * y + 40 * rng.standard_normal(7)))
    exact = fit_systematic(CalibrationDataset(y, 1.05 * y))
    assert theta1_significant(exact)
    stat = abs(noisy.theta1_hat) / np.sqrt(noisy.t2 / noisy.syy)
    # the K-2 quantile is larger, so passing with it implies passing with N-2
    assert theta1_significant(noisy) <= theta1_significant(noisy, df=398)
    assert theta1_significant(noisy, df=398) == (stat > 1.9659)
    with pytest.raises(OutOfDomain):
        theta1_significant(noisy, alpha=1.5)
