import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mecor.error_models import Classical, Differential, Heteroscedastic, PrognosticFactor, Systematic
from mecor.errors import ConfigInvalid, TooFewRows
from mecor.simulation import (
    ReplicateRow,
    ScenarioConfig,
    aggregate,
    parse_config,
    run_illustration,
    run_prognostic_check,
    run_replicate,
    run_scenario,
    simulate_data,
)


def rows_from(estimates, lower=None, upper=None, defined=None, method="Delta"):
    n = len(estimates)
    lower = lower if lower is not None else [e - 1 for e in estimates]
    upper = upper if upper is not None else [e + 1 for e in estimates]
    defined = defined if defined is not None else [True] * n
    return [ReplicateRow(i, "corrected", method, e, lo, hi, d, 1.0)
            for i, (e, lo, hi, d) in enumerate(zip(estimates, lower, upper, defined))]


def test_aggregate_hand_example():
    m = aggregate(rows_from([5.9, 7.9]), 6.9).get("corrected")
    assert m.pct_bias == pytest.approx(0.0, abs=1e-12)
    assert m.emp_se == pytest.approx(math.sqrt(2.0))
    assert m.sqrt_mse == pytest.approx(1.0)
    assert m.mc_se_bias == pytest.approx(1.0)
    assert m.mc_se_empse == pytest.approx(math.sqrt(2.0) / 2.0)


def test_aggregate_exact_estimates():
    m = aggregate(rows_from([6.9] * 5), 6.9).get("corrected")
    assert (m.pct_bias, m.emp_se, m.sqrt_mse) == (0.0, 0.0, 0.0)
    assert m.coverage == 1.0 and m.type2_error == 0.0


def test_mc_se_coverage_formula():
    est = [0.0] * 10_000
    lower = [-1.0] * 9_500 + [0.5] * 500
    m = aggregate(rows_from(est, lower=lower, upper=[1.0] * 10_000), 0.0).get("corrected")
    assert m.coverage == pytest.approx(0.95)
    assert m.mc_se_coverage == pytest.approx(0.00218, abs=1e-5)
    assert m.type1_error == pytest.approx(0.05) and m.type2_error is None


def test_mc_se_mse_formula():
    est = np.array([6.0, 7.5, 8.1, 6.6])
    sq = (est - 6.9) ** 2
    expect = math.sqrt(np.sum((sq - sq.mean()) ** 2) / (3 * 4))
    assert aggregate(rows_from(list(est)), 6.9).get("corrected").mc_se_mse == pytest.approx(expect)


def test_too_few_rows():
    with pytest.raises(TooFewRows):
        aggregate(rows_from([1.0]), 1.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=50), st.floats(0.5, 20))
def test_bias_variance_decomposition(estimates, truth):
    m = aggregate(rows_from(estimates), truth).get("corrected")
    n = len(estimates)
    assert m.sqrt_mse**2 >= m.emp_se**2 * (n - 1) / n - 1e-9 * (1 + m.sqrt_mse**2)
    if m.coverage is not None:
        assert 0.0 <= m.coverage <= 1.0


@pytest.mark.parametrize("n_fail,suppressed", [(5, False), (6, True)])
def test_fieller_reporting_gate(n_fail, suppressed):
    defined = [False] * n_fail + [True] * (100 - n_fail)
    m = aggregate(rows_from([7.0] * 100, defined=defined, method="Fieller"), 6.9).get("corrected", "Fieller")
    assert m.fieller_failure_rate == pytest.approx(n_fail / 100)
    assert (m.coverage is None) == suppressed
    assert (m.avg_ci_width is None) == suppressed


def small_cfg(**kw):
    base = dict(error_model=Systematic(0, 1.05), r2_target=0.8, k_calibration=10, n_total=40,
                n_replicates=12, seed=3, bootstrap_b=100)
    base.update(kw)
    return ScenarioConfig(**base)


def test_thread_count_does_not_change_results():
    cfg = small_cfg()
    one = run_scenario(cfg, threads=1)
    many = run_scenario(cfg, threads=5)
    assert one.replicates == many.replicates
    assert one.rows == many.rows


def test_replicates_are_independent_units():
    cfg = small_cfg()
    full = run_scenario(cfg).replicates
    assert [r for r in full if r.replicate_id == 7] == run_replicate(cfg, 7)


def test_same_seed_coupling():
    noisy = small_cfg(error_model=Classical(5.0), r2_target=None)
    clean = small_cfg(error_model=Classical(0.0), r2_target=None)
    for rep in range(4):
        true_n, obs_n, _, _ = simulate_data(noisy, rep)
        true_c, obs_c, _, _ = simulate_data(clean, rep)
        assert np.array_equal(true_n.endpoint, true_c.endpoint)
        assert np.array_equal(obs_c.endpoint, true_c.endpoint)
        assert not np.array_equal(obs_n.endpoint, true_n.endpoint)
    naive_clean = [r.estimate for r in run_scenario(clean).replicates if r.estimator == "naive"]
    truth = [np.mean(simulate_data(clean, i)[0].arm(1)) - np.mean(simulate_data(clean, i)[0].arm(0))
             for i in range(clean.n_replicates)]
    assert naive_clean == pytest.approx(truth, abs=1e-10)


def test_calibration_design():
    sys_cfg = small_cfg(k_calibration=12)
    _, _, cal, _ = simulate_data(sys_cfg, 0)
    assert cal.k == 12 and cal.treatment is None
    diff_cfg = small_cfg(error_model=Differential(theta11=1.05), k_calibration=12, methods=("delta",))
    _, _, pilot, _ = simulate_data(diff_cfg, 0)
    assert list(pilot.treatment) == [0.0] * 6 + [1.0] * 6


def test_no_error_limit():
    cfg = ScenarioConfig(Classical(0.0), n_replicates=400, seed=11, methods=())
    m = run_scenario(cfg).get("naive")
    assert abs(m.pct_bias) < 3 * 100 * m.mc_se_bias / 6.9
    assert abs(m.coverage - 0.95) < 3 * m.mc_se_coverage


def test_resolved_error_model():
    cfg = small_cfg(error_model=Differential(0, 0, 1, 1.05), r2_target=0.8)
    m = cfg.resolved_error_model()
    assert (m.tau0, m.tau1) == pytest.approx((6.3, 6.615))
    h = small_cfg(error_model=Heteroscedastic(1, 2), methods=("delta",)).resolved_error_model()
    assert h.tau0 == h.tau1 == pytest.approx(6.3)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(error_model=Differential(theta11=1.05), k_calibration=11, methods=("delta",)),
        dict(error_model=Differential(theta11=1.05), methods=("fieller",)),
        dict(k_calibration=40),
        dict(k_calibration=2),
        dict(n_total=41),
        dict(n_replicates=1),
        dict(alpha=1.5),
        dict(methods=("jackknife",)),
        dict(bootstrap_b=10),
        dict(r2_target=0.0),
        dict(error_model=PrognosticFactor()),
    ],
)
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigInvalid):
        small_cfg(**kwargs)


def test_parse_config_round_trip():
    text = """
    # comment
    name = demo
    error_model = differential
    theta10 = 1
    theta11 = 1.05   # active arm
    r2 = 0.8
    k_calibration = 10
    replicates = 5
    seed = 9
    methods = zero-variance, delta
    """
    cfg = parse_config(text)
    assert cfg.name == "demo" and cfg.n_replicates == 5 and cfg.seed == 9
    assert cfg.error_model == Differential(theta11=1.05)
    assert cfg.methods == ("zero-variance", "delta")
    assert parse_config("error_model = systematic\ntheta1 = 1.05\n").methods[2] == "fieller"
    assert parse_config("error_model = differential\n").methods == ("zero-variance", "delta", "bootstrap")


@pytest.mark.parametrize(
    "text",
    [
        "error_model = wobbly\n",
        "theta1 = 1.05\n",
        "error_model = systematic\nbogus = 1\n",
        "error_model = systematic\nk_calibration = ten\n",
        "error_model = systematic\nk_calibration = 10\nk_calibration = 12\n",
        "error_model = systematic\njust some words\n",
        "error_model = systematic\ntheta1 = 0\n",
        "error_model = classical\ntheta1 = 2\n",
    ],
)
def test_parse_config_errors(text):
    with pytest.raises(ConfigInvalid):
        parse_config(text)


def test_digest_is_stable_and_sensitive():
    a, b = small_cfg(), small_cfg()
    assert a.digest() == b.digest()
    assert dataclasses.replace(a, seed=4).digest() != a.digest()


@pytest.mark.slow
def test_type1_under_systematic_and_differential_null():
    sys_cfg = ScenarioConfig(Systematic(0, 1.05), beta_y=0.0, r2_target=0.8, n_replicates=2000, seed=21,
                             methods=("zero-variance", "delta"))
    diff_cfg = ScenarioConfig(Differential(0, 0, 1, 1.05), beta_y=0.0, r2_target=0.8, n_replicates=2000, seed=21,
                              methods=("zero-variance",))
    sys_naive = run_scenario(sys_cfg).get("naive")
    se = math.sqrt(0.05 * 0.95 / 2000)
    assert abs(sys_naive.type1_error - 0.05) < 2 * se
    assert math.isnan(sys_naive.pct_bias)
    diff_naive = run_scenario(diff_cfg).get("naive")
    assert diff_naive.type1_error > 0.5


def test_illustration_reports():
    rep = run_illustration("Systematic", replicates=3000, seed=1)
    assert rep.wald_null.shape == rep.wald_alternative.shape == (3000,)
    assert rep.mean_estimate == pytest.approx(7.245, abs=0.2)
    none = run_illustration("NoError", replicates=3000, seed=1)
    assert none.variance_inflation == 0.0
    with pytest.raises(ConfigInvalid):
        run_illustration("Nonsense", replicates=10)


def test_illustration_classical_variance_inflation():
    # error SD is 0.75 sigma, so the between-replicate variance grows by 56%
    rep = run_illustration("Classical", replicates=20_000, seed=2)
    assert rep.variance_inflation == pytest.approx(0.5625, abs=0.05)


def test_prognostic_without_factor_effects_agree():
    rep = run_prognostic_check(PrognosticFactor(zeta=0.0, gamma_y=0.0), replicates=3000, seed=4)
    se = math.sqrt(rep.naive_empvar / 3000)
    assert abs(rep.naive_mean - 6.9) < 4 * se
    assert abs(rep.conditional_mean - 6.9) < 4 * se
    assert rep.conditional_empvar == pytest.approx(rep.naive_empvar, rel=0.03)


@pytest.mark.slow
def test_prognostic_doubling_zeta_keeps_naive_unbiased():
    rep = run_prognostic_check(PrognosticFactor(zeta=1.0), replicates=10_000, seed=5)
    assert abs(rep.naive_mean - 6.9) < 3 * math.sqrt(rep.naive_empvar / 10_000)
