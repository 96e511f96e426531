"""Monte Carlo study of the naive and corrected estimators.

Each replicate draws its random numbers from ``SeedSequence(seed,
spawn_key=(replicate,))`` split into four substreams (trial, contamination,
calibration, bootstrap). Replicates are therefore independent work units and
results do not depend on how they are scheduled over threads.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mecor.calibration import CalibrationDataset, fit_differential, fit_systematic
from mecor.correction import (
    ci_bootstrap,
    ci_delta,
    ci_fieller,
    ci_zero_variance,
    correct_differential,
    correct_systematic,
    naive_estimate,
)
from mecor.error_models import (
    Classical,
    Differential,
    ErrorModelSpec,
    Heteroscedastic,
    PrognosticFactor,
    Systematic,
    TrialGenerator,
    contaminate,
    generate_true,
    tau_from_r2,
    treatment_vector,
)
from mecor.errors import ConfigInvalid, ThetaZero, TooFewRows
from mecor.stats_core import TrialDataset, t_quantile

__all__ = [
    "METHODS",
    "ILLUSTRATION_VARIANTS",
    "ScenarioConfig",
    "ReplicateRow",
    "MetricsRow",
    "MetricsReport",
    "replicate_streams",
    "simulate_data",
    "run_replicate",
    "run_scenario",
    "aggregate",
    "performance",
    "IllustrationReport",
    "run_illustration",
    "PrognosticReport",
    "run_prognostic_check",
    "parse_config",
]

METHODS = ("zero-variance", "delta", "fieller", "bootstrap")
METHOD_LABELS = {
    "zero-variance": "ZeroVariance",
    "delta": "Delta",
    "fieller": "Fieller",
    "bootstrap": "Bootstrap",
}
FIELLER_REPORT_LIMIT = 0.05


def correction_kind(model: ErrorModelSpec) -> str:
    if isinstance(model, (Classical, Systematic)):
        return "systematic"
    if isinstance(model, (Differential, Heteroscedastic)):
        return "differential"
    raise ConfigInvalid(f"{type(model).__name__} scenarios are not supported by run_scenario")


@dataclass(frozen=True)
class ScenarioConfig:
    """One cell of the simulation grid.

    When ``r2_target`` is set, the error SDs of ``error_model`` are replaced by
    the values implied by that ``R^2`` (see :func:`tau_from_r2`).
    """

    error_model: ErrorModelSpec
    name: str = "scenario"
    n_total: int = 400
    k_calibration: int = 50
    alpha_y: float = 120.0
    beta_y: float = 6.9
    sigma: float = 12.6
    r2_target: float | None = None
    n_replicates: int = 2000
    alpha: float = 0.05
    bootstrap_b: int = 999
    seed: int = 0
    methods: tuple[str, ...] | None = None

    def __post_init__(self):
        kind = correction_kind(self.error_model)
        if self.methods is None:
            # Fieller needs a single calibration slope
            default = METHODS if kind == "systematic" else tuple(m for m in METHODS if m != "fieller")
            object.__setattr__(self, "methods", default)
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.n_total < 4 or self.n_total % 2:
            raise ConfigInvalid(f"n_total must be an even number >= 4, got {self.n_total}")
        if not 3 <= self.k_calibration < self.n_total:
            raise ConfigInvalid(f"k_calibration must satisfy 3 <= K < N, got {self.k_calibration}")
        if kind == "differential" and (self.k_calibration % 2 or self.k_calibration < 6):
            raise ConfigInvalid(
                f"differential scenarios need an even K >= 6 (K/2 per arm), got {self.k_calibration}"
            )
        if self.n_replicates < 2:
            raise ConfigInvalid(f"need at least 2 replicates, got {self.n_replicates}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigInvalid(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.sigma > 0:
            raise ConfigInvalid(f"sigma must be positive, got {self.sigma}")
        if self.r2_target is not None and not 0.0 < self.r2_target <= 1.0:
            raise ConfigInvalid(f"r2 must lie in (0, 1], got {self.r2_target}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigInvalid(f"unknown CI methods: {sorted(unknown)}")
        if kind == "differential" and "fieller" in self.methods:
            raise ConfigInvalid("the Fieller method is only available for systematic error")
        if "bootstrap" in self.methods and self.bootstrap_b < 100:
            raise ConfigInvalid(f"bootstrap_b must be at least 100, got {self.bootstrap_b}")

    @property
    def kind(self) -> str:
        return correction_kind(self.error_model)

    @property
    def generator(self) -> TrialGenerator:
        return TrialGenerator(self.alpha_y, self.beta_y, self.sigma, self.n_total // 2)

    def resolved_error_model(self) -> ErrorModelSpec:
        m, r2 = self.error_model, self.r2_target
        if r2 is None:
            return m
        if isinstance(m, Classical):
            return Classical(tau_from_r2(r2, 1.0, self.sigma))
        if isinstance(m, Heteroscedastic):
            tau = tau_from_r2(r2, 1.0, self.sigma)
            return Heteroscedastic(tau, tau)
        if isinstance(m, Systematic):
            return dataclasses.replace(m, tau=tau_from_r2(r2, m.theta1, self.sigma))
        return dataclasses.replace(
            m,
            tau0=tau_from_r2(r2, m.theta10, self.sigma),
            tau1=tau_from_r2(r2, m.theta11, self.sigma),
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["error_model"] = {"kind": type(self.error_model).__name__, **dataclasses.asdict(self.error_model)}
        d["methods"] = list(self.methods)
        return d

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass(frozen=True)
class ReplicateRow:
    replicate_id: int
    estimator: str
    method: str
    estimate: float
    ci_lower: float
    ci_upper: float
    defined: bool
    theta1_hat: float
    boot_dropped: int = 0


def replicate_streams(seed: int, replicate: int) -> list[np.random.Generator]:
    """Generators for (trial, contamination, calibration, bootstrap)."""
    ss = np.random.SeedSequence(seed, spawn_key=(replicate,))
    return [np.random.default_rng(s) for s in ss.spawn(4)]


def simulate_data(cfg: ScenarioConfig, replicate: int):
    """Draw one replicate's data.

    Returns ``(true_trial, observed_trial, calibration, bootstrap_rng)``.
    """
    rng_trial, rng_err, rng_cal, rng_boot = replicate_streams(cfg.seed, replicate)
    model = cfg.resolved_error_model()
    gen = cfg.generator
    true = generate_true(gen, rng_trial)
    observed = TrialDataset(true.treatment, contaminate(true.endpoint, true.treatment, model, rng_err))
    k = cfg.k_calibration
    if cfg.kind == "systematic":
        # calibration subjects resemble the placebo arm
        xc = np.zeros(k)
        yc = cfg.alpha_y + cfg.sigma * rng_cal.standard_normal(k)
        cal = CalibrationDataset(yc, contaminate(yc, xc, model, rng_cal))
    else:
        xc = treatment_vector(k // 2)
        yc = cfg.alpha_y + cfg.beta_y * xc + cfg.sigma * rng_cal.standard_normal(k)
        cal = CalibrationDataset(yc, contaminate(yc, xc, model, rng_cal), xc)
    return true, observed, cal, rng_boot


def _nan_row(rid, estimator, method, estimate, theta1):
    return ReplicateRow(rid, estimator, method, estimate, math.nan, math.nan, False, theta1)


def run_replicate(cfg: ScenarioConfig, replicate: int) -> list[ReplicateRow]:
    """Naive and corrected estimates with every requested interval for one replicate."""
    _, observed, cal, rng_boot = simulate_data(cfg, replicate)
    level = 1.0 - cfg.alpha
    flavor = "homoscedastic" if cfg.kind == "systematic" else "HC3"
    naive, naive_ci = naive_estimate(observed, flavor, level)
    rows = []
    if cfg.kind == "systematic":
        cal_fit = fit_systematic(cal)
        theta1 = cal_fit.theta1_hat
    else:
        cal_fit = fit_differential(cal)
        theta1 = cal_fit.theta11_hat
    rows.append(
        ReplicateRow(replicate, "naive", "NaiveWald", naive.beta_hat, naive_ci.lower, naive_ci.upper, True, theta1)
    )
    try:
        if cfg.kind == "systematic":
            est = correct_systematic(observed, cal_fit)
        else:
            est = correct_differential(observed, cal_fit)
    except ThetaZero:
        for m in cfg.methods:
            rows.append(_nan_row(replicate, "corrected", METHOD_LABELS[m], math.nan, theta1))
        return rows
    for m in cfg.methods:
        if m == "zero-variance":
            ci = ci_zero_variance(est, level)
        elif m == "delta":
            ci = ci_delta(est, level=level)
        elif m == "fieller":
            ci = ci_fieller(est, level=level)
        else:
            ci = ci_bootstrap(observed, cal, cfg.kind, level, cfg.bootstrap_b, rng_boot)
        rows.append(
            ReplicateRow(
                replicate, "corrected", ci.method, est.beta_hat, ci.lower, ci.upper, ci.defined, theta1, ci.n_dropped
            )
        )
    if not cfg.methods:
        rows.append(_nan_row(replicate, "corrected", "Estimate", est.beta_hat, theta1))
    return rows


@dataclass(frozen=True)
class MetricsRow:
    estimator: str
    method: str
    n_rep: int
    mean_estimate: float
    pct_bias: float
    emp_se: float
    sqrt_mse: float
    coverage: float | None
    avg_ci_width: float | None
    type1_error: float | None
    type2_error: float | None
    fieller_failure_rate: float
    undefined_rate: float
    dropped_bootstrap_rate: float | None
    mc_se_bias: float
    mc_se_empse: float
    mc_se_mse: float
    mc_se_coverage: float | None


METRIC_FIELDS = [f.name for f in dataclasses.fields(MetricsRow)]


@dataclass
class MetricsReport:
    scenario: str
    true_beta: float
    n_replicates: int
    rows: list[MetricsRow]
    replicates: list[ReplicateRow] = field(default_factory=list, repr=False)

    def get(self, estimator: str, method: str | None = None) -> MetricsRow:
        for r in self.rows:
            if r.estimator == estimator and (method is None or r.method == method):
                return r
        raise KeyError((estimator, method))


def performance(estimates, true_value: float) -> dict:
    """Bias, EmpSE and MSE summaries with their Monte Carlo standard errors.

    EmpSE uses divisor ``n - 1``; the MSE uses divisor ``n``.
    """
    b = np.asarray(estimates, dtype=float)
    n = b.size
    if n < 2:
        raise TooFewRows(f"need at least 2 estimates, got {n}")
    mean = float(b.mean())
    emp_se = float(b.std(ddof=1))
    sq = (b - true_value) ** 2
    mse = float(sq.mean())
    pct_bias = 100.0 * (mean - true_value) / true_value if true_value != 0 else math.nan
    return {
        "mean_estimate": mean,
        "pct_bias": pct_bias,
        "emp_se": emp_se,
        "sqrt_mse": math.sqrt(mse),
        "mse": mse,
        "mc_se_bias": emp_se / math.sqrt(n),
        "mc_se_empse": emp_se / (2.0 * math.sqrt(n - 1)),
        "mc_se_mse": math.sqrt(float(np.sum((sq - mse) ** 2)) / ((n - 1) * n)),
    }


def aggregate(
    rows,
    true_beta: float,
    scenario: str = "scenario",
    bootstrap_b: int | None = None,
    fieller_limit: float = FIELLER_REPORT_LIMIT,
) -> MetricsReport:
    """Summarise per-replicate rows into one metrics row per estimator and method.

    Interval metrics use only defined intervals. Fieller coverage and width
    are withheld when more than ``fieller_limit`` of its intervals failed.
    """
    rows = list(rows)
    groups: dict[tuple[str, str], list[ReplicateRow]] = {}
    for r in rows:
        groups.setdefault((r.estimator, r.method), []).append(r)
    out = []
    n_total = 0
    for (estimator, method), g in groups.items():
        perf = performance([r.estimate for r in g], true_beta)
        n = len(g)
        n_total = max(n_total, n)
        defined = np.array([r.defined for r in g])
        lo = np.array([r.ci_lower for r in g])[defined]
        hi = np.array([r.ci_upper for r in g])[defined]
        undefined_rate = int((~defined).sum()) / n
        coverage = width = type1 = type2 = mc_cov = None
        if lo.size:
            coverage = float(np.mean((lo <= true_beta) & (true_beta <= hi)))
            width = float(np.mean(hi - lo))
            has_zero = float(np.mean((lo <= 0.0) & (0.0 <= hi)))
            if true_beta == 0:
                type1 = 1.0 - has_zero
            else:
                type2 = has_zero
            mc_cov = math.sqrt(coverage * (1.0 - coverage) / lo.size)
        fieller_rate = undefined_rate if method == "Fieller" else 0.0
        if method == "Fieller" and fieller_rate > fieller_limit:
            coverage = width = type1 = type2 = mc_cov = None
        dropped = None
        if method == "Bootstrap" and bootstrap_b:
            dropped = sum(r.boot_dropped for r in g) / (n * bootstrap_b)
        out.append(
            MetricsRow(
                estimator=estimator,
                method=method,
                n_rep=n,
                mean_estimate=perf["mean_estimate"],
                pct_bias=perf["pct_bias"],
                emp_se=perf["emp_se"],
                sqrt_mse=perf["sqrt_mse"],
                coverage=coverage,
                avg_ci_width=width,
                type1_error=type1,
                type2_error=type2,
                fieller_failure_rate=fieller_rate,
                undefined_rate=undefined_rate,
                dropped_bootstrap_rate=dropped,
                mc_se_bias=perf["mc_se_bias"],
                mc_se_empse=perf["mc_se_empse"],
                mc_se_mse=perf["mc_se_mse"],
                mc_se_coverage=mc_cov,
            )
        )
    return MetricsReport(scenario, true_beta, n_total, out, rows)


def run_scenario(cfg: ScenarioConfig, threads: int = 1) -> MetricsReport:
    """Simulate every replicate of ``cfg`` and aggregate the results."""
    ids = range(cfg.n_replicates)
    if threads > 1:
        chunk = max(1, cfg.n_replicates // (threads * 8))
        chunks = [range(i, min(i + chunk, cfg.n_replicates)) for i in range(0, cfg.n_replicates, chunk)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: [row for r in c for row in run_replicate(cfg, r)], chunks))
        rows = [row for part in parts for row in part]
    else:
        rows = [row for r in ids for row in run_replicate(cfg, r)]
    b = cfg.bootstrap_b if "bootstrap" in cfg.methods else None
    return aggregate(rows, cfg.beta_y, cfg.name, b)


ILLUSTRATION_VARIANTS = ("NoError", "Classical", "Systematic", "Differential")


@dataclass
class IllustrationReport:
    variant: str
    n_per_arm: int
    replicates: int
    type1_error: float
    type2_error: float
    mean_estimate: float
    empirical_variance: float
    variance_inflation: float
    wald_null: np.ndarray = field(repr=False)
    wald_alternative: np.ndarray = field(repr=False)


def illustration_model(variant: str, error_sd: float, factor: float = 1.05) -> ErrorModelSpec:
    if variant == "NoError":
        return Classical(0.0)
    if variant == "Classical":
        return Classical(error_sd)
    if variant == "Systematic":
        return Systematic(0.0, factor, error_sd)
    if variant == "Differential":
        return Differential(0.0, 0.0, 1.0, factor, error_sd, error_sd)
    raise ConfigInvalid(f"unknown illustration variant {variant!r}")


def _two_arm_wald(y: np.ndarray, n: int):
    """Row-wise difference in means and pooled-variance t statistics."""
    y0, y1 = y[:, :n], y[:, n:]
    diff = y1.mean(axis=1) - y0.mean(axis=1)
    rss = ((y0 - y0.mean(axis=1, keepdims=True)) ** 2).sum(axis=1) + (
        (y1 - y1.mean(axis=1, keepdims=True)) ** 2
    ).sum(axis=1)
    s2 = rss / (2 * n - 2)
    return diff, diff / np.sqrt(s2 * 2.0 / n)


def run_illustration(
    variant: str,
    replicates: int = 50_000,
    seed: int = 0,
    n_per_arm: int = 54,
    alpha_y: float = 120.0,
    beta_y: float = 6.9,
    sigma: float = 12.6,
    error_sd: float | None = None,
    alpha: float = 0.05,
) -> IllustrationReport:
    """Example-trial simulation of one error structure.

    Null and alternative samples share the same residual and error draws.
    ``error_sd`` defaults to ``0.75 * sigma``.
    """
    if error_sd is None:
        error_sd = 0.75 * sigma
    model = illustration_model(variant, error_sd)
    rng_true, rng_err = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    x = treatment_vector(n_per_arm)
    eps = sigma * rng_true.standard_normal((replicates, x.size))
    z = rng_err.standard_normal((replicates, x.size))
    if isinstance(model, Classical):
        theta0, theta1, tau = 0.0, 1.0, model.tau
    elif isinstance(model, Systematic):
        theta0, theta1, tau = model.theta0, model.theta1, model.tau
    else:
        theta0 = np.where(x == 1, model.theta01, model.theta00)
        theta1 = np.where(x == 1, model.theta11, model.theta10)
        tau = np.where(x == 1, model.tau1, model.tau0)
    y_alt_true = alpha_y + beta_y * x + eps
    y_null = theta0 + theta1 * (alpha_y + eps) + tau * z
    y_alt = theta0 + theta1 * y_alt_true + tau * z
    tq = t_quantile(1.0 - alpha / 2.0, 2 * n_per_arm - 2)
    _, t_null = _two_arm_wald(y_null, n_per_arm)
    est, t_alt = _two_arm_wald(y_alt, n_per_arm)
    est_true, _ = _two_arm_wald(y_alt_true, n_per_arm)
    var = float(np.var(est, ddof=1))
    return IllustrationReport(
        variant=variant,
        n_per_arm=n_per_arm,
        replicates=replicates,
        type1_error=float(np.mean(np.abs(t_null) > tq)),
        type2_error=float(np.mean(np.abs(t_alt) <= tq)),
        mean_estimate=float(est.mean()),
        empirical_variance=var,
        variance_inflation=var / float(np.var(est_true, ddof=1)) - 1.0,
        wald_null=t_null,
        wald_alternative=t_alt,
    )


@dataclass(frozen=True)
class PrognosticReport:
    naive_mean: float
    conditional_mean: float
    naive_empvar: float
    conditional_empvar: float


def run_prognostic_check(
    spec: PrognosticFactor = PrognosticFactor(),
    replicates: int = 10_000,
    seed: int = 0,
    n_per_arm: int = 200,
    alpha_y: float = 120.0,
    beta_y: float = 6.9,
    sigma: float = math.sqrt(158.8),
) -> PrognosticReport:
    """Compare ``Y*`` on ``X`` with ``Y*`` on ``X`` and ``S`` when the error depends on ``S``.

    ``S`` is drawn per subject as Bernoulli(``spec.prevalence``).
    """
    rng_s, rng_true, rng_err = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    x = treatment_vector(n_per_arm)
    n = x.size
    s = (rng_s.random((replicates, n)) < spec.prevalence).astype(float)
    y = alpha_y + beta_y * x + spec.gamma_y * s + sigma * rng_true.standard_normal((replicates, n))
    y_star = y + spec.zeta * s + spec.tau * rng_err.standard_normal((replicates, n))
    naive = y_star[:, n_per_arm:].mean(axis=1) - y_star[:, :n_per_arm].mean(axis=1)
    design = np.stack([np.ones_like(s), np.broadcast_to(x, s.shape), s], axis=2)
    xtx = np.einsum("rni,rnj->rij", design, design)
    xty = np.einsum("rni,rn->ri", design, y_star)
    coef = np.linalg.solve(xtx, xty[..., None])[..., 0]
    conditional = coef[:, 1]
    return PrognosticReport(
        naive_mean=float(naive.mean()),
        conditional_mean=float(conditional.mean()),
        naive_empvar=float(np.var(naive, ddof=1)),
        conditional_empvar=float(np.var(conditional, ddof=1)),
    )


_MODEL_KEYS = {
    "classical": ("tau",),
    "heteroscedastic": ("tau0", "tau1"),
    "systematic": ("theta0", "theta1", "tau"),
    "differential": ("theta00", "theta01", "theta10", "theta11", "tau0", "tau1"),
}
_INT_KEYS = {"n_total", "k_calibration", "replicates", "bootstrap_b", "seed"}
_FLOAT_KEYS = {"alpha_y", "beta_y", "sigma", "r2", "alpha"}


def parse_config(text: str) -> ScenarioConfig:
    """Parse a flat ``key = value`` scenario file.

    Blank lines and ``#`` comments are ignored. ``methods`` is a comma list
    drawn from ``zero-variance, delta, fieller, bootstrap`` (or ``none``).
    """
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in raw:
            raise ConfigInvalid(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    kind = raw.pop("error_model", None)
    if kind not in _MODEL_KEYS:
        raise ConfigInvalid(f"error_model must be one of {sorted(_MODEL_KEYS)}, got {kind!r}")
    model_args = {}
    for key in _MODEL_KEYS[kind]:
        if key in raw:
            model_args[key] = _to_float(key, raw.pop(key))
    kwargs: dict = {}
    for key in list(raw):
        value = raw.pop(key)
        if key == "name":
            kwargs["name"] = value
        elif key == "methods":
            items = [m.strip() for m in value.split(",") if m.strip()]
            kwargs["methods"] = tuple(m for m in items if m != "none")
        elif key in _INT_KEYS:
            try:
                ival = int(value)
            except ValueError:
                raise ConfigInvalid(f"{key} must be an integer, got {value!r}") from None
            target = {"replicates": "n_replicates"}.get(key, key)
            kwargs[target] = ival
        elif key in _FLOAT_KEYS:
            target = {"r2": "r2_target"}.get(key, key)
            kwargs[target] = _to_float(key, value)
        else:
            raise ConfigInvalid(f"unknown config key {key!r}")
    try:
        model = {
            "classical": Classical,
            "heteroscedastic": Heteroscedastic,
            "systematic": Systematic,
            "differential": Differential,
        }[kind](**model_args)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"invalid {kind} error model: {exc}") from None
    return ScenarioConfig(error_model=model, **kwargs)


def _to_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigInvalid(f"{key} must be a number, got {value!r}") from None
