"""How the bundled CSV fixtures were produced.

The table fixtures are replicate 0 of the matching bundled config, so they
can be regenerated (and are checked) from the generator alone.
"""

from importlib import resources

import numpy as np

from mecor.simulation import parse_config, simulate_data

FIXTURES = resources.files("mecor") / "data" / "fixtures"
CONFIGS = resources.files("mecor") / "data" / "configs"


def _csv(header, columns) -> str:
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(format(float(v), ".17g") for v in row))
    return "\n".join(lines) + "\n"


def table_fixture(config_name: str, differential: bool = False) -> tuple[str, str]:
    cfg = parse_config((CONFIGS / f"{config_name}.cfg").read_text())
    _, observed, cal, _ = simulate_data(cfg, 0)
    trial = _csv(["treatment", "y_observed"], [observed.treatment, observed.endpoint])
    if differential:
        calib = _csv(["treatment", "y_true", "y_observed"], [cal.treatment, cal.y_true, cal.y_observed])
    else:
        calib = _csv(["y_true", "y_observed"], [cal.y_true, cal.y_observed])
    return trial, calib


def all_fixtures() -> dict[str, str]:
    out = {}
    out["trial_table1.csv"], out["calibration_table1.csv"] = table_fixture("table1_r08_k50")
    out["trial_table2.csv"], out["pilot_table2.csv"] = table_fixture("table2_r08_k50", differential=True)
    rng = np.random.default_rng(11)
    x = np.repeat([0.0, 1.0], 30)
    y = 120 + 6.9 * x + 12.6 * rng.standard_normal(x.size)
    out["trial_noiseless.csv"] = _csv(["treatment", "y_observed"], [x, y])
    yc = 120 + 12.6 * rng.standard_normal(20)
    out["calibration_noiseless.csv"] = _csv(["y_true", "y_observed"], [yc, yc])
    out["calibration_constant.csv"] = _csv(["y_true", "y_observed"], [np.full(10, 120.0), yc[:10]])
    return out


if __name__ == "__main__":
    for name, text in all_fixtures().items():
        (FIXTURES / name).write_text(text)
        print("wrote", name)
