import numpy as np
import pytest

from stiffcal import experiments, filtering, models

# One pass/fail line per acceptance criterion, printed in the terminal
# summary by the hook below.
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(f"criterion {number:2d} {status}: {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def case1_dataset():
    return experiments.generate_dataset(experiments.case_config(1, seed=11))


@pytest.fixture(scope="session")
def m2_selfgen_data():
    """Observations generated by the M2 discretization itself (at the filter
    grid step), so the filter model is exactly the data model."""
    model = models.get_model("M2")
    theta = model.make_params(k=80.0, c=0.1, sigma=50.0)
    dt = filtering.DEFAULT_GRID_DT
    rng = np.random.default_rng(202)
    n_steps = round(20.0 / dt)
    path = models.simulate_path(model, np.array([50.0, 0.0]), theta, dt,
                                rng.standard_normal((n_steps, 1)))
    times = np.arange(501) / 25.0
    idx = np.round(times / dt).astype(int)
    values = path[idx, 0] + 10.0 * rng.standard_normal(times.size)
    return theta, filtering.ObservationSeries(times, values, 10.0)
