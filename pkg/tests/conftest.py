import pytest

from copkit.datagen import ParameterGrid, run_sweep
from copkit.scenario import KpiEvaluator, generate_scenario
from copkit.surrogate import fit_gbrt, rows_from_dataset, split

REDUCED = ParameterGrid.with_steps(5.0, 5.0)

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    number, title = getattr(report, "_criterion", (None, None))
    if number is not None:
        # a criterion split over several tests passes only if all of them pass
        _, prev = _criteria.get(number, (title, "passed"))
        _criteria[number] = (title, report.outcome if prev == "passed" else prev)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep._criterion = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcome = _criteria[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}")


@pytest.fixture(scope="session")
def canonical():
    return generate_scenario(42)


@pytest.fixture(scope="session")
def evaluator(canonical):
    return KpiEvaluator(canonical)


@pytest.fixture(scope="session")
def reduced_sweep(canonical):
    return run_sweep(canonical, REDUCED, jobs=1)


@pytest.fixture(scope="session")
def gbrt_surrogate(reduced_sweep):
    train, _ = split(reduced_sweep, 0.2, 42)
    X, y = rows_from_dataset(train)
    return fit_gbrt(X, y, seed=42)
