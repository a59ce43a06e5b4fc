import time

import pytest

from dualgfm import dae, scenario

# Acceptance outcomes collected by tests/test_acceptance.py and echoed in the summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def _equilibrium(variant):
    data = scenario.builtin_wscc9(variant)
    start = time.perf_counter()
    system, state = dae.initialize(data.network, data.devices)
    return system, state, time.perf_counter() - start


@pytest.fixture(scope="session")
def dual_eq():
    return _equilibrium("dualgfm")


@pytest.fixture(scope="session")
def machine_eq():
    return _equilibrium("machines")


def _run(variant, name, t_stop=20.0):
    data = scenario.builtin_wscc9(variant)
    start = time.perf_counter()
    system, state = dae.initialize(data.network, data.devices)
    result = dae.run_simulation(system, state, scenario.paper_events(name, data.network.base_freq_hz),
                                dae.SolverConfig(dt=0.005, t_stop=t_stop))
    return system, state, result, time.perf_counter() - start


@pytest.fixture(scope="session")
def fig3_run():
    return _run("dualgfm", "fig3")


@pytest.fixture(scope="session")
def fig4_run():
    return _run("dualgfm", "fig4")


@pytest.fixture(scope="session")
def irish_fig3_run():
    return _run("irish", "fig3")
