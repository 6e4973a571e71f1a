import time

import pytest

_ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(_ACCEPTANCE_LINES[number])


@pytest.fixture(scope="session")
def planted():
    """The planted-signal corpus (1% CPE prevalence), labeled, split and featurized."""
    from riskbench.pipeline import prepare
    from riskbench.synthgen import GeneratorConfig, generate_records

    t0 = time.perf_counter()
    cfg = GeneratorConfig(seed=0, cpe_prevalence=0.01)
    episodes, beddays, truth = generate_records(cfg)
    data = prepare(episodes, beddays)
    return {
        "config": cfg,
        "episodes": episodes,
        "beddays": beddays,
        "truth": truth,
        "data": data,
        "seconds": time.perf_counter() - t0,
    }


@pytest.fixture(scope="session")
def small_corpus():
    """A small corpus for fast model and explanation tests."""
    from riskbench.pipeline import prepare
    from riskbench.synthgen import GeneratorConfig, generate_records

    cfg = GeneratorConfig(seed=3, n_patients=900, cpe_prevalence=0.02)
    episodes, beddays, truth = generate_records(cfg)
    return {"episodes": episodes, "beddays": beddays, "truth": truth, "data": prepare(episodes, beddays)}
