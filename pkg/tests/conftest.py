"""Shared pytest configuration: per-criterion acceptance summary."""

import pytest

CRITERIA = {
    1: "numerical kernels (gradient / HVP vs finite differences)",
    2: "Richardson correctness and divergence detection",
    3: "distributed averaging gap halves as k doubles; homogeneous case exact",
    4: "quadratic exactness within T = 15",
    5: "kappa / R interaction on synthetic ridge",
    6: "MNIST multinomial reproduction",
    7: "MNIST rounds to target accuracy",
    8: "communication accounting",
    9: "sampling degeneracies",
    10: "determinism with and without worker threads",
}

_outcomes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        if call.excinfo is None:
            outcome = "PASS"
        elif call.excinfo.errisinstance(pytest.skip.Exception):
            outcome = "SKIP"
        else:
            outcome = "FAIL"
        _outcomes.setdefault(marker.args[0], []).append(outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            status = "NOT RUN"
        elif "FAIL" in results:
            status = "FAIL"
        elif all(r == "SKIP" for r in results):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {n:2d}: {status:7s} {title}")
