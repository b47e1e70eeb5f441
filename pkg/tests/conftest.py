import pytest

from melidar.scene import toy_scene
from melidar.simulate import simulate


@pytest.fixture(scope="session")
def toy():
    return toy_scene(0, seed=7)


@pytest.fixture(scope="session")
def toy_result(toy):
    return simulate(toy.rgb, toy.depth, toy.normals, toy.config)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {detail}")
