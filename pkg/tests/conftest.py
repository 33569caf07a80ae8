import os
import time

import pytest

from soar.scenario import from_dict
from soar.sim import Engine, export_results
from soar.world import FREE, VoxelGrid


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(title): acceptance criterion reported in the summary")
    config.addinivalue_line("markers", "slow: end-to-end simulation")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            title = getattr(rep, "criterion", None)
            if title and (rep.when == "call" or outcome == "error"):
                lines.append((rep.nodeid, "PASS" if outcome == "passed" else "FAIL", title))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, status, title in sorted(lines):
        terminalreporter.write_line(f"{status}  {title}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep.criterion = mark.args[0]


@pytest.fixture
def free_grid():
    return VoxelGrid.empty((0, 0, 0), 1.0, (10, 10, 10), fill=FREE)


def _run(scene, n_p, tmp, seed=0, **kw):
    sc = from_dict({"scene": f"builtin:{scene}", "n_photographers": n_p, "seed": seed, **kw})
    t0 = time.perf_counter()
    eng = Engine(sc, keep_trajectories=True)
    m = eng.run()
    eng.wall_seconds = time.perf_counter() - t0
    out = os.path.join(tmp, f"{scene}_{n_p}_{seed}")
    export_results(eng, m, out)
    return eng, m, out


@pytest.fixture(scope="session")
def box_run(tmp_path_factory):
    return _run("box", 3, str(tmp_path_factory.mktemp("box")))


@pytest.fixture(scope="session")
def building_runs(tmp_path_factory):
    """Two identical runs of the synthetic building (box plus tower)."""
    tmp = str(tmp_path_factory.mktemp("building"))
    return [_run("building", 3, os.path.join(tmp, tag)) for tag in ("a", "b")]
