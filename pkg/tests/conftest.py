import io
import time
from contextlib import redirect_stdout
from dataclasses import dataclass

import numpy as np
import pytest

from stlcbf import cli
from stlcbf.io import write_trajectory
from stlcbf.scenario import (
    build_task_groups,
    bundled_scenario,
    load_scenario,
    save_params,
    synthesize_group,
)
from stlcbf.sim import run_scenario

_VERDICTS: dict[str, str] = {}


@pytest.fixture(scope="session")
def verdicts():
    """Acceptance tests record one line each; printed at the end of the run."""
    return _VERDICTS


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_VERDICTS, key=lambda k: int(k.split()[0])):
        terminalreporter.write_line(_VERDICTS[key])


@dataclass
class Run:
    scenario: object
    results: dict
    groups: list
    traj: object
    monitor_rc: int
    monitor_out: str
    seconds: float
    csv: object

    @property
    def rho(self) -> float:
        return float(self.monitor_out.strip().splitlines()[-1].split()[-1])


def run_bundled(name: str, workdir) -> Run:
    t0 = time.perf_counter()
    path = bundled_scenario(name)
    scenario = load_scenario(path)
    results = {g.name: synthesize_group(scenario, g) for g in scenario.groups}
    save_params(workdir / "params.json", scenario, results)
    groups = build_task_groups(scenario, results)
    traj = run_scenario(scenario, groups)
    csv = workdir / "traj.csv"
    write_trajectory(csv, traj)
    buf = io.StringIO()
    with redirect_stdout(buf):
        rc = cli.main(["monitor", str(csv), "--scenario", str(path)])
    return Run(scenario, results, groups, traj, rc, buf.getvalue(), time.perf_counter() - t0, csv)


_RUNS: dict[str, Run] = {}


@pytest.fixture(scope="session")
def scenario_run(tmp_path_factory):
    def get(name: str) -> Run:
        if name not in _RUNS:
            _RUNS[name] = run_bundled(name, tmp_path_factory.mktemp(name))
        return _RUNS[name]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
