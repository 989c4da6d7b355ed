import numpy as np
import pytest

from cran_powermin.scenario import (ChannelStats, RadioSpec, Scenario, ScenarioConfig, ServerSpec,
                                    TaskSpec, generate_scenario)
from cran_powermin.scheduler import SchedulingInstance


def make_instance(loads, capacity, efficiency, chi=None, tau_ex=None):
    loads = np.asarray(loads, dtype=float)
    efficiency = np.asarray(efficiency, dtype=float)
    chi = np.ones_like(efficiency) if chi is None else np.asarray(chi, dtype=float)
    tau_ex = np.ones_like(loads) if tau_ex is None else np.asarray(tau_ex, dtype=float)
    return SchedulingInstance(loads=loads, tau_ex=tau_ex, capacity=np.asarray(capacity, float),
                              efficiency=efficiency, chi=chi)


def random_instance(rng, K, S, capacity=(0.1, 1.0), efficiency=(0.1, 1.0), tau_ex=0.5):
    return make_instance(
        loads=rng.uniform(0.01, 0.1, K),
        capacity=rng.uniform(*capacity, S),
        efficiency=rng.uniform(*efficiency, (S, K)),
        tau_ex=np.full(K, tau_ex),
    )


def toy_scenario(d, N=1, sigma2=1.0, D=0.0, p_max=1.0, C=2.0, tau=1.0, B=1.0):
    """Hand-built scenario with gains ``d`` (L x K) and one unit server."""
    d = np.atleast_2d(np.asarray(d, dtype=float))
    L, K = d.shape
    radio = RadioSpec(N=N, p_max=p_max, C=C, eta=0.5, upsilon=0.25, p_active=6.8,
                      p_sleep=4.3, B=B, sigma2=sigma2)
    tasks = tuple(TaskSpec(D=D, tau=tau, L=0.05, tau_ex=tau / 2, tau_tr=tau / 2)
                  for _ in range(K))
    servers = (ServerSpec(capacity=2.0, p_static=2.0, efficiency=(1.0,) * K, chi=(1.0,) * K),)
    return Scenario(tasks=tasks, servers=servers, radio=radio, rrh_count=L,
                    stats=ChannelStats.from_gains(d, N))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_scenario():
    return generate_scenario(ScenarioConfig(L=2, K=3, S=2, N=4), 1)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for report in terminalreporter.stats.get(outcome, []):
            if getattr(report, "when", "") != "call":
                continue
            for key, value in report.user_properties:
                if key == "acceptance":
                    lines.append(value)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
