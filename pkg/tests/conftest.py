import pytest

from gridadp import SolveOptions, make_benchmark, run_pi, run_vi

NAMES = ("lqr1d", "lqr2d", "deadbeat-toy", "pendulum")


def options_for(bench, **kw):
    return SolveOptions(greedy=bench.greedy, **kw)


class RunCache:
    """Benchmark PI/VI runs shared across the session (VI on 2-D grids is slow)."""

    def __init__(self):
        self.benches = {}
        self.pi_runs = {}
        self.vi_runs = {}

    def bench(self, name):
        if name not in self.benches:
            self.benches[name] = make_benchmark(name)
        return self.benches[name]

    def pi(self, name):
        if name not in self.pi_runs:
            b = self.bench(name)
            self.pi_runs[name] = run_pi(b.spec, b.h0, options_for(b))
        return self.pi_runs[name]

    def vi(self, name):
        """VI from the evaluated initial policy, i.e. W^0 = V^0."""
        if name not in self.vi_runs:
            b = self.bench(name)
            self.vi_runs[name] = run_vi(b.spec, self.pi(name).values[0], options_for(b, max_iters=500))
        return self.vi_runs[name]


@pytest.fixture(scope="session")
def runs():
    return RunCache()


@pytest.fixture(scope="session")
def lqr1d(runs):
    return runs.bench("lqr1d")


@pytest.fixture(scope="session")
def toy(runs):
    return runs.bench("deadbeat-toy")


# PASS/FAIL lines from the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
