import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20261017)


def random_distribution(rng, n_bins, y_min=0, zeros=False):
    """Dirichlet-ish masses; optionally with some exact zeros."""
    from latentcodec.dist import DiscreteDistribution

    w = rng.gamma(0.7, size=n_bins)
    if zeros and n_bins > 1:
        w[rng.random(n_bins) < 0.3] = 0.0
        if w.sum() == 0:
            w[0] = 1.0
    return DiscreteDistribution.normalized(y_min, w)


ACCEPTANCE_LINES = []


class _Criterion:
    def __init__(self, number, title, budget_s=None):
        self.number, self.title, self.budget_s = number, title, budget_s
        self.detail = ""

    def __enter__(self):
        import time

        self._t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        import time

        elapsed = time.perf_counter() - self._t0
        over = self.budget_s is not None and elapsed > self.budget_s
        ok = exc_type is None and not over
        note = self.detail
        if over:
            note = f"{note}; over {self.budget_s:g} s budget".lstrip("; ")
        if exc_type is not None and not note:
            note = f"{exc_type.__name__}: {exc}".splitlines()[0]
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {self.number:2d}: {self.title} ({elapsed:.1f} s) {note}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        if exc_type is None and over:
            raise AssertionError(f"criterion {self.number} took {elapsed:.1f} s, budget {self.budget_s:g} s")
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
