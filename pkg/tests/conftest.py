import numpy as np
import pytest

from supermajority.divergence import GapParams, Thresholds
from supermajority.hashing import next_prime
from supermajority.lsf_index import make_config

TOY_PARAMS = GapParams(0.3, 0.3, 0.2, 0.1)


def toy_configs(count, seed=0, max_space=3 * 10 ** 5):
    """Random small configurations with explicit branching factors.

    Yields ``(config, X)`` with ``q <= 64``, ``K <= 4`` and ``q^K`` at most
    ``max_space`` so that every path can be enumerated.
    """
    rng = np.random.default_rng(seed)
    made = 0
    while made < count:
        K = int(rng.integers(1, 5))
        q = next_prime(int(rng.integers(2, 64)))
        if q > 64 or q ** K > max_space:
            continue
        tq = int(rng.integers(0, K + 1)) / K
        tu = int(rng.integers(0, K + 1)) / K
        delta = tuple(int(v) for v in rng.integers(1, q + 1, K))
        dirs = tuple(int(v) for v in rng.choice([-1, 1], 2))
        cfg = make_config(TOY_PARAMS, Thresholds(tq, tu), K, q, seed=int(rng.integers(2 ** 32)),
                          reps=2, delta_seq=delta, directions=dirs)
        X = np.flatnonzero(rng.random(q) < rng.uniform(0.05, 0.95))
        made += 1
        yield cfg, X


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
