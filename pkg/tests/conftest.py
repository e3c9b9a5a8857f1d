import math

import numpy as np
import pytest

from qstateprep.errors import DomainError
from qstateprep.mlp import BoundaryPair, solve_mlp

REFERENCE_TARGET = np.array([-math.sin(2 * math.pi / 3), 0.0, -0.5])


def random_unit(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def solvable_pairs(n, seed=0, margin=1e-3):
    """Random pure boundary pairs away from the x_F = x_I plane and under the cap."""
    rng = np.random.default_rng(seed)
    pairs = []
    while len(pairs) < n:
        qi, qf = random_unit(rng, 2)
        if abs(qf[0] - qi[0]) < margin:
            continue
        b = BoundaryPair(qi, qf)
        try:
            solve_mlp(b)
        except DomainError:
            continue
        pairs.append(b)
    return pairs


@pytest.fixture(scope="session")
def pairs_1000():
    return solvable_pairs(1000)


@pytest.fixture
def reference_target():
    return REFERENCE_TARGET.copy()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
