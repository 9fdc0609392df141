import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from mrfdiff import epg
from mrfdiff.subspace import compute_basis


@pytest.fixture(scope="session")
def seq200():
    return epg.truncate_sequence(epg.default_sequence(1000), 200)


@pytest.fixture(scope="session")
def desk_dict(seq200):
    return epg.build_dictionary(n_t1=40, n_t2=40, seq=seq200)


@pytest.fixture(scope="session")
def small_dict(seq200):
    return epg.build_dictionary(n_t1=12, n_t2=12, seq=seq200)


@pytest.fixture(scope="session")
def small_basis(small_dict):
    return compute_basis(small_dict, 5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one pass/fail line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
