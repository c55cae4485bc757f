import random
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from encmpc.paillier import keygen, keypair_from_primes  # noqa: E402
from encmpc.protocols import TwoServerKeys  # noqa: E402


@pytest.fixture(scope="session")
def toy_keys():
    return keypair_from_primes(5, 7)


@pytest.fixture(scope="session")
def keys128():
    return keygen(128, random.Random("keys128"))


@pytest.fixture(scope="session")
def keys512():
    return keygen(512, random.Random("keys512"))


@pytest.fixture(scope="session")
def ss_keys128():
    return TwoServerKeys.generate(128, random.Random("ss128"))


@pytest.fixture(scope="session")
def ss_keys512():
    return TwoServerKeys.generate(512, random.Random("ss512"))


@pytest.fixture
def nprng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in RESULTS:
        terminalreporter.write_line(line)
