import hypothesis
import pytest

from sinclave import rng
from sinclave.attestation import generate_platform
from sinclave.scenario import deploy
from sinclave.sigstruct import generate_signer_key

hypothesis.settings.register_profile("default", deadline=None)
hypothesis.settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture(autouse=True)
def _fresh_rng():
    rng.reseed(None)
    yield
    rng.reseed(None)


@pytest.fixture(scope="session")
def signer():
    return generate_signer_key("test-signer")


@pytest.fixture(scope="session")
def other_signer():
    return generate_signer_key("test-signer-2")


@pytest.fixture(scope="session")
def platform():
    return generate_platform("platform-test", seed="platform-test")


@pytest.fixture
def dep(_fresh_rng):
    # a seeded stream makes the key material cacheable across tests
    rng.reseed("dep-fixture")
    with deploy() as d:
        yield d


@pytest.fixture
def naive_dep(_fresh_rng):
    rng.reseed("naive-dep-fixture")
    with deploy("naive") as d:
        yield d


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
