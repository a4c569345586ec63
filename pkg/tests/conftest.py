import pytest

from permurank.client import ServiceClient
from permurank.types import Passage


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(RESULTS):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def client():
    with ServiceClient() as service_client:
        yield service_client


@pytest.fixture
def tiny_corpus():
    """Eight passages with one shared term and one unique term each."""
    return {
        f"d{i}": Passage(
            docid=f"d{i}",
            text=f"shared background words plus unique{i} token repeated unique{i}",
            title=f"Title {i}",
        )
        for i in range(8)
    }
