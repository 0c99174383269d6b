import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte-Carlo suites at full experiment scale")


@pytest.fixture
def spec():
    from riskmonitor.core import RiskSpec
    return RiskSpec(epsilon=0.1, delta=0.1)
