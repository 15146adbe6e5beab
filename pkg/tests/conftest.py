import pytest

from radcam.scenesim import SensorNoiseConfig, SimConfig, generate_dataset


@pytest.fixture(scope="session")
def noisy_frames():
    return generate_dataset(SimConfig(n_frames=60), seed=11)


@pytest.fixture(scope="session")
def clean_frames():
    cfg = SimConfig(n_frames=40, min_separation=3.0, noise=SensorNoiseConfig.noiseless())
    return generate_dataset(cfg, seed=5)


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
