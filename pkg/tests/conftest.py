import numpy as np
import pytest

from liftseg.config import RunConfig
from liftseg.synth import GeneratorConfig, generate_synthetic

ACCEPTANCE_RESULTS = {}


def small_generator(**overrides):
    cfg = GeneratorConfig(
        room_size=(3.0, 3.0),
        instances_per_class=(1, 1),
        num_cameras=6,
        image_size=(48, 64),
        feature_size=(24, 32),
        feature_dim=16,
        point_density=250.0,
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


@pytest.fixture(scope="session")
def small_bundle():
    return generate_synthetic(small_generator(), seed=7)


@pytest.fixture(scope="session")
def default_bundles():
    return [generate_synthetic(GeneratorConfig(), seed=s) for s in range(5)]


@pytest.fixture(scope="session")
def oracle_config():
    return RunConfig.oracle()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
