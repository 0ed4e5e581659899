import numpy as np
import pytest
from hypothesis import settings

import randtangency  # noqa: F401  (sets the numba thread pool up)
from randtangency.config import default_config, kernel_from, model_from
from randtangency.model import ModelParams
from randtangency.noise import NoiseKernel

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def model():
    return ModelParams()


@pytest.fixture(scope="session")
def kernel():
    return NoiseKernel.uniform(0.06, 0.01)


@pytest.fixture(scope="session")
def shipped():
    cfg = default_config()
    return {"regular": [tuple(p) for p in cfg["run"]["regular_points"]],
            "recurrent": [tuple(p) for p in cfg["run"]["recurrent_points"]],
            "disk_base": tuple(cfg["run"]["disk_base"]),
            "model": model_from(cfg), "kernel": kernel_from(cfg)}


@pytest.fixture
def report_criterion():
    def record(number: int, title: str, passed: bool, detail: str):
        ACCEPTANCE_LINES[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2} {title}: {detail}"
        print(ACCEPTANCE_LINES[number])
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
