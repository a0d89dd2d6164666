import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from metaprompt import metagrad as mg
from metaprompt.pipeline import default_bundle, make_backbone
from metaprompt.taskgen import Episode, MetaTask, one_hot

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def backbone():
    return make_backbone()


@pytest.fixture(scope="session")
def bundle(backbone):
    return default_bundle(1, backbone)


def random_episode(rng, fmt, n, d_h=32, soft=False):
    dim = 3 * d_h if fmt == "sp" else 5 * d_h
    C = 3 if fmt == "sp" else 4
    h = rng.standard_normal((n, dim)) * 0.3
    if soft:
        y = rng.dirichlet(np.ones(C), size=n)
    else:
        y = np.stack([one_hot(int(k), C) for k in rng.integers(C, size=n)])
    return Episode(fmt, h, y)


def random_task(rng, fmt="sp", n_s=6, n_q=5, d_h=32):
    return MetaTask(fmt, random_episode(rng, fmt, n_s, d_h), random_episode(rng, fmt, n_q, d_h, soft=True), 0)


def random_phi(rng, d_p, d_h, scale=0.3):
    return mg.RegularizerState(
        np.eye(d_p) + scale * rng.standard_normal((d_p, d_p)),
        scale * rng.standard_normal(d_p),
        scale * rng.standard_normal((d_p, d_h)),
        scale * rng.standard_normal(d_p),
    )


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
