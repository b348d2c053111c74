import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from modechoice.dataset import ChoiceDataset

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_dataset(X, chosen, person=None, alts=None, feats=None, mask=None, availability=None):
    X = np.asarray(X, dtype=float)
    n, k, p = X.shape
    return ChoiceDataset(
        X=X, chosen=np.asarray(chosen),
        person_id=np.asarray(person if person is not None else np.arange(n)),
        alt_names=tuple(alts or [f"a{j}" for j in range(k)]),
        feature_names=tuple(feats or [f"f{j}" for j in range(p)]),
        mask=mask, availability=availability,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def record_criterion(request):
    """Records one PASS/FAIL line per acceptance criterion; returns ``ok``."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        lines.append((number, f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"))
        print(lines[-1][1])
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
