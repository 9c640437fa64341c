import numpy as np
import pytest

from ahits.hierarchy import StepperHierarchy
from ahits.nnts import init_stepper
from ahits.numcore import make_rng


def random_hierarchy(m, n=2, hidden=(6,), seed=0, scale=0.05, activation="tanh"):
    """Small untrained hierarchy with damped random weights (stable rollouts)."""
    models = []
    for d in range(m + 1):
        model = init_stepper([n, *hidden, n], activation, d, make_rng(seed, d))
        model.weights = [w * scale for w in model.weights]
        models.append(model)
    return StepperHierarchy(models)


def zero_hierarchy(m, n=2, hidden=(4,)):
    return StepperHierarchy([init_stepper([n, *hidden, n], "relu", d, zero=True) for d in range(m + 1)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; returns ``check(number, title, ok, detail)``."""
    lines = request.config.stash.setdefault(_CRITERIA, {})

    def check(number, title, ok, detail=""):
        status = "PASS" if ok else "FAIL"
        key = str(number)
        lines[key] = f"criterion {key} {status}  {title}: {detail}"
        print(lines[key])
        assert ok, lines[key]

    return check


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines, key=lambda k: (int(k.split()[0]), k)):
            terminalreporter.write_line(lines[number])
