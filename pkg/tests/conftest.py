import numpy as np
import pytest

from rdushare.distortion import Hurwicz, Linear, Prelec, TverskyKahneman
from rdushare.economy import CARA, Economy

BASELINE = (0.5, 0.5, 2.0)


def cara_economy(T, betas=BASELINE, lambdas=None, w=0.0):
    lam = tuple(lambdas) if lambdas is not None else tuple(1.0 for _ in betas[1:])
    return Economy(T, CARA(betas[0]), tuple(CARA(b) for b in betas[1:]), lam, w)


FAMILIES = [
    Prelec(0.2), Prelec(0.5), Prelec(0.8), Prelec(1.0), Prelec(1.2), Prelec(2.0), Prelec(5.0),
    TverskyKahneman(0.5), TverskyKahneman(0.61), TverskyKahneman(1.5),
    Hurwicz(0.5, 0.5), Hurwicz(0.3, 0.7), Hurwicz(0.9, 0.2), Linear(),
]


@pytest.fixture
def baseline():
    return cara_economy(Prelec(0.8))


@pytest.fixture
def grid():
    return (np.arange(1001) + 0.5) / 1001


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
