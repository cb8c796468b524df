import numpy as np
import pytest

from nof1iv.sim_models import (
    ComplianceSpec,
    ModelSpec,
    ResponseModelSpec,
    TrialSeries,
    simulate_trial,
)

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def hand_trial():
    return TrialSeries(
        z=np.array([1, 0, 1, 0]),
        x=np.array([1.0, 0.0, 1.0, 1.0]),
        y=np.array([2.0, 0.0, 2.0, 1.0]),
    )


def make_trial(seed=0, n=200, beta=1.0, family="ARMA10", kind="simple", alpha=1.5, errors="gaussian", **kw):
    """Confounded trial with moderate compliance; keyword args override coefficients."""
    resp = {"phi1": 0.4, "lam": 1.0, "eta": 1.0, "psi": 0.5}
    comp = {"omega": 1.0, "gamma": 1.0}
    for k, v in kw.items():
        (comp if k in ("omega", "gamma", "varphi", "rho") else resp)[k] = v
    spec = ModelSpec(
        response=ResponseModelSpec(family, beta=beta, **resp),
        compliance=ComplianceSpec(kind, alpha=alpha, **comp),
        errors=errors,
        n=n,
        seed=seed,
    )
    return simulate_trial(spec)
