import numpy as np
import pytest

from vfpar.basis import complete_basis
from vfpar.signals import FlightState, SignalPool, SignalRecord
from vfpar.simulate import SimSpec, grid_states

RANGES = ((9.0, 17.0), (0.0, 15.0))
GRID_K1 = (9.0, 13.0, 17.0)
GRID_K2 = (0.0, 7.5, 15.0)

# VFP-AR(2)_3 on the complete linear basis (1, U1(x1), U1(x2)) = (1, 2 x1, 2 x2)
THETA_TRUE = np.array([
    [-1.0, 0.10, 0.05],
    [0.5, -0.05, 0.025],
])


def make_spec(n_samples=2000, seed=0, sigma2=1.0, theta=THETA_TRUE, states=None, **kw):
    basis = complete_basis(theta.shape[1], RANGES)
    states = grid_states(GRID_K1, GRID_K2) if states is None else states
    return SimSpec(theta=theta, basis=basis, fs=200.0, states=states, sigma2=sigma2,
                   n_samples=n_samples, seed=seed, **kw)


def hetero_sigma2(states):
    return np.array([0.2 + 0.4 * i for i in range(len(states))])


@pytest.fixture
def spec():
    return make_spec()


def pool_of(arrays, fs=200.0, states=None):
    states = states or [FlightState(9.0 + i, 0.0) for i in range(len(arrays))]
    return SignalPool(tuple(SignalRecord(s, a, fs) for s, a in zip(states, arrays)))


ACCEPTANCE_LINES = []


def acceptance_line(number, ok, detail, seconds):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  ({seconds:.1f} s)  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
