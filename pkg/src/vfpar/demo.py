"""
Bundled "wing-like" synthetic scenario.

Two lightly damped modes.  Mode A starts at 4.5 Hz at the lowest
airspeed and climbs toward mode B (8.5 Hz), meeting it at the highest
airspeed: a surrogate of flutter coupling.  The innovation variance
grows with airspeed squared and jumps by roughly 5x across an angle of
attack of 13 deg: a surrogate of stall onset.

The generating coefficient field is the least-squares projection of the
pole-derived AR(4) coefficients onto a complete cubic basis (p = 10), so
the demo model lies exactly in the VFP-AR(4)_10 class.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .ar import polynomial_from_poles
from .basis import complete_basis
from .signals import FlightState
from .simulate import SimSpec, grid_states, project_coefficients

FS = 200.0
ORDER = 4
P = 10
RANGES = ((9.0, 17.0), (0.0, 15.0))
K1_GRID = np.arange(9.0, 18.0)
K2_GRID = np.arange(0.0, 16.0)
STALL_AOA = 13.0
BASE_SIGMA2 = 1e-6
SEED = 20240417


def mode_frequencies(k):
    s = (k.k1 - RANGES[0][0]) / (RANGES[0][1] - RANGES[0][0])
    return 8.5 - 4.0 * (1.0 - s) ** 2, 8.5


def mode_radii(k):
    return 0.985, 0.99 - 0.004 * k.k2 / RANGES[1][1]


def true_coefficients(k):
    (fa, fb), (ra, rb) = mode_frequencies(k), mode_radii(k)
    poles = [ra * np.exp(2j * np.pi * fa / FS), rb * np.exp(2j * np.pi * fb / FS)]
    return polynomial_from_poles(poles + [np.conj(z) for z in poles])


def innovation_variance(k):
    stall = 1.0 + 5.0 / (1.0 + np.exp(-(k.k2 - STALL_AOA) / 0.25))
    return float(BASE_SIGMA2 * (k.k1 / RANGES[0][0]) ** 2 * stall)


def demo_theta():
    basis = complete_basis(P, RANGES)
    fine = grid_states(np.linspace(*RANGES[0], 33), np.linspace(*RANGES[1], 31))
    return project_coefficients(true_coefficients, basis, fine), basis


def demo_spec(states=None, n_samples=4000, seed=SEED):
    """The demo :class:`SimSpec`, by default on the 9 x 16 training grid."""
    theta, basis = demo_theta()
    states = grid_states(K1_GRID, K2_GRID) if states is None else list(states)
    return SimSpec(theta=theta, basis=basis, fs=FS, states=states,
                   sigma2=[innovation_variance(s) for s in states],
                   n_samples=n_samples, seed=seed)


def bundled_spec_path():
    return resources.files("vfpar") / "data" / "wing_demo_simspec.json"


def load_bundled_spec():
    return SimSpec.load(bundled_spec_path())


__all__ = ["FlightState", "demo_spec", "load_bundled_spec", "true_coefficients",
           "innovation_variance", "mode_frequencies"]
