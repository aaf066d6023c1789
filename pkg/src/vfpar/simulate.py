"""
Synthetic pools drawn from a known VFP-AR model.

Each record is generated by running the frozen AR recursion at its flight
state on Gaussian innovations, discarding a burn-in transient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .ar import ArModel
from .basis import BasisSpec, basis_matrix
from .errors import UnstableModelError
from .signals import FlightState, SignalPool, SignalRecord

STABILITY_MARGIN = 1e-6


@dataclass(frozen=True)
class SimSpec:
    """Generating model and sampling plan.

    ``sigma2`` holds one innovation variance per entry of ``states``.  When
    ``gamma_e`` is given it replaces ``sigma2`` as the full cross-state
    innovation covariance (its diagonal must then match ``sigma2``).
    """

    theta: np.ndarray
    basis: BasisSpec
    fs: float
    states: tuple
    sigma2: np.ndarray
    n_samples: int
    burn_in: int | None = None
    seed: int = 0
    gamma_e: np.ndarray | None = None

    def __post_init__(self):
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        if theta.shape[1] != self.basis.p:
            theta = theta.reshape(-1, self.basis.p)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "states", tuple(self.states))
        sig = np.broadcast_to(np.asarray(self.sigma2, dtype=float), (len(self.states),)).copy()
        if np.any(sig < 0):
            raise ValueError("innovation variances must be >= 0")
        object.__setattr__(self, "sigma2", sig)
        burn = 100 * self.order if self.burn_in is None else int(self.burn_in)
        if burn < 10 * self.order:
            raise ValueError(f"burn_in must be >= 10 * order = {10 * self.order}")
        object.__setattr__(self, "burn_in", burn)
        if self.gamma_e is not None:
            g = np.asarray(self.gamma_e, dtype=float)
            if g.shape != (len(self.states),) * 2:
                raise ValueError("gamma_e must be M x M")
            if not np.allclose(np.diag(g), sig, rtol=1e-10, atol=0):
                raise ValueError("diagonal of gamma_e must equal sigma2")
            object.__setattr__(self, "gamma_e", g)
        if len(set(self.states)) != len(self.states):
            raise ValueError("duplicate states in simulation plan")

    @property
    def order(self):
        return self.theta.shape[0]

    def frozen_coeffs(self, states=None):
        """``(len(states), n)`` matrix of frozen AR coefficients."""
        states = self.states if states is None else states
        return basis_matrix(self.basis, states, extrapolate=True) @ self.theta.T

    def with_states(self, states, sigma2):
        return SimSpec(self.theta, self.basis, self.fs, states, sigma2, self.n_samples,
                       self.burn_in, self.seed, None)

    def to_dict(self):
        d = {
            "format": "vfpar.simspec",
            "order": self.order,
            "fs": self.fs,
            "basis": self.basis.to_dict(),
            "theta": self.theta.ravel().tolist(),
            "states": [[s.k1, s.k2] for s in self.states],
            "sigma2": self.sigma2.tolist(),
            "n_samples": self.n_samples,
            "burn_in": self.burn_in,
            "seed": self.seed,
        }
        if self.gamma_e is not None:
            d["gamma_e"] = self.gamma_e.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        basis = BasisSpec.from_dict(d["basis"])
        return cls(
            theta=np.asarray(d["theta"], dtype=float).reshape(-1, basis.p),
            basis=basis,
            fs=float(d["fs"]),
            states=[FlightState(a, b) for a, b in d["states"]],
            sigma2=d["sigma2"],
            n_samples=int(d["n_samples"]),
            burn_in=d.get("burn_in"),
            seed=int(d.get("seed", 0)),
            gamma_e=d.get("gamma_e"),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def check_stability(theta, basis, states):
    """Largest root magnitude of the frozen AR polynomial at each state."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    A = basis_matrix(basis, states, extrapolate=True) @ theta.T
    out = []
    for s, a in zip(states, A):
        r = np.roots(np.concatenate(([1.0], a)))
        out.append((s, float(np.abs(r).max()) if r.size else 0.0))
    return out


def unstable_states(theta, basis, states, margin=STABILITY_MARGIN):
    return [s for s, mag in check_stability(theta, basis, states) if mag >= 1.0 - margin]


def ar_filter(a, e):
    """Run ``y[t] = e[t] - sum_i a_i y[t-i]`` from zero initial conditions."""
    return sps.lfilter([1.0], np.concatenate(([1.0], a)), e)


def simulate_ar(model: ArModel, n_samples, rng, burn_in=None):
    burn = 100 * model.order if burn_in is None else burn_in
    e = rng.standard_normal(n_samples + burn) * np.sqrt(model.sigma2)
    return ar_filter(model.coeffs, e)[burn:]


def simulate_pool(spec):
    """Draw a pool from ``spec``; deterministic for a fixed seed."""
    bad = unstable_states(spec.theta, spec.basis, spec.states)
    if bad:
        raise UnstableModelError(bad)
    A = spec.frozen_coeffs()
    M = len(spec.states)
    total = spec.n_samples + spec.burn_in
    if spec.gamma_e is None:
        children = np.random.SeedSequence(spec.seed).spawn(M)
        E = np.vstack([
            np.random.default_rng(c).standard_normal(total) * np.sqrt(v)
            for c, v in zip(children, spec.sigma2)
        ])
    else:
        rng = np.random.default_rng(spec.seed)
        L = np.linalg.cholesky(spec.gamma_e)
        E = L @ rng.standard_normal((M, total))
    records = [
        SignalRecord(s, ar_filter(a, e)[spec.burn_in:], spec.fs)
        for s, a, e in zip(spec.states, A, E)
    ]
    return SignalPool(tuple(records))


def grid_states(k1_values, k2_values):
    """Rectangular grid, ``k1`` outer, ``k2`` inner."""
    return [FlightState(a, b) for a in k1_values for b in k2_values]


def project_coefficients(coeff_fn, basis, states):
    """Least-squares projection of a coefficient field onto ``basis``.

    ``coeff_fn(state) -> (n,)`` AR coefficients; returns ``theta`` of
    shape ``(n, p)`` minimizing the squared error over ``states``.
    """
    G = basis_matrix(basis, states)
    A = np.vstack([coeff_fn(s) for s in states])
    theta, *_ = np.linalg.lstsq(G, A, rcond=None)
    return theta.T
