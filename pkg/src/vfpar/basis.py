"""
Bivariate Chebyshev type II bases over the flight-state domain.

Each basis function is a tensor product ``U_a(x1) * U_b(x2)`` of
univariate Chebyshev polynomials of the second kind, where ``(x1, x2)``
is the flight state mapped affinely onto ``[-1, 1]^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfRangeError

FAMILY = "chebyshev2"
VARIABLES = ("k1", "k2")
EDGE_TOL = 1e-9


@dataclass(frozen=True)
class BasisSpec:
    """Functional subspace: degree pairs and normalization ranges.

    Parameters
    ----------
    pairs : sequence of (int, int)
        Degrees ``(d1, d2)`` of each basis function, in column order.
    ranges : ((float, float), (float, float))
        ``[min, max]`` of ``k1`` and ``k2`` mapped onto ``[-1, 1]``.
    """

    pairs: tuple
    ranges: tuple
    family: str = FAMILY

    def __post_init__(self):
        pairs = tuple((int(a), int(b)) for a, b in self.pairs)
        if not pairs:
            raise ValueError("basis needs at least one function")
        if len(set(pairs)) != len(pairs):
            raise ValueError(f"duplicate degree pairs in {pairs}")
        if any(a < 0 or b < 0 for a, b in pairs):
            raise ValueError("degrees must be non-negative")
        ranges = tuple((float(lo), float(hi)) for lo, hi in self.ranges)
        if len(ranges) != 2:
            raise ValueError("ranges must give one interval per flight-state variable")
        for name, (lo, hi) in zip(VARIABLES, ranges):
            if not lo < hi:
                raise ValueError(f"range for {name} must have min < max, got [{lo}, {hi}]")
        if self.family != FAMILY:
            raise ValueError(f"unsupported basis family {self.family!r}")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "ranges", ranges)

    @property
    def p(self):
        return len(self.pairs)

    @property
    def is_complete(self):
        return self.pairs == graded_pairs(self.p)

    def to_dict(self):
        return {
            "family": self.family,
            "pairs": [list(pair) for pair in self.pairs],
            "ranges": {name: list(r) for name, r in zip(VARIABLES, self.ranges)},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            pairs=[tuple(pair) for pair in d["pairs"]],
            ranges=tuple(tuple(d["ranges"][name]) for name in VARIABLES),
            family=d.get("family", FAMILY),
        )


def ranges_from_states(states, pad=0.5):
    """Observed ``[min, max]`` per variable; a variable that never varies is widened by ``pad``."""
    arr = np.array([[s.k1, s.k2] for s in states], dtype=float)
    out = []
    for lo, hi in zip(arr.min(axis=0), arr.max(axis=0)):
        if hi - lo <= 0:
            lo, hi = lo - pad, hi + pad
        out.append((float(lo), float(hi)))
    return tuple(out)


def normalize_state(k, ranges, extrapolate=False):
    """Map a flight state affinely onto ``[-1, 1]^2`` (min -> -1, max -> +1)."""
    values = (k.k1, k.k2)
    out = np.empty(2)
    for i, (name, v, (lo, hi)) in enumerate(zip(VARIABLES, values, ranges)):
        x = (2.0 * v - (lo + hi)) / (hi - lo)
        if not extrapolate:
            if abs(x) > 1.0 + EDGE_TOL:
                raise OutOfRangeError(name, v, lo, hi)
            x = min(1.0, max(-1.0, x))
        out[i] = x
    return out


def chebyshev_u(d, x, extrapolate=False):
    """Chebyshev polynomial of the second kind ``U_d(x)`` by three-term recurrence.

    Works elementwise on arrays.  Arguments outside ``[-1, 1]`` raise
    unless ``extrapolate`` is set.
    """
    x = np.asarray(x, dtype=float)
    if not extrapolate and np.any(np.abs(x) > 1.0 + EDGE_TOL):
        raise ValueError("Chebyshev argument outside [-1, 1]")
    if d < 0:
        raise ValueError("degree must be non-negative")
    u_prev = np.ones_like(x)
    if d == 0:
        return u_prev if x.ndim else float(u_prev)
    u = 2.0 * x
    for _ in range(d - 1):
        u_prev, u = u, 2.0 * x * u - u_prev
    return u if x.ndim else float(u)


def _chebyshev_table(max_d, x):
    # rows: degree 0..max_d, columns: points
    x = np.atleast_1d(np.asarray(x, dtype=float))
    table = np.empty((max_d + 1, x.size))
    table[0] = 1.0
    if max_d >= 1:
        table[1] = 2.0 * x
    for d in range(2, max_d + 1):
        table[d] = 2.0 * x * table[d - 1] - table[d - 2]
    return table


def eval_normalized(spec, points):
    """Basis values at normalized points ``(P, 2)``; returns ``(P, p)``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d1 = np.array([a for a, _ in spec.pairs])
    d2 = np.array([b for _, b in spec.pairs])
    t1 = _chebyshev_table(int(d1.max()), points[:, 0])
    t2 = _chebyshev_table(int(d2.max()), points[:, 1])
    return (t1[d1] * t2[d2]).T


def eval_basis(spec, k, extrapolate=False):
    """Basis vector ``g(k)`` of length ``spec.p``."""
    x = normalize_state(k, spec.ranges, extrapolate=extrapolate)
    return eval_normalized(spec, x[None, :])[0]


def basis_matrix(spec, states, extrapolate=False):
    """Stack of basis vectors, shape ``(len(states), p)``."""
    pts = np.array([normalize_state(k, spec.ranges, extrapolate) for k in states])
    return eval_normalized(spec, pts)


def graded_pairs(count):
    """First ``count`` degree pairs in graded-lexicographic order."""
    pairs = []
    total = 0
    while len(pairs) < count:
        for a in range(total, -1, -1):
            pairs.append((a, total - a))
            if len(pairs) == count:
                break
        total += 1
    return tuple(pairs)


def complete_basis(max_p, ranges):
    if max_p < 1:
        raise ValueError("max_p must be >= 1")
    return BasisSpec(graded_pairs(max_p), ranges)
