"""
Baseline AR identification under a single flight state.

The model is ``y[t] + a_1 y[t-1] + ... + a_n y[t-n] = e[t]`` with white
Gaussian ``e``.  Estimation conditions on the first ``n`` samples (or a
larger common start when comparing orders) and solves the least-squares
problem with a pivoted QR factorization.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .errors import DegenerateInputError, RankDeficiencyError
from .linalg import lstsq_qr


@dataclass(frozen=True)
class ArModel:
    coeffs: np.ndarray
    sigma2: float
    fs: float = 1.0

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if a.ndim != 1 or a.size < 1:
            raise ValueError("AR model needs at least one coefficient")
        if not self.sigma2 >= 0:
            raise ValueError(f"innovation variance must be >= 0, got {self.sigma2}")
        a.setflags(write=False)
        object.__setattr__(self, "coeffs", a)

    @property
    def order(self):
        return self.coeffs.size

    @property
    def polynomial(self):
        """``[1, a_1, ..., a_n]``, the coefficients of ``A(z)`` in descending powers."""
        return np.concatenate(([1.0], self.coeffs))

    def roots(self):
        return np.roots(self.polynomial)

    def max_root_magnitude(self):
        r = self.roots()
        return float(np.abs(r).max()) if r.size else 0.0


def lag_matrix(y, n, start=None):
    """Regressors ``[-y[t-1], ..., -y[t-n]]`` and targets ``y[t]`` for ``t = start..N-1``.

    ``start`` defaults to ``n`` (condition on the first ``n`` samples).
    """
    y = np.asarray(y, dtype=float)
    start = n if start is None else start
    if start < n:
        raise ValueError("start must be >= order")
    N = y.size
    if N <= start:
        raise ValueError(f"signal of {N} samples too short for start={start}")
    cols = [-y[start - i : N - i] for i in range(1, n + 1)]
    return np.column_stack(cols), y[start:]


def fit_ar(y, n, fs=1.0, start=None):
    """Least-squares AR(n) fit.

    Parameters
    ----------
    y : array_like
        Mean-corrected signal.
    n : int
        Model order.
    fs : float
        Sampling rate in Hz, carried into the model for modal analysis.
    start : int, optional
        First predicted sample (0-based); defaults to ``n``.

    Returns
    -------
    ArModel
        ``sigma2`` is ``RSS / (N - start)``.
    """
    y = np.asarray(y, dtype=float)
    if n < 1:
        raise ValueError("order must be >= 1")
    if y.size <= 2 * n + 1:
        raise ValueError(f"need more than {2 * n + 1} samples for AR({n}), got {y.size}")
    if not np.any(y):
        raise DegenerateInputError("signal is identically zero")
    phi, target = lag_matrix(y, n, start)
    try:
        sol = lstsq_qr(phi, target, labels=[f"a{i}" for i in range(1, n + 1)])
    except RankDeficiencyError as exc:
        raise DegenerateInputError(f"degenerate regressor for AR({n}): {exc}") from exc
    resid = target - phi @ sol.x
    return ArModel(sol.x, float(resid @ resid / target.size), fs)


def residuals(model, y, start=None):
    phi, target = lag_matrix(y, model.order, start)
    return target - phi @ model.coeffs


def rss_sss(model, y, start=None):
    y = np.asarray(y, dtype=float)
    start = model.order if start is None else start
    e = residuals(model, y, start)
    sss = float(y[start:] @ y[start:])
    return float(e @ e) / sss if sss > 0 else math.inf


def bic_value(sigma2, n_eff, d):
    """Gaussian concentrated-likelihood BIC, ``n_eff ln sigma2 + d ln n_eff``."""
    if sigma2 <= 0:
        warnings.warn("zero residual variance; BIC is -inf (degenerate)", RuntimeWarning)
        return -math.inf
    return n_eff * math.log(sigma2) + d * math.log(n_eff)


def bic(model, y, start=None):
    e = residuals(model, y, start)
    return bic_value(float(e @ e) / e.size, e.size, model.order)


@dataclass(frozen=True)
class OrderScanEntry:
    n: int
    bic: float
    rss_sss: float
    model: ArModel = field(repr=False, compare=False, default=None)


def order_scan(y, n_min, n_max, step=1, fs=1.0):
    """Fit AR(n) for ``n = n_min, n_min+step, ..., <= n_max``.

    All fits use the same estimation window (conditioning on the first
    ``n_max`` samples), so RSS/SSS is non-increasing in ``n`` and BIC
    values are directly comparable.
    """
    y = np.asarray(y, dtype=float)
    if n_min < 1 or n_max < n_min or step < 1:
        raise ValueError("need 1 <= n_min <= n_max and step >= 1")
    if n_max >= y.size / 2:
        raise ValueError(f"n_max={n_max} must be below N/2={y.size / 2}")
    out = []
    for n in range(n_min, n_max + 1, step):
        m = fit_ar(y, n, fs=fs, start=n_max)
        out.append(OrderScanEntry(n, bic(m, y, n_max), rss_sss(m, y, n_max), m))
    return out


@dataclass(frozen=True)
class Mode:
    frequency: float   # Hz
    damping: float     # fraction of critical


@dataclass(frozen=True)
class ModalSet:
    modes: tuple
    n_skipped: int = 0

    @property
    def frequencies(self):
        return np.array([m.frequency for m in self.modes])

    @property
    def dampings(self):
        return np.array([m.damping for m in self.modes])

    def __len__(self):
        return len(self.modes)


def poles_to_modes(roots, fs, imag_tol=1e-10):
    """Discrete poles -> (frequency, damping) pairs.

    With ``s = fs ln(lambda)``, frequency is ``|Im s| / 2 pi`` (the damped
    natural frequency, so real positive poles sit at 0 Hz and real
    negative poles at Nyquist) and damping is ``-Re s / |s|``.  Conjugate
    pairs appear once; poles at the origin are skipped and counted.
    """
    roots = np.asarray(roots, dtype=complex)
    modes = []
    skipped = 0
    for lam in roots:
        mag = abs(lam)
        if mag == 0.0:
            skipped += 1
            continue
        if lam.imag < -imag_tol * mag:
            continue  # reported with its conjugate
        if abs(lam.imag) <= imag_tol * mag:
            lam = complex(lam.real, 0.0)
        s = fs * np.log(lam)
        freq = abs(s.imag) / (2 * np.pi)
        damping = -s.real / abs(s) if abs(s) > 0 else 0.0
        modes.append(Mode(float(freq), float(damping)))
    modes.sort(key=lambda m: (m.frequency, m.damping))
    if skipped:
        warnings.warn(f"{skipped} pole(s) at the origin skipped", RuntimeWarning)
    return ModalSet(tuple(modes), skipped)


def modal(model):
    return poles_to_modes(model.roots(), model.fs)


def polynomial_from_poles(poles):
    """AR coefficients ``a_1..a_n`` whose characteristic polynomial has ``poles``."""
    return np.poly(poles)[1:].real.copy()


@dataclass(frozen=True)
class StabilizationEntry:
    order: int
    modes: ModalSet
    stable: tuple   # one flag per mode; empty for the first order


def stabilization_diagram(y, n_min, n_max, fs=1.0, step=1,
                          freq_tol=0.01, damping_tol=0.10):
    """Modal sets for increasing order, with stability flags.

    A mode is stable when the nearest-frequency mode of the previous order
    lies within ``freq_tol`` (relative) in frequency and ``damping_tol``
    (relative) in damping.
    """
    entries = []
    prev = None
    for scan in order_scan(y, n_min, n_max, step, fs=fs):
        ms = modal(scan.model)
        flags = ()
        if prev is not None:
            flags = tuple(_is_stable(m, prev, freq_tol, damping_tol) for m in ms.modes)
        entries.append(StabilizationEntry(scan.n, ms, flags))
        prev = ms
    return entries


def _is_stable(mode, previous, freq_tol, damping_tol):
    if not len(previous):
        return False
    freqs = previous.frequencies
    j = int(np.argmin(np.abs(freqs - mode.frequency)))
    ref = previous.modes[j]
    if mode.frequency == 0.0 or ref.frequency == 0.0:
        return False
    df = abs(mode.frequency - ref.frequency) / ref.frequency
    dz = abs(mode.damping - ref.damping) / abs(ref.damping) if ref.damping else math.inf
    return df < freq_tol and dz < damping_tol


def stabilization_frame(entries):
    rows = []
    for e in entries:
        for i, m in enumerate(e.modes.modes):
            rows.append((e.order, m.frequency, m.damping, bool(e.stable[i]) if e.stable else False))
    return pd.DataFrame(rows, columns=["order", "frequency_hz", "damping", "stable"])


@dataclass(frozen=True)
class WhitenessReport:
    acf: np.ndarray
    bound: float
    passed: bool
    exceed_fraction: float
    ci_level: float

    @property
    def max_lag(self):
        return self.acf.size - 1


def default_max_lag(n_samples):
    return int(max(1, min(200, n_samples // 10)))


def whiteness(resid, max_lag=None, ci_level=0.95, slack=0.02):
    """Sample-ACF whiteness check against ``z / sqrt(N)`` bands.

    Passes when the fraction of lags ``1..max_lag`` outside the band is at
    most ``(1 - ci_level) + slack``.
    """
    e = np.asarray(resid, dtype=float)
    N = e.size
    max_lag = default_max_lag(N) if max_lag is None else int(max_lag)
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    if N < 10 * max_lag:
        raise ValueError(f"need at least {10 * max_lag} residuals for max_lag={max_lag}")
    e = e - e.mean()
    c0 = float(e @ e)
    if c0 <= 0:
        raise DegenerateInputError("residuals have zero variance")
    nfft = 1 << int(np.ceil(np.log2(2 * N - 1)))
    spec = np.fft.rfft(e, nfft)
    acov = np.fft.irfft(spec * np.conj(spec), nfft)[: max_lag + 1]
    acf = acov / acov[0]
    acf[0] = 1.0
    bound = float(stats.norm.ppf(0.5 + ci_level / 2) / np.sqrt(N))
    exceed = float(np.mean(np.abs(acf[1:]) > bound))
    return WhitenessReport(acf, bound, exceed <= (1 - ci_level) + slack, exceed, ci_level)
