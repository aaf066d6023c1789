"""
Spectral estimates: Welch PSD of records and FRF/PSD surfaces of a VFP model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import signal as sps

from .basis import VARIABLES, basis_matrix, normalize_state
from .errors import OutOfRangeError
from .signals import FlightState
from .vfp import freeze, freeze_extrapolate


@dataclass(frozen=True)
class PsdEstimate:
    freqs: np.ndarray
    values: np.ndarray
    resolution: float
    window: str
    overlap: float
    n_segments: int

    def to_frame(self):
        return pd.DataFrame({"frequency_hz": self.freqs, "psd": self.values})


def welch_psd(record, window_len, overlap=0.5, window="hamming"):
    """One-sided Welch PSD in V^2/Hz.

    The resolution reported is ``fs / window_len``.
    """
    y = record.samples
    window_len = int(window_len)
    if window_len > y.size:
        raise ValueError(f"window of {window_len} exceeds record length {y.size}")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must lie in [0, 1)")
    noverlap = int(round(overlap * window_len))
    step = window_len - noverlap
    n_seg = 1 + (y.size - window_len) // step
    if n_seg < 2:
        raise ValueError(f"only {n_seg} segment(s); need at least 2")
    f, pxx = sps.welch(y, fs=record.fs, window=window, nperseg=window_len,
                       noverlap=noverlap, detrend=False, return_onesided=True,
                       scaling="density")
    return PsdEstimate(f, pxx, record.fs / window_len, window, overlap, n_seg)


def _delay_matrix(order, freqs, fs):
    # columns z^{-i} evaluated on the unit circle, i = 0..order
    return np.exp(-2j * np.pi * np.outer(np.asarray(freqs, dtype=float), np.arange(order + 1)) / fs)


def ar_frf(coeffs, freqs, fs):
    """``|1 / A(e^{-j 2 pi f / fs})|`` for AR coefficients ``a_1..a_n``."""
    poly = np.concatenate(([1.0], np.asarray(coeffs, dtype=float)))
    return 1.0 / np.abs(_delay_matrix(poly.size - 1, freqs, fs) @ poly)


def ar_psd(coeffs, sigma2, freqs, fs):
    """One-sided parametric PSD ``sigma2 |H|^2 2 / fs``."""
    return sigma2 * ar_frf(coeffs, freqs, fs) ** 2 * 2.0 / fs


def frf_magnitude(model, k, freqs, extrapolate=False):
    fm = freeze_extrapolate(model, k) if extrapolate else freeze(model, k)
    return ar_frf(fm.coeffs, freqs, model.fs)


def parametric_psd(model, k, freqs, extrapolate=False):
    fm = freeze_extrapolate(model, k) if extrapolate else freeze(model, k)
    return ar_psd(fm.coeffs, fm.ar.sigma2, freqs, model.fs)


def grid_axis(start, stop, step):
    """Inclusive arithmetic grid ``start, start+step, ..., stop``."""
    if step <= 0:
        raise ValueError("step must be positive")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    if count < 1:
        raise ValueError(f"empty grid [{start}, {stop}] step {step}")
    return start + step * np.arange(count)


@dataclass(frozen=True)
class FrfSurface:
    """FRF magnitudes (dB) on a (swept state) x (frequency) grid."""

    freq_axis: np.ndarray
    sweep_variable: str
    sweep_axis: np.ndarray
    fixed_variable: str
    fixed_value: float
    magnitudes_db: np.ndarray   # (len(sweep_axis), len(freq_axis))
    extrapolated: np.ndarray    # (len(sweep_axis),) bool

    @property
    def states(self):
        if self.sweep_variable == "k1":
            return [FlightState(v, self.fixed_value) for v in self.sweep_axis]
        return [FlightState(self.fixed_value, v) for v in self.sweep_axis]

    def metadata(self):
        fa, sa = self.freq_axis, self.sweep_axis
        return {
            "layout": "rows = swept state values (first column), columns = frequency (header row, Hz)",
            "units": "dB re 1 (20 log10 |H|)",
            "sweep_variable": self.sweep_variable,
            "sweep_start": float(sa[0]),
            "sweep_stop": float(sa[-1]),
            "sweep_step": float(sa[1] - sa[0]) if sa.size > 1 else 0.0,
            "fixed_variable": self.fixed_variable,
            "fixed_value": self.fixed_value,
            "freq_start": float(fa[0]),
            "freq_stop": float(fa[-1]),
            "freq_step": float(fa[1] - fa[0]) if fa.size > 1 else 0.0,
            "shape": [int(sa.size), int(fa.size)],
            "extrapolated_rows": int(self.extrapolated.sum()),
        }


def frf_surface(model, sweep, start, stop, step, fixed, f_start, f_stop, f_step,
                extrapolate=False):
    """Evaluate the frozen-model FRF over a one-variable sweep of flight states.

    Parameters
    ----------
    sweep : {"k1", "k2"}
        Variable that varies along the rows; the other is held at ``fixed``.
    """
    if sweep not in VARIABLES:
        raise ValueError(f"sweep must be one of {VARIABLES}")
    fixed_var = VARIABLES[1 - VARIABLES.index(sweep)]
    values = grid_axis(start, stop, step)
    freqs = grid_axis(f_start, f_stop, f_step)
    states = [FlightState(v, fixed) if sweep == "k1" else FlightState(fixed, v) for v in values]
    mask = np.zeros(len(states), dtype=bool)
    for i, s in enumerate(states):
        try:
            normalize_state(s, model.basis.ranges)
        except OutOfRangeError:
            if not extrapolate:
                raise
            mask[i] = True
    coeffs = basis_matrix(model.basis, states, extrapolate=True) @ model.theta.T
    poly = np.hstack([np.ones((len(states), 1)), coeffs])
    resp = poly @ _delay_matrix(model.order, freqs, model.fs).T
    mags = -20.0 * np.log10(np.abs(resp))
    return FrfSurface(freqs, sweep, values, fixed_var, float(fixed), mags, mask)


def write_surface(surface, path, header=None):
    """Write the surface CSV plus ``.meta.json`` and, when needed, ``.mask.csv``.

    ``header`` goes on a leading ``#`` line of the CSV.
    """
    path = Path(path)
    df = pd.DataFrame(surface.magnitudes_db, columns=[f"{f:.10g}" for f in surface.freq_axis])
    df.insert(0, surface.sweep_variable, surface.sweep_axis)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        df.to_csv(fh, index=False, float_format="%.17g")
    meta = surface.metadata()
    if surface.extrapolated.any():
        mask_path = path.with_suffix(".mask.csv")
        pd.DataFrame({surface.sweep_variable: surface.sweep_axis,
                      "extrapolated": surface.extrapolated.astype(int)}).to_csv(
            mask_path, index=False, float_format="%.17g")
        meta["mask_file"] = mask_path.name
    path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=1))
    return path


def read_surface(path):
    """Inverse of :func:`write_surface`; returns ``(sweep_axis, freq_axis, magnitudes_db)``."""
    df = pd.read_csv(path, comment="#", float_precision="round_trip")
    sweep = df.iloc[:, 0].to_numpy()
    freqs = np.array([float(c) for c in df.columns[1:]])
    return sweep, freqs, df.iloc[:, 1:].to_numpy()


def track_peaks(freqs, magnitudes_db, prominence_db=3.0):
    """Peak frequencies per surface row (local maxima with the given prominence)."""
    out = []
    for row in np.atleast_2d(magnitudes_db):
        idx, _ = sps.find_peaks(row, prominence=prominence_db)
        out.append(freqs[idx])
    return out
