"""
Signal ingestion and preprocessing.

Response records are grouped into a :class:`SignalPool`, one record per
flight state.  Preprocessing follows the usual chain for parametric
identification: anti-aliasing low-pass (Chebyshev type II), sub-sampling
and sample-mean correction.  :func:`energy_stats` computes windowed
signal-energy statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import signal as sps
from scipy import stats

from .errors import PoolFormatError

POOL_COLUMNS = ("k1", "k2", "fs", "t", "y")


@dataclass(frozen=True, order=True)
class FlightState:
    """Operating point: airspeed ``k1`` (m/s) and angle of attack ``k2`` (deg)."""

    k1: float
    k2: float

    def __post_init__(self):
        object.__setattr__(self, "k1", float(self.k1))
        object.__setattr__(self, "k2", float(self.k2))
        if not (math.isfinite(self.k1) and math.isfinite(self.k2)):
            raise ValueError(f"flight state must be finite, got ({self.k1}, {self.k2})")

    def as_array(self):
        return np.array([self.k1, self.k2])


@dataclass(frozen=True)
class SignalRecord:
    state: FlightState
    samples: np.ndarray
    fs: float

    def __post_init__(self):
        y = np.array(self.samples, dtype=float)
        if y.ndim != 1 or y.size < 2:
            raise ValueError("a record needs a 1-D sequence of at least 2 samples")
        if not np.all(np.isfinite(y)):
            raise ValueError(f"non-finite samples in record at {self.state}")
        if not self.fs > 0:
            raise ValueError(f"sampling rate must be positive, got {self.fs}")
        y.setflags(write=False)
        object.__setattr__(self, "samples", y)
        object.__setattr__(self, "fs", float(self.fs))

    def __len__(self):
        return self.samples.size

    def replace(self, samples=None, fs=None):
        return SignalRecord(
            self.state,
            self.samples if samples is None else samples,
            self.fs if fs is None else fs,
        )


@dataclass(frozen=True)
class SignalPool:
    """Aligned records of common length and sampling rate, one per flight state."""

    records: tuple

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise PoolFormatError("a pool needs at least one record")
        lengths = {len(r) for r in records}
        if len(lengths) != 1:
            raise PoolFormatError(f"inconsistent lengths: {sorted(lengths)}")
        rates = {r.fs for r in records}
        if len(rates) != 1:
            raise PoolFormatError(f"inconsistent sampling rates: {sorted(rates)}")
        seen = set()
        for r in records:
            if r.state in seen:
                raise PoolFormatError(f"duplicate state {r.state}")
            seen.add(r.state)
        object.__setattr__(self, "records", records)

    @property
    def n_samples(self):
        return len(self.records[0])

    @property
    def fs(self):
        return self.records[0].fs

    @property
    def states(self):
        return [r.state for r in self.records]

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def record(self, state):
        for r in self.records:
            if r.state == state:
                return r
        raise KeyError(state)

    def data(self):
        """Samples as an ``(M, N)`` array in record order."""
        return np.vstack([r.samples for r in self.records])

    def map(self, fn):
        return SignalPool(tuple(fn(r) for r in self.records))


def load_pool(path, schema=None):
    """Read a pool CSV (``k1,k2,fs,t,y``, rows grouped by state).

    ``schema`` maps the canonical column names to the names used in the
    file, e.g. ``{"y": "volts"}``.  Lines starting with ``#`` are ignored.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    rename = {v: k for k, v in (schema or {}).items()}
    try:
        df = pd.read_csv(path, comment="#", float_precision="round_trip").rename(columns=rename)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise PoolFormatError(f"cannot parse {path}: {exc}") from exc
    missing = [c for c in POOL_COLUMNS if c not in df.columns]
    if missing:
        raise PoolFormatError(f"{path}: missing columns {missing}")
    try:
        df = df[list(POOL_COLUMNS)].astype(float)
    except ValueError as exc:
        raise PoolFormatError(f"{path}: non-numeric data: {exc}") from exc
    return pool_from_frame(df)


def pool_from_frame(df):
    records = []
    for (k1, k2), group in df.groupby(["k1", "k2"], sort=False):
        t = group["t"].to_numpy()
        if t.size and (t[0] != 0 or np.any(np.diff(t) != 1)):
            raise PoolFormatError(
                f"state ({k1:g}, {k2:g}): t must run 0, 1, 2, ... without gaps"
            )
        fs = group["fs"].unique()
        if fs.size != 1:
            raise PoolFormatError(f"state ({k1:g}, {k2:g}): mixed fs values {fs}")
        records.append(SignalRecord(FlightState(k1, k2), group["y"].to_numpy(), fs[0]))
    return SignalPool(tuple(records))


def pool_to_frame(pool):
    frames = []
    for r in pool:
        n = len(r)
        frames.append(pd.DataFrame({
            "k1": np.full(n, r.state.k1),
            "k2": np.full(n, r.state.k2),
            "fs": np.full(n, r.fs),
            "t": np.arange(n),
            "y": r.samples,
        }))
    return pd.concat(frames, ignore_index=True)


def save_pool(pool, path, header=None):
    """Write a pool CSV with 17 significant digits, optionally after a ``#`` header line."""
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        pool_to_frame(pool).to_csv(fh, index=False, float_format="%.17g")


def mean_correct(record):
    z = record.samples - record.samples.mean()
    # second pass removes the rounding left by the first
    return record.replace(samples=z - z.mean())


@dataclass(frozen=True)
class FilterCoeffs:
    """Cascade of second-order sections (``scipy.signal`` sos layout)."""

    sos: np.ndarray
    fs: float | None = None
    cutoff_hz: float | None = None
    description: str = ""

    def __post_init__(self):
        sos = np.atleast_2d(np.asarray(self.sos, dtype=float))
        if sos.shape[1] != 6:
            raise ValueError("sos must have 6 columns")
        object.__setattr__(self, "sos", sos)

    @classmethod
    def identity(cls):
        return cls(np.array([[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]]), description="identity")

    def poles(self):
        return np.concatenate([np.roots(s[3:]) for s in self.sos])

    def response(self, freqs, fs=None):
        fs = fs or self.fs
        _, h = sps.sosfreqz(self.sos, worN=np.asarray(freqs, dtype=float), fs=fs)
        return h

    def to_dict(self):
        return {"sos": self.sos.tolist(), "fs": self.fs, "cutoff_hz": self.cutoff_hz,
                "description": self.description}


def design_cheby2_lowpass(order, cutoff_hz, stop_atten_db=50.0, fs=1000.0):
    """Digital Chebyshev type II low-pass via the bilinear transform.

    ``cutoff_hz`` is the stopband edge: the response is at or below
    ``-stop_atten_db`` from there up to Nyquist.
    """
    if order < 2 or order % 2:
        raise ValueError(f"order must be an even integer >= 2, got {order}")
    if not 0 < cutoff_hz < fs / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie in (0, fs/2 = {fs / 2}) Hz")
    if not stop_atten_db > 0:
        raise ValueError("stopband attenuation must be positive")
    sos = sps.cheby2(order, stop_atten_db, cutoff_hz, btype="lowpass", output="sos", fs=fs)
    return FilterCoeffs(
        sos, fs=fs, cutoff_hz=cutoff_hz,
        description=f"cheby2 order={order} stop={cutoff_hz}Hz atten={stop_atten_db}dB",
    )


def apply_filter(record, filt, zero_phase=False):
    y = record.samples
    out = sps.sosfiltfilt(filt.sos, y) if zero_phase else sps.sosfilt(filt.sos, y)
    return record.replace(samples=out)


def decimate(record, filt, factor, zero_phase=False):
    """Low-pass with ``filt`` (``None`` skips filtering) and keep every ``factor``-th sample."""
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"decimation factor must be >= 1, got {factor}")
    new_fs = record.fs / factor
    if filt is not None and filt.cutoff_hz is not None and filt.cutoff_hz > new_fs / 2 + 1e-12:
        raise ValueError(
            f"filter cutoff {filt.cutoff_hz} Hz exceeds the decimated Nyquist {new_fs / 2} Hz"
        )
    y = record.samples if filt is None else apply_filter(record, filt, zero_phase).samples
    n_out = len(y) // factor
    return record.replace(samples=y[: n_out * factor : factor], fs=new_fs)


@dataclass(frozen=True)
class EnergyStats:
    """Windowed signal energy.

    Per window ``w``: ``means[w]`` is the window energy (sum of squared
    samples times the sampling period), ``std_devs[w]`` the standard error
    of that energy estimated from the spread of the instantaneous power
    inside the window, and ``ci_half_widths[w]`` the Gaussian half-width at
    ``ci_level``.  The ``population_*`` fields summarize the window
    population: mean and standard deviation of the window energies, and
    the Gaussian confidence half-width of that mean.
    """

    window_len: int
    fs: float
    means: np.ndarray
    std_devs: np.ndarray
    ci_level: float
    ci_half_widths: np.ndarray
    population_mean: float
    population_std: float
    population_half_width: float = field(default=0.0)

    @property
    def n_windows(self):
        return self.means.size

    @property
    def t_start(self):
        return np.arange(self.n_windows) * self.window_len / self.fs

    def population_bounds(self):
        return (self.population_mean - self.population_half_width,
                self.population_mean + self.population_half_width)

    def to_frame(self):
        return pd.DataFrame({
            "window_index": np.arange(self.n_windows),
            "t_start_s": self.t_start,
            "mean": self.means,
            "std": self.std_devs,
            "ci_lo": self.means - self.ci_half_widths,
            "ci_hi": self.means + self.ci_half_widths,
        })


def energy_stats(record, window_s=0.5, ci_level=0.99):
    fs = record.fs
    window_len = int(round(window_s * fs))
    if window_len < 2:
        raise ValueError(f"window of {window_s} s holds fewer than 2 samples at fs={fs}")
    n_windows = len(record) // window_len
    if n_windows < 2:
        raise ValueError(
            f"record of {len(record)} samples gives {n_windows} full window(s); need 2"
        )
    # tail samples that do not fill a window are dropped
    power = record.samples[: n_windows * window_len].reshape(n_windows, window_len) ** 2
    energies = power.sum(axis=1) / fs
    std_err = power.std(axis=1, ddof=1) * window_len / fs / np.sqrt(window_len)
    z = stats.norm.ppf(0.5 + ci_level / 2)
    pop_std = float(energies.std(ddof=1))
    return EnergyStats(
        window_len=window_len,
        fs=fs,
        means=energies,
        std_devs=std_err,
        ci_level=ci_level,
        ci_half_widths=z * std_err,
        population_mean=float(energies.mean()),
        population_std=pop_std,
        population_half_width=float(z * pop_std / np.sqrt(n_windows)),
    )
