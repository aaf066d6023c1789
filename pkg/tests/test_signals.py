import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from vfpar.errors import PoolFormatError
from vfpar.signals import (
    FilterCoeffs, FlightState, SignalPool, SignalRecord, decimate, design_cheby2_lowpass,
    energy_stats, load_pool, mean_correct, save_pool,
)


def _write_csv(path, groups, fs=200.0):
    lines = ["k1,k2,fs,t,y"]
    for (k1, k2), ys in groups.items():
        lines += [f"{k1},{k2},{fs},{t},{float(y)!r}" for t, y in enumerate(ys)]
    path.write_text("\n".join(lines) + "\n")


def _record(y, fs=1000.0, state=FlightState(11, 3)):
    return SignalRecord(state, np.asarray(y, dtype=float), fs)


# -- load_pool ----------------------------------------------------------------

def test_load_two_state_pool(tmp_path):
    rng = np.random.default_rng(1)
    groups = {(9.0, 0.0): rng.standard_normal(100), (10.0, 1.0): rng.standard_normal(100)}
    _write_csv(tmp_path / "p.csv", groups)
    pool = load_pool(tmp_path / "p.csv")
    assert len(pool) == 2 and pool.n_samples == 100 and pool.fs == 200.0
    assert_array_equal(pool.record(FlightState(10, 1)).samples, groups[(10.0, 1.0)])


def test_load_rejects_inconsistent_lengths(tmp_path):
    _write_csv(tmp_path / "p.csv", {(9, 0): np.ones(100), (10, 0): np.ones(99)})
    with pytest.raises(PoolFormatError, match="inconsistent lengths"):
        load_pool(tmp_path / "p.csv")


def test_load_144_state_grid(tmp_path):
    groups = {(k1, k2): np.arange(4.0) for k1 in range(9, 18) for k2 in range(16)}
    _write_csv(tmp_path / "p.csv", groups)
    assert len(load_pool(tmp_path / "p.csv")) == 144


def test_load_schema_mapping_and_gaps(tmp_path):
    (tmp_path / "a.csv").write_text("V,AoA,rate,t,volts\n9,0,100,0,1.5\n9,0,100,1,2.5\n")
    pool = load_pool(tmp_path / "a.csv", schema={"k1": "V", "k2": "AoA", "fs": "rate",
                                                 "y": "volts"})
    assert_array_equal(pool.records[0].samples, [1.5, 2.5])
    (tmp_path / "b.csv").write_text("k1,k2,fs,t,y\n9,0,100,0,1\n9,0,100,2,2\n")
    with pytest.raises(PoolFormatError):
        load_pool(tmp_path / "b.csv")
    (tmp_path / "c.csv").write_text("k1,k2,fs,t,y\n9,0,100,0,abc\n9,0,100,1,2\n")
    with pytest.raises(PoolFormatError):
        load_pool(tmp_path / "c.csv")


def test_duplicate_states_rejected():
    r = _record(np.ones(4))
    with pytest.raises(PoolFormatError, match="duplicate"):
        SignalPool((r, r))


def test_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    pool = SignalPool(tuple(_record(rng.standard_normal(50), 200.0, FlightState(9 + i, 2))
                            for i in range(3)))
    save_pool(pool, tmp_path / "r.csv", header="x")
    back = load_pool(tmp_path / "r.csv")
    assert back.states == pool.states
    assert_array_equal(back.data(), pool.data())


# -- mean_correct -------------------------------------------------------------

def test_mean_correct_examples():
    assert_array_equal(mean_correct(_record(np.full(10, 3.7))).samples, np.zeros(10))
    z = np.array([1.0, -1.0, 2.0, -2.0])
    assert_array_equal(mean_correct(_record(z)).samples, z)
    assert_allclose(mean_correct(_record([1.0, 2.0, 3.0])).samples, [-1.0, 0.0, 1.0])


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=200))
@settings(max_examples=100, deadline=None)
def test_mean_correct_properties(values):
    rec = _record(values)
    once = mean_correct(rec)
    scale = max(1.0, np.max(np.abs(values)))
    assert abs(once.samples.mean()) <= 1e-12 * scale * 10
    assert len(once) == len(rec)
    twice = mean_correct(once)
    assert_allclose(twice.samples, once.samples, rtol=0, atol=1e-9 * scale)


# -- filter design ------------------------------------------------------------

def _sos_response(sos, f, fs):
    # direct evaluation of the cascade on the unit circle
    z = np.exp(1j * 2 * np.pi * np.asarray(f) / fs)
    h = np.ones_like(z)
    for b0, b1, b2, a0, a1, a2 in sos:
        h *= (b0 + b1 / z + b2 / z**2) / (a0 + a1 / z + a2 / z**2)
    return h


def test_cheby2_stopband():
    filt = design_cheby2_lowpass(12, 80.0, 50.0, 1000.0)
    f = np.linspace(120, 500, 2000)
    mag_db = 20 * np.log10(np.abs(_sos_response(filt.sos, f, 1000.0)))
    assert mag_db.max() <= -50.0 + 1e-9


def test_cheby2_dc_gain():
    filt = design_cheby2_lowpass(2, 0.25 * 1000.0, 50.0, 1000.0)
    assert abs(20 * np.log10(abs(_sos_response(filt.sos, [0.0], 1000.0)[0]))) < 0.1


@pytest.mark.parametrize("order,cutoff", [(12, 80.0), (8, 30.0), (2, 400.0), (16, 95.0)])
def test_cheby2_poles_inside_unit_circle(order, cutoff):
    assert np.abs(design_cheby2_lowpass(order, cutoff, 50.0, 1000.0).poles()).max() < 1.0


def test_cheby2_errors():
    with pytest.raises(ValueError):
        design_cheby2_lowpass(12, 600.0, 50.0, 1000.0)
    with pytest.raises(ValueError):
        design_cheby2_lowpass(11, 80.0, 50.0, 1000.0)
    with pytest.raises(ValueError):
        design_cheby2_lowpass(12, 80.0, 0.0, 1000.0)


# -- decimate -----------------------------------------------------------------

def test_decimate_rate_and_length():
    rec = _record(np.random.default_rng(0).standard_normal(1003))
    out = decimate(rec, design_cheby2_lowpass(12, 80.0, 50.0, 1000.0), 5)
    assert out.fs == 200.0 and len(out) == 1003 // 5


def test_decimate_identity():
    y = np.random.default_rng(3).standard_normal(64)
    out = decimate(_record(y), FilterCoeffs.identity(), 1)
    assert_array_equal(out.samples, y)


def test_decimate_preserves_sinusoid_amplitude():
    fs, n = 1000.0, 20000
    t = np.arange(n) / fs
    out = decimate(_record(np.sin(2 * np.pi * 10 * t)), design_cheby2_lowpass(12, 80, 50, fs), 5)
    steady = out.samples[200:]   # skip the filter transient
    # analytic resampled sinusoid has unit amplitude
    assert abs(np.sqrt(2) * steady.std() - 1.0) < 0.02


def test_decimate_errors():
    with pytest.raises(ValueError):
        decimate(_record(np.ones(10)), None, 0)


def test_decimate_preserves_band_limited_energy():
    fs, n = 1000.0, 40000
    t = np.arange(n) / fs
    y = np.sin(2 * np.pi * 7 * t) + 0.5 * np.sin(2 * np.pi * 23.3 * t + 1) + 0.3 * np.cos(2 * np.pi * 41 * t)
    rec = _record(y, fs)
    out = decimate(rec, design_cheby2_lowpass(12, 80, 50, fs), 5, zero_phase=True)
    e_in = np.sum(y ** 2) / fs
    e_out = np.sum(out.samples ** 2) / out.fs
    assert abs(e_out / e_in - 1) < 0.02


# -- energy -------------------------------------------------------------------

def test_energy_sinusoid():
    fs = 1000.0
    t = np.arange(10000) / fs
    st_ = energy_stats(_record(np.sin(2 * np.pi * 10 * t), fs), 0.5, 0.99)
    assert_allclose(st_.means, 0.25, rtol=0.01)   # window_s / 2
    assert st_.n_windows == 20


def test_energy_zero_signal():
    st_ = energy_stats(_record(np.zeros(2000)), 0.5, 0.99)
    assert np.all(st_.means == 0) and np.all(st_.std_devs == 0)
    assert st_.population_mean == 0 and st_.population_std == 0


def test_energy_white_noise_monte_carlo():
    rng = np.random.default_rng(7)
    sigma2 = 2.5
    rec = _record(rng.standard_normal(200_000) * np.sqrt(sigma2), 1000.0)
    st_ = energy_stats(rec, 2.0, 0.99)
    assert abs(st_.population_mean / (sigma2 * 2.0) - 1) < 0.05


def test_energy_discards_tail_and_lengths():
    st_ = energy_stats(_record(np.ones(1250)), 0.5, 0.95)
    assert st_.means.size == st_.std_devs.size == st_.ci_half_widths.size == 2
    assert np.all(st_.std_devs >= 0)


def test_energy_needs_two_windows():
    with pytest.raises(ValueError):
        energy_stats(_record(np.ones(600)), 0.5, 0.99)


def test_energy_phase_invariance():
    rng = np.random.default_rng(11)
    y = rng.standard_normal(100_000)
    a = energy_stats(_record(y, 1000.0), 0.5, 0.99)
    b = energy_stats(_record(y[137:], 1000.0), 0.5, 0.99)
    assert abs(a.population_mean - b.population_mean) <= 3 * max(a.population_half_width,
                                                                 b.population_half_width)


def test_energy_frame_columns():
    df = energy_stats(_record(np.ones(2000)), 0.5, 0.99).to_frame()
    assert list(df.columns) == ["window_index", "t_start_s", "mean", "std", "ci_lo", "ci_hi"]
    assert_allclose(df["t_start_s"], [0.0, 0.5, 1.0, 1.5])
