import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from vfpar.ar import (
    ArModel, bic, bic_value, fit_ar, lag_matrix, modal, order_scan, polynomial_from_poles,
    poles_to_modes, residuals, rss_sss, stabilization_diagram, stabilization_frame, whiteness,
)
from vfpar.errors import DegenerateInputError
from vfpar.simulate import ar_filter

FS = 200.0


def _ar(coeffs, n, seed, burn=500):
    rng = np.random.default_rng(seed)
    return ar_filter(np.asarray(coeffs, float), rng.standard_normal(n + burn))[burn:]


def _two_mode_ar4():
    poles = [0.97 * np.exp(1j * 2 * np.pi * 12 / FS), 0.95 * np.exp(1j * 2 * np.pi * 40 / FS)]
    return polynomial_from_poles(poles + [np.conj(p) for p in poles])


# -- fit_ar -------------------------------------------------------------------

def test_fit_ar1():
    y = _ar([-0.5], 10_000, 0)
    m = fit_ar(y, 1)
    se = math.sqrt((1 - 0.25) / y.size)   # asymptotic SE of the AR(1) estimate
    assert abs(m.coeffs[0] + 0.5) < 0.03
    assert abs(m.coeffs[0] + 0.5) < 3 * se
    assert m.sigma2 == pytest.approx(1.0, rel=0.05)


def test_fit_noise_free_ar2():
    a = np.array([-1.6, 0.8])
    y = np.zeros(500)
    y[0], y[1] = 1.0, 0.5
    for t in range(2, y.size):
        y[t] = -a[0] * y[t - 1] - a[1] * y[t - 2]
    y += 1e-12 * np.random.default_rng(0).standard_normal(y.size)
    m = fit_ar(y, 2)
    assert_allclose(m.coeffs, a, atol=1e-6)
    assert rss_sss(ArModel(a, 0.0), y - 0) < 1e-12


def test_fit_errors():
    with pytest.raises(DegenerateInputError):
        fit_ar(np.zeros(100), 2)
    with pytest.raises(DegenerateInputError):
        fit_ar(np.ones(100), 2)
    with pytest.raises(ValueError):
        fit_ar(np.ones(5), 2)


def test_lag_matrix_layout():
    phi, target = lag_matrix(np.arange(6.0), 2)
    assert_allclose(phi, [[-1, 0], [-2, -1], [-3, -2], [-4, -3]])
    assert_allclose(target, [2, 3, 4, 5])


@given(st.floats(1e-3, 1e3), st.integers(0, 50))
@settings(max_examples=30, deadline=None)
def test_scale_invariance(c, seed):
    y = _ar([-0.9, 0.2], 400, seed)
    m1, m2 = fit_ar(y, 3), fit_ar(c * y, 3)
    assert_allclose(m2.coeffs, m1.coeffs, atol=1e-10)
    assert m2.sigma2 == pytest.approx(c**2 * m1.sigma2, rel=1e-9)
    assert rss_sss(m2, c * y) == pytest.approx(rss_sss(m1, y), rel=1e-9)


@given(st.integers(0, 200), st.integers(1, 8))
@settings(max_examples=30, deadline=None)
def test_residual_orthogonality(seed, n):
    y = _ar([-0.5, 0.3], 600, seed)
    m = fit_ar(y, n)
    phi, _ = lag_matrix(y, n)
    e = residuals(m, y)
    rel = np.abs(phi.T @ e) / (np.linalg.norm(phi, axis=0) * np.linalg.norm(e))
    assert rel.max() < 1e-8


# -- metrics ------------------------------------------------------------------

def test_rss_sss_white_noise():
    y = np.random.default_rng(3).standard_normal(20_000)
    assert abs(rss_sss(fit_ar(y, 5), y) - 1.0) < 0.05


def test_bic_formula():
    assert bic_value(1.0, 100, 5) == pytest.approx(5 * math.log(100))
    assert bic_value(1.0, 100, 5) == pytest.approx(23.026, abs=1e-3)
    assert bic_value(2.0, 500, 8) - bic_value(2.0, 500, 4) == pytest.approx(4 * math.log(500))
    with pytest.warns(RuntimeWarning):
        assert bic_value(0.0, 100, 2) == -math.inf


def test_bic_selects_true_order():
    hits = 0
    for seed in range(100):
        y = _ar([-1.2, 0.6], 2000, 1000 + seed)
        scan = order_scan(y, 1, 10)
        hits += min(scan, key=lambda e: e.bic).n == 2
    assert hits >= 95


def test_bic_consistent_with_model():
    y = _ar([-0.5], 300, 1)
    m = fit_ar(y, 2)
    e = residuals(m, y)
    assert bic(m, y) == pytest.approx(e.size * math.log(e @ e / e.size) + 2 * math.log(e.size))


# -- order scan ---------------------------------------------------------------

def test_order_scan_knee():
    y = _ar(_two_mode_ar4(), 5000, 4)
    scan = order_scan(y, 1, 10)
    r = [e.rss_sss for e in scan]
    assert all(r[i + 1] <= r[i] * (1 + 1e-10) for i in range(len(r) - 1))
    drop_in, drop_out = r[2] - r[3], r[3] - r[4]
    assert drop_in / drop_out > 10


def test_order_scan_step():
    y = _ar([-0.5], 300, 2)
    assert [e.n for e in order_scan(y, 2, 6, step=2)] == [2, 4, 6]
    with pytest.raises(ValueError):
        order_scan(y[:20], 1, 10)


@given(st.integers(0, 1000))
@settings(max_examples=15, deadline=None)
def test_order_scan_monotone(seed):
    y = np.random.default_rng(seed).standard_normal(300)
    r = [e.rss_sss for e in order_scan(y, 1, 12)]
    assert all(b <= a * (1 + 1e-10) for a, b in zip(r, r[1:]))


# -- modal --------------------------------------------------------------------

def test_modal_known_poles():
    lam = 0.9 * np.exp(1j * 2 * np.pi * 10 / FS)
    ms = modal(ArModel(polynomial_from_poles([lam, np.conj(lam)]), 1.0, FS))
    assert len(ms) == 1
    s = FS * np.log(lam)
    assert ms.frequencies[0] == pytest.approx(10.0, abs=0.01)
    assert ms.dampings[0] == pytest.approx(-s.real / abs(s), abs=1e-6)


def test_modal_real_and_unit_circle():
    ms = poles_to_modes([0.5], FS)
    assert ms.frequencies[0] == 0.0 and ms.dampings[0] == 1.0
    lam = np.exp(1j * np.pi / 4)
    ms = poles_to_modes([lam, np.conj(lam)], FS)
    assert ms.frequencies[0] == pytest.approx(25.0, abs=1e-9)
    assert ms.dampings[0] == pytest.approx(0.0, abs=1e-9)


def test_modal_origin_skipped():
    with pytest.warns(RuntimeWarning):
        ms = poles_to_modes([0.0, 0.5], FS)
    assert ms.n_skipped == 1 and len(ms) == 1


@given(st.lists(st.tuples(st.floats(0.05, 0.98), st.floats(0.05, 3.0)), min_size=1, max_size=5,
                unique_by=lambda t: round(t[1], 2)))
@settings(max_examples=50, deadline=None)
def test_poles_roundtrip(pairs):
    poles = []
    for r, ang in pairs:
        lam = r * np.exp(1j * ang)
        poles += [lam, np.conj(lam)]
    a = polynomial_from_poles(poles)
    back = np.roots(np.concatenate(([1.0], a)))
    # match each true pole to its nearest recovered root
    for lam in poles:
        assert np.min(np.abs(back - lam)) < 1e-8 / (1 - max(r for r, _ in pairs)) ** 2 + 1e-8


@given(st.lists(st.complex_numbers(max_magnitude=0.99, min_magnitude=0.01), min_size=1,
                max_size=6))
@settings(max_examples=50, deadline=None)
def test_modal_frequency_bounds(raw):
    poles = list(raw) + [np.conj(p) for p in raw]
    ms = poles_to_modes(poles, FS)
    assert np.all(ms.frequencies >= 0) and np.all(ms.frequencies <= FS / 2 + 1e-9)


# -- stabilization ------------------------------------------------------------

def _true_modes_stable(entries, freqs=(12.0, 40.0)):
    for e in entries:
        if e.order < 6:
            continue
        for f_true in freqs:
            j = int(np.argmin(np.abs(e.modes.frequencies - f_true)))
            if abs(e.modes.frequencies[j] - f_true) > 0.5 or not e.stable[j]:
                return False
    return True


def test_stabilization_true_modes():
    # damping estimates carry a few percent of noise, so an occasional order
    # drifts past the 10% damping threshold; require it in most trials
    ok = [_true_modes_stable(stabilization_diagram(_ar(_two_mode_ar4(), 10_000, s), 2, 20, fs=FS))
          for s in range(20)]
    assert np.mean(ok) >= 0.7


def _longest_stable_run(entries):
    # longest chain of consecutive orders in which some mode near the same frequency stays stable
    best = 0
    for e0_index in range(len(entries)):
        for m in entries[e0_index].modes.modes:
            f, run = m.frequency, 1
            for e in entries[e0_index + 1:]:
                if not len(e.modes):
                    break
                j = int(np.argmin(np.abs(e.modes.frequencies - f)))
                if not e.stable[j] or abs(e.modes.frequencies[j] - f) > 0.01 * f * 2:
                    break
                f, run = e.modes.frequencies[j], run + 1
            best = max(best, run)
    return best


def test_stabilization_white_noise():
    ok = 0
    for seed in range(50):
        y = np.random.default_rng(200 + seed).standard_normal(2000)
        ok += _longest_stable_run(stabilization_diagram(y, 2, 20, fs=FS)) < 5
    assert ok >= 45


def test_stabilization_single_order():
    y = _ar([-0.5], 500, 9)
    entries = stabilization_diagram(y, 4, 4, fs=FS)
    assert len(entries) == 1 and entries[0].stable == ()
    df = stabilization_frame(stabilization_diagram(y, 2, 4, fs=FS))
    assert list(df.columns) == ["order", "frequency_hz", "damping", "stable"]


# -- whiteness ----------------------------------------------------------------

def test_whiteness_white_noise():
    rep = whiteness(np.random.default_rng(0).standard_normal(10_000), 50, 0.95)
    assert rep.acf[0] == 1.0
    assert rep.passed and rep.exceed_fraction <= 0.07


def test_whiteness_pass_rate_matches_binomial():
    # each lag exceeds with probability ~0.05; pass iff at most floor(0.07 * 50) = 3 exceed
    expected = stats.binom.cdf(3, 50, 0.05)
    rate = np.mean([whiteness(np.random.default_rng(s).standard_normal(5000), 50).passed
                    for s in range(300)])
    assert abs(rate - expected) < 4 * math.sqrt(expected * (1 - expected) / 300)


def test_whiteness_ar1_fails():
    rep = whiteness(_ar([-0.9], 10_000, 1), 50, 0.95)
    assert not rep.passed
    assert rep.acf[1] == pytest.approx(0.9, abs=0.02)
    assert rep.bound == pytest.approx(1.959964 / 100, rel=1e-5)


def test_whiteness_errors():
    with pytest.raises(DegenerateInputError):
        whiteness(np.ones(1000), 10)
    with pytest.raises(ValueError):
        whiteness(np.random.default_rng(0).standard_normal(100), 50)
