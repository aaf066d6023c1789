import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import GRID_K1, GRID_K2, RANGES, THETA_TRUE, hetero_sigma2, make_spec
from vfpar import demo
from vfpar.ar import polynomial_from_poles
from vfpar.basis import BasisSpec, complete_basis
from vfpar.errors import UnstableModelError
from vfpar.signals import FlightState
from vfpar.simulate import (
    SimSpec, check_stability, grid_states, project_coefficients, simulate_pool, unstable_states,
)
from vfpar.spectral import ar_psd, welch_psd
from vfpar.vfp import fit_vfp

STATES = grid_states(GRID_K1, GRID_K2)
CONST = BasisSpec([(0, 0)], RANGES)


def test_ar1_variance_closed_form():
    spec = make_spec(theta=np.array([[-0.5]]), n_samples=20_000, seed=1)
    for rec in simulate_pool(spec):
        assert np.var(rec.samples) == pytest.approx(1 / (1 - 0.25), rel=0.05)


def test_zero_theta_white_noise():
    sig = hetero_sigma2(STATES)
    spec = make_spec(theta=np.zeros((2, 1)), n_samples=20_000, sigma2=sig, seed=2)
    for rec, s2 in zip(simulate_pool(spec), sig):
        assert np.var(rec.samples) == pytest.approx(s2, rel=0.05)


def test_determinism_and_seed_sensitivity():
    a, b = simulate_pool(make_spec(seed=5)), simulate_pool(make_spec(seed=5))
    assert np.array_equal(a.data(), b.data())
    assert not np.array_equal(a.data(), simulate_pool(make_spec(seed=6)).data())


def test_states_independent_by_default():
    data = simulate_pool(make_spec(theta=np.zeros((1, 1)), n_samples=20_000, seed=3)).data()
    c = np.corrcoef(data)
    assert np.max(np.abs(c[~np.eye(9, dtype=bool)])) < 4 / np.sqrt(20_000)


def test_correlated_innovations():
    g = np.array([[1.0, 0.8], [0.8, 1.0]])
    spec = make_spec(theta=np.zeros((1, 1)), states=STATES[:2], sigma2=[1.0, 1.0], gamma_e=g,
                     n_samples=20_000, seed=4)
    data = simulate_pool(spec).data()
    assert np.corrcoef(data)[0, 1] == pytest.approx(0.8, abs=0.02)
    with pytest.raises(ValueError):
        make_spec(theta=np.zeros((1, 1)), states=STATES[:2], sigma2=[1.0, 2.0], gamma_e=g)


def test_check_stability_known_poles():
    a = polynomial_from_poles([0.9 * np.exp(0.7j), 0.9 * np.exp(-0.7j), 0.5])
    mags = check_stability(a[:, None], CONST, STATES[:3])
    assert_allclose([m for _, m in mags], 0.9, atol=1e-8)
    assert check_stability(np.zeros((0, 1)), CONST, STATES[:1])[0][1] == 0.0


def test_unstable_states_ar1_subgrid():
    # a1(k) = 1.5 * U1(x1) / 2 = 1.5 x1 crosses |a1| = 1 at |x1| = 2/3
    basis = BasisSpec([(1, 0)], RANGES)
    theta = np.array([[0.75]])
    k1 = np.linspace(9, 17, 33)
    states = [FlightState(v, 0) for v in k1]
    x1 = (2 * k1 - 26) / 8
    flagged = set(unstable_states(theta, basis, states))
    expected = {s for s, x in zip(states, x1) if abs(1.5 * x) >= 1 - 1e-6}
    assert flagged == expected and flagged
    with pytest.raises(UnstableModelError, match="17"):
        simulate_pool(SimSpec(theta, basis, 200.0, states, 1.0, 100))


def test_spec_validation_and_roundtrip(tmp_path):
    with pytest.raises(ValueError):
        make_spec(burn_in=5)
    spec = make_spec(sigma2=hetero_sigma2(STATES))
    assert spec.burn_in == 200
    spec.save(tmp_path / "s.json")
    back = SimSpec.load(tmp_path / "s.json")
    assert np.array_equal(simulate_pool(back).data(), simulate_pool(spec).data())


def test_consistency_error_shrinks_with_n():
    better = 0
    basis = complete_basis(3, RANGES)
    for s in range(30):
        e1 = np.max(np.abs(fit_vfp(simulate_pool(make_spec(n_samples=500, seed=s)), 2,
                                   basis).theta - THETA_TRUE))
        e4 = np.max(np.abs(fit_vfp(simulate_pool(make_spec(n_samples=2000, seed=10_000 + s)), 2,
                                   basis).theta - THETA_TRUE))
        better += e4 < e1
    assert better >= 24


def test_sigma2_estimate_matches_truth():
    sig = hetero_sigma2(STATES)
    m = fit_vfp(simulate_pool(make_spec(n_samples=4000, sigma2=sig, seed=12)), 2,
                complete_basis(3, RANGES))
    assert_allclose(m.sigma2, sig, rtol=0.10)


def test_spectral_match_long_record():
    spec = make_spec(n_samples=60_000, seed=13, states=STATES[:1])
    rec = simulate_pool(spec).records[0]
    est = welch_psd(rec, 2048)
    par = ar_psd(spec.frozen_coeffs()[0], 1.0, est.freqs, 200.0)
    i = np.argmax(par)
    band = slice(max(i - 3, 0), i + 4)
    assert abs(10 * np.log10(est.values[band].max() / par[band].max())) < 1.0


def test_project_coefficients_exact_in_span():
    basis = complete_basis(3, RANGES)
    theta = project_coefficients(lambda k: THETA_TRUE @ np.array(
        [1.0, (2 * k.k1 - 26) / 4, (2 * k.k2 - 15) / 7.5]), basis, STATES)
    assert_allclose(theta, THETA_TRUE, atol=1e-12)


# -- bundled demo ---------------------------------------------------------------

def test_demo_spec_is_stable_and_bundled():
    spec = demo.load_bundled_spec()
    assert len(spec.states) == 144 and spec.order == demo.ORDER and spec.basis.p == demo.P
    assert max(m for _, m in check_stability(spec.theta, spec.basis, spec.states)) < 1 - 1e-6
    fresh = demo.demo_spec()
    assert_allclose(spec.theta, fresh.theta, rtol=0, atol=1e-15)


def test_demo_modes_coalesce():
    # the moving mode approaches the fixed 8.5 Hz mode as k1 rises
    from vfpar.ar import ArModel, modal
    spec = demo.demo_spec()
    gaps = []
    for k1 in (9.0, 13.0, 17.0):
        a = spec.frozen_coeffs([FlightState(k1, 5.0)])[0]
        f = np.sort(modal(ArModel(a, 1.0, spec.fs)).frequencies)
        f = f[f > 1.0]
        gaps.append(f[-1] - f[0] if f.size >= 2 else 0.0)
    assert gaps[0] > gaps[1] > gaps[2]
