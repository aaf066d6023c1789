"""
Global VFP-AR estimation.

A VFP-AR(n)_p model lets every AR coefficient depend on the flight state
through a functional basis,

    a_i(k) = sum_j theta[i, j] * G_j(k),

so the whole pool of records is one linear regression in ``theta`` whose
rows are ``[-y_k[t-1], ..., -y_k[t-n]] (x) g(k)``.  ``theta`` is estimated
by OLS, then by weighted least squares using the cross-state residual
covariance estimated from the OLS residuals.

Rows are laid out state-major: row ``m * T + t`` holds state ``m`` at
time ``start + t``.  The residual covariance of the stacked system is
therefore ``kron(gamma_e, I_T)``, and weighting is applied by whitening
each time slice with the Cholesky factor of ``gamma_e``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, stats
from scipy.interpolate import RegularGridInterpolator

from . import __version__
from .ar import ArModel, lag_matrix
from .basis import BasisSpec, basis_matrix, eval_basis, normalize_state
from .errors import DegenerateInputError, RankDeficiencyError
from .linalg import lstsq_qr
from .signals import FlightState, SignalPool

METHODS = ("ols", "wls-1", "wls-iterated")
SIDECAR_THRESHOLD = 500
EIG_FLOOR = 1e-10
RIDGE = 1e-8


@dataclass
class PooledRegression:
    y: np.ndarray
    phi: np.ndarray
    states: tuple
    order: int
    basis: BasisSpec
    start: int
    n_samples: int

    @property
    def n_states(self):
        return len(self.states)

    @property
    def n_time(self):
        return self.n_samples - self.start

    @property
    def row_index(self):
        """``(rows, 2)`` array of (state index, sample index) per row."""
        T = self.n_time
        m = np.repeat(np.arange(self.n_states), T)
        t = np.tile(np.arange(self.start, self.n_samples), self.n_states)
        return np.column_stack([m, t])

    def column_labels(self):
        return [f"a[{i + 1},{j + 1}]" for i in range(self.order) for j in range(self.basis.p)]


def regression_shape(n_samples, n, p, n_states, start=None):
    """``(rows, columns)`` of the pooled regressor without building it."""
    start = n if start is None else start
    return n_states * (n_samples - start), n * p


def _check_pool(pool, n, basis):
    if n < 1:
        raise ValueError("order must be >= 1")
    if pool.n_samples <= 2 * n + 1:
        raise ValueError(f"records of {pool.n_samples} samples too short for order {n}")
    return basis_matrix(basis, pool.states)


def assemble(pool, n, basis, start=None):
    """Stack the regression of every record into one ``(M*T, n*p)`` system."""
    G = _check_pool(pool, n, basis)
    start = n if start is None else int(start)
    p = basis.p
    T = pool.n_samples - start
    phi = np.empty((len(pool) * T, n * p))
    y = np.empty(len(pool) * T)
    for m, (rec, g) in enumerate(zip(pool, G)):
        lags, target = lag_matrix(rec.samples, n, start)
        rows = slice(m * T, (m + 1) * T)
        phi[rows] = (lags[:, :, None] * g[None, None, :]).reshape(T, n * p)
        y[rows] = target
    return PooledRegression(y, phi, tuple(pool.states), n, basis, start, pool.n_samples)


def _ols(reg):
    return lstsq_qr(reg.phi, reg.y, labels=reg.column_labels())


def estimate_ols(reg):
    """OLS projection coefficients as an ``(n, p)`` matrix."""
    return _ols(reg).x.reshape(reg.order, reg.basis.p)


def residual_matrix(reg, theta):
    e = reg.y - reg.phi @ np.ravel(theta)
    return e.reshape(reg.n_states, reg.n_time)


def estimate_residual_covariance(reg, theta):
    """Per-state residual variances and the ``M x M`` cross-covariance."""
    E = residual_matrix(reg, theta)
    gamma = E @ E.T / reg.n_time
    gamma = 0.5 * (gamma + gamma.T)
    return np.diag(gamma).copy(), gamma


def whitening_factor(gamma_e):
    """Lower Cholesky factor of the conditioned residual covariance.

    Eigenvalues are floored at ``1e-10`` of the mean variance.  If the
    factorization still fails a small ridge is added, and as a last
    resort only the diagonal is used.
    """
    g = np.asarray(gamma_e, dtype=float)
    g = 0.5 * (g + g.T)
    M = g.shape[0]
    scale = np.trace(g) / M
    if not scale > 0:
        raise DegenerateInputError("residual covariance has zero trace")
    w, v = linalg.eigh(g)
    floor = EIG_FLOOR * scale
    if w.min() < floor:
        g = (v * np.maximum(w, floor)) @ v.T
        g = 0.5 * (g + g.T)
    try:
        return linalg.cholesky(g, lower=True)
    except linalg.LinAlgError:
        warnings.warn("residual covariance not positive definite; adding ridge", RuntimeWarning)
    try:
        return linalg.cholesky(g + RIDGE * scale * np.eye(M), lower=True)
    except linalg.LinAlgError:
        warnings.warn("ridge failed; falling back to diagonal residual covariance",
                      RuntimeWarning)
        return np.diag(np.sqrt(np.maximum(np.diag(g), floor)))


def _whiten(reg, chol):
    M, T, q = reg.n_states, reg.n_time, reg.phi.shape[1]
    wy = linalg.solve_triangular(chol, reg.y.reshape(M, T), lower=True)
    wphi = linalg.solve_triangular(chol, reg.phi.reshape(M, T * q), lower=True)
    return wy.reshape(M * T), wphi.reshape(M * T, q)


def _wls(reg, gamma_e):
    wy, wphi = _whiten(reg, whitening_factor(gamma_e))
    return lstsq_qr(wphi, wy, labels=reg.column_labels())


def estimate_wls(reg, gamma_e):
    """WLS projection coefficients for residual covariance ``kron(gamma_e, I)``."""
    return _wls(reg, gamma_e).x.reshape(reg.order, reg.basis.p)


def _sandwich(reg, gamma_e, ols_result):
    M, T, q = reg.n_states, reg.n_time, reg.phi.shape[1]
    bread = ols_result.unscaled_covariance()
    g_phi = (np.asarray(gamma_e) @ reg.phi.reshape(M, T * q)).reshape(M * T, q)
    meat = reg.phi.T @ g_phi
    cov = bread @ meat @ bread
    return 0.5 * (cov + cov.T)


def parameter_covariance(reg, gamma_e, estimator="wls"):
    """Covariance of the projection-coefficient estimate.

    ``estimator="wls"`` gives ``(Phi^T W Phi)^{-1}`` with ``W`` the inverse
    of ``kron(gamma_e, I)``.  ``estimator="ols"`` gives the sandwich
    ``(Phi^T Phi)^{-1} Phi^T Gamma Phi (Phi^T Phi)^{-1}``.
    """
    if estimator == "wls":
        return _wls(reg, gamma_e).unscaled_covariance()
    if estimator == "ols":
        return _sandwich(reg, gamma_e, _ols(reg))
    raise ValueError(f"unknown estimator {estimator!r}")


@dataclass(frozen=True)
class ConfidenceBand:
    estimate: float
    half_width: float
    level: float

    @property
    def lower(self):
        return self.estimate - self.half_width

    @property
    def upper(self):
        return self.estimate + self.half_width

    def contains(self, value):
        return self.lower <= value <= self.upper


@dataclass(frozen=True)
class VfpArModel:
    order: int
    basis: BasisSpec
    theta: np.ndarray
    training_states: tuple
    sigma2: np.ndarray
    gamma_e: np.ndarray
    p_theta: np.ndarray
    fs: float
    method: str = "wls-1"
    converged: bool = True
    n_iter: int = 1
    start: int | None = None
    n_samples: int | None = None

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(self.order, self.basis.p)
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta has non-finite entries")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "training_states", tuple(self.training_states))
        for name in ("sigma2", "gamma_e", "p_theta"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        theta.setflags(write=False)

    @property
    def p(self):
        return self.basis.p

    @property
    def sigma2_by_state(self):
        return dict(zip(self.training_states, self.sigma2.tolist()))

    def std_errors(self):
        return np.sqrt(np.maximum(np.diag(self.p_theta), 0.0)).reshape(self.order, self.p)

    def coefficients_at(self, k, extrapolate=False):
        return self.theta @ eval_basis(self.basis, k, extrapolate)

    def sigma2_at(self, k):
        """Innovation variance at ``k`` and whether it was interpolated."""
        lookup = self.sigma2_by_state
        if k in lookup:
            return lookup[k], False
        grid = _rect_grid(self.training_states, self.sigma2)
        if grid is not None:
            axes, values = grid
            inside = axes[0][0] <= k.k1 <= axes[0][-1] and axes[1][0] <= k.k2 <= axes[1][-1]
            if inside:
                interp = RegularGridInterpolator(axes, values, method="linear")
                return float(interp([[k.k1, k.k2]])[0]), True
        x = normalize_state(k, self.basis.ranges, extrapolate=True)
        pts = np.array([normalize_state(s, self.basis.ranges, extrapolate=True)
                        for s in self.training_states])
        j = int(np.argmin(np.sum((pts - x) ** 2, axis=1)))
        return float(self.sigma2[j]), True


def _rect_grid(states, values):
    k1 = sorted({s.k1 for s in states})
    k2 = sorted({s.k2 for s in states})
    if len(k1) < 2 or len(k2) < 2 or len(k1) * len(k2) != len(states):
        return None
    table = np.full((len(k1), len(k2)), np.nan)
    i1 = {v: i for i, v in enumerate(k1)}
    i2 = {v: i for i, v in enumerate(k2)}
    for s, v in zip(states, values):
        table[i1[s.k1], i2[s.k2]] = v
    if np.isnan(table).any():
        return None
    return (np.array(k1), np.array(k2)), table


def _pooled_theta_change(new, old):
    denom = np.linalg.norm(new)
    return np.linalg.norm(new - old) / denom if denom > 0 else np.linalg.norm(new - old)


def fit_vfp(pool, n, basis, method="wls-1", max_wls_iters=20, tol=1e-8,
            start=None, solver="qr", chunk=256):
    """Estimate a VFP-AR model from a signal pool.

    Parameters
    ----------
    pool : SignalPool
    n : int
        AR order.
    basis : BasisSpec
    method : {"ols", "wls-1", "wls-iterated"}
        ``wls-1`` runs one OLS -> covariance -> WLS pass; ``wls-iterated``
        repeats covariance/WLS until the relative change of theta drops
        below ``tol`` or ``max_wls_iters`` passes have run.
    start : int, optional
        First predicted sample; defaults to ``n``.
    solver : {"qr", "normal"}
        ``qr`` factorizes the assembled regressor.  ``normal`` streams
        normal equations and never forms the full regressor, for pools too
        large to hold in memory.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    if solver == "normal":
        return _fit_vfp_streamed(pool, n, basis, method, max_wls_iters, tol, start, chunk)
    if solver != "qr":
        raise ValueError(f"unknown solver {solver!r}")
    reg = assemble(pool, n, basis, start)
    ols = _ols(reg)
    theta = ols.x
    sigma2, gamma = estimate_residual_covariance(reg, theta)
    converged, n_iter = True, 0
    if method == "ols":
        p_theta = _sandwich(reg, gamma, ols)
    else:
        converged = method == "wls-1"
        for _ in range(max_wls_iters):
            res = _wls(reg, gamma)
            n_iter += 1
            delta = _pooled_theta_change(res.x, theta)
            theta = res.x
            sigma2, gamma = estimate_residual_covariance(reg, theta)
            if method == "wls-1":
                break
            if delta < tol:
                converged = True
                break
        p_theta = res.unscaled_covariance()
        if not converged:
            warnings.warn(f"iterated WLS did not converge in {max_wls_iters} passes",
                          RuntimeWarning)
    return VfpArModel(
        order=n, basis=basis, theta=theta, training_states=reg.states,
        sigma2=sigma2, gamma_e=gamma, p_theta=p_theta, fs=pool.fs, method=method,
        converged=converged, n_iter=n_iter, start=reg.start, n_samples=pool.n_samples,
    )


# -- streamed normal equations ------------------------------------------------

def lagged_gram(y, n, start=None):
    """``(Phi^T Phi, Phi^T y)`` of a single record's AR regression."""
    lags, target = lag_matrix(y, n, start)
    return lags.T @ lags, lags.T @ target


def _chol_solve(gram, rhs, labels):
    try:
        cf = linalg.cho_factor(gram, lower=True)
    except linalg.LinAlgError as exc:
        d = np.diag(gram)
        bad = [labels[i] for i in np.flatnonzero(d <= 1e-12 * d.max())] or labels
        raise RankDeficiencyError(bad, f"normal matrix not positive definite: {exc}") from exc
    return linalg.cho_solve(cf, rhs), cf


def normal_equations_ols(pool, n, basis, start=None):
    """Gram matrix and right-hand side of the pooled OLS problem.

    Uses ``(l (x) g)(l (x) g)^T = (l l^T) (x) (g g^T)``, so each record only
    contributes its ``n x n`` lagged Gram matrix.
    """
    G = _check_pool(pool, n, basis)
    q = n * basis.p
    gram = np.zeros((q, q))
    rhs = np.zeros(q)
    for rec, g in zip(pool, G):
        R, r = lagged_gram(rec.samples, n, start)
        gram += np.kron(R, np.outer(g, g))
        rhs += np.kron(r, g)
    return 0.5 * (gram + gram.T), rhs


def estimate_ols_streamed(pool, n, basis, start=None):
    gram, rhs = normal_equations_ols(pool, n, basis, start)
    labels = [f"a[{i + 1},{j + 1}]" for i in range(n) for j in range(basis.p)]
    theta, _ = _chol_solve(gram, rhs, labels)
    return theta.reshape(n, basis.p)


def residuals_by_state(pool, n, basis, theta, start=None):
    """``(M, T)`` one-step-ahead residuals of every record, without assembling the regressor."""
    start = n if start is None else start
    A = basis_matrix(basis, pool.states) @ np.asarray(theta).reshape(n, basis.p).T
    rows = []
    for rec, a in zip(pool, A):
        lags, target = lag_matrix(rec.samples, n, start)
        rows.append(target - lags @ a)
    return np.vstack(rows)


def _time_chunks(pool, n, basis, start, chunk):
    """Yield ``(X, Y)`` with ``X`` of shape ``(M, Tc, q)`` over consecutive time blocks."""
    G = basis_matrix(basis, pool.states)
    data = pool.data()
    M, N = data.shape
    p = basis.p
    for t0 in range(start, N, chunk):
        t1 = min(N, t0 + chunk)
        idx = np.arange(t0, t1)
        lags = -np.stack([data[:, idx - i] for i in range(1, n + 1)], axis=2)  # (M, Tc, n)
        X = (lags[:, :, :, None] * G[:, None, None, :]).reshape(M, t1 - t0, n * p)
        yield X, data[:, t0:t1]


def _streamed_weighted(pool, n, basis, start, chunk, chol=None, gamma=None):
    """Accumulate ``X^T W X`` and ``X^T W y`` (``chol`` given) or ``X^T Gamma X`` (``gamma``)."""
    q = n * basis.p
    lhs = np.zeros((q, q))
    rhs = np.zeros(q)
    for X, Y in _time_chunks(pool, n, basis, start, chunk):
        M, Tc, _ = X.shape
        if gamma is not None:
            GX = (gamma @ X.reshape(M, Tc * q)).reshape(M * Tc, q)
            lhs += X.reshape(M * Tc, q).T @ GX
            continue
        wx = linalg.solve_triangular(chol, X.reshape(M, Tc * q), lower=True).reshape(M * Tc, q)
        wy = linalg.solve_triangular(chol, Y, lower=True).reshape(M * Tc)
        lhs += wx.T @ wx
        rhs += wx.T @ wy
    return 0.5 * (lhs + lhs.T), rhs


def _fit_vfp_streamed(pool, n, basis, method, max_wls_iters, tol, start, chunk):
    start = n if start is None else int(start)
    labels = [f"a[{i + 1},{j + 1}]" for i in range(n) for j in range(basis.p)]
    gram, rhs = normal_equations_ols(pool, n, basis, start)
    theta, cf = _chol_solve(gram, rhs, labels)
    T = pool.n_samples - start

    def cov(th):
        E = residuals_by_state(pool, n, basis, th, start)
        g = E @ E.T / T
        g = 0.5 * (g + g.T)
        return np.diag(g).copy(), g

    sigma2, gamma = cov(theta)
    converged, n_iter = True, 0
    if method == "ols":
        bread = linalg.cho_solve(cf, np.eye(gram.shape[0]))
        meat, _ = _streamed_weighted(pool, n, basis, start, chunk, gamma=gamma)
        p_theta = bread @ meat @ bread
    else:
        converged = method == "wls-1"
        for _ in range(max_wls_iters):
            lhs, wrhs = _streamed_weighted(pool, n, basis, start, chunk,
                                           chol=whitening_factor(gamma))
            new, wcf = _chol_solve(lhs, wrhs, labels)
            n_iter += 1
            delta = _pooled_theta_change(new, theta)
            theta = new
            sigma2, gamma = cov(theta)
            if method == "wls-1":
                break
            if delta < tol:
                converged = True
                break
        p_theta = linalg.cho_solve(wcf, np.eye(lhs.shape[0]))
    return VfpArModel(
        order=n, basis=basis, theta=theta, training_states=tuple(pool.states),
        sigma2=sigma2, gamma_e=gamma, p_theta=0.5 * (p_theta + p_theta.T), fs=pool.fs,
        method=method, converged=converged, n_iter=n_iter, start=start,
        n_samples=pool.n_samples,
    )


# -- using a fitted model -----------------------------------------------------

@dataclass(frozen=True)
class FrozenModel:
    """Local AR model at a fixed flight state, with coefficient uncertainty."""

    state: FlightState
    ar: ArModel
    std_errors: np.ndarray
    ci_level: float
    half_widths: np.ndarray
    unstable: bool
    extrapolated: bool
    sigma2_interpolated: bool
    max_root: float = field(default=0.0)

    @property
    def coeffs(self):
        return self.ar.coeffs

    @property
    def bands(self):
        return [ConfidenceBand(float(a), float(h), self.ci_level)
                for a, h in zip(self.ar.coeffs, self.half_widths)]


def _freeze(model, k, ci_level, extrapolate):
    x = normalize_state(k, model.basis.ranges, extrapolate=extrapolate)
    g = eval_basis(model.basis, k, extrapolate=extrapolate)
    coeffs = model.theta @ g
    n, p = model.order, model.p
    blocks = np.einsum("ajak->ajk", model.p_theta.reshape(n, p, n, p))
    var = np.einsum("j,ijk,k->i", g, blocks, g)
    std = np.sqrt(np.maximum(var, 0.0))
    z = stats.norm.ppf(0.5 + ci_level / 2)
    sigma2, interpolated = model.sigma2_at(k)
    ar = ArModel(coeffs, sigma2, model.fs)
    max_root = ar.max_root_magnitude()
    return FrozenModel(
        state=k, ar=ar, std_errors=std, ci_level=ci_level, half_widths=z * std,
        unstable=max_root >= 1.0, extrapolated=bool(np.any(np.abs(x) > 1 + 1e-9)),
        sigma2_interpolated=interpolated, max_root=max_root,
    )


def freeze(model, k, ci_level=0.99):
    """Frozen AR model at ``k``; raises :class:`OutOfRangeError` outside the basis ranges."""
    return _freeze(model, k, ci_level, extrapolate=False)


def freeze_extrapolate(model, k, ci_level=0.99):
    fm = _freeze(model, k, ci_level, extrapolate=True)
    if fm.extrapolated:
        warnings.warn(f"extrapolating model to {k}", RuntimeWarning)
    return fm


@dataclass(frozen=True)
class Prediction:
    predictions: np.ndarray
    residuals: np.ndarray
    rss_sss: float
    rss: float
    sss: float


def predict(model, k, y, extrapolate=False):
    """One-step-ahead predictions of ``y`` with the model frozen at ``k``."""
    fm = freeze_extrapolate(model, k) if extrapolate else freeze(model, k)
    y = np.asarray(y, dtype=float)
    if y.size <= model.order:
        raise ValueError("signal shorter than the model order")
    lags, target = lag_matrix(y, model.order)
    yhat = lags @ fm.coeffs
    e = target - yhat
    rss = float(e @ e)
    sss = float(target @ target)
    return Prediction(yhat, e, rss / sss if sss > 0 else math.inf, rss, sss)


def global_rss_sss(model, pool):
    """Pooled RSS/SSS over all records, ``t = n..N-1``."""
    rss = sss = 0.0
    for rec in pool:
        pr = predict(model, rec.state, rec.samples)
        rss += pr.rss
        sss += pr.sss
    return rss / sss


# -- serialization ------------------------------------------------------------

def model_to_dict(model, p_theta_file=None):
    d = {
        "format": "vfpar.model",
        "version": __version__,
        "order": model.order,
        "fs": model.fs,
        "method": model.method,
        "converged": model.converged,
        "n_iter": model.n_iter,
        "start": model.start,
        "n_samples": model.n_samples,
        "basis": model.basis.to_dict(),
        "theta": model.theta.ravel().tolist(),
        "training_states": [[s.k1, s.k2] for s in model.training_states],
        "sigma2": [{"k1": s.k1, "k2": s.k2, "sigma2": v}
                   for s, v in zip(model.training_states, model.sigma2.tolist())],
        "gamma_e": model.gamma_e.ravel().tolist(),
    }
    if p_theta_file is None:
        d["p_theta"] = model.p_theta.ravel().tolist()
    else:
        d["p_theta_file"] = p_theta_file
    return d


def save_model(model, path, extra=None):
    """Write the model JSON; ``p_theta`` goes to a ``.p_theta.bin`` sidecar when n*p > 500."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sidecar = None
    if model.order * model.p > SIDECAR_THRESHOLD:
        sidecar = path.with_suffix(".p_theta.bin")
        model.p_theta.astype("<f8").tofile(sidecar)
    d = model_to_dict(model, sidecar.name if sidecar else None)
    if extra:
        d.update(extra)
    path.write_text(json.dumps(d, indent=1))
    return path


def model_from_dict(d, base_dir=None):
    basis = BasisSpec.from_dict(d["basis"])
    n, p = int(d["order"]), basis.p
    M = len(d["training_states"])
    if "p_theta_file" in d:
        src = Path(base_dir or ".") / d["p_theta_file"]
        p_theta = np.fromfile(src, dtype="<f8")
    else:
        p_theta = np.asarray(d["p_theta"], dtype=float)
    sig = {(e["k1"], e["k2"]): e["sigma2"] for e in d["sigma2"]}
    states = tuple(FlightState(a, b) for a, b in d["training_states"])
    return VfpArModel(
        order=n, basis=basis, theta=np.asarray(d["theta"]).reshape(n, p),
        training_states=states,
        sigma2=np.array([sig[(s.k1, s.k2)] for s in states]),
        gamma_e=np.asarray(d["gamma_e"], dtype=float).reshape(M, M),
        p_theta=p_theta.reshape(n * p, n * p), fs=float(d["fs"]),
        method=d.get("method", "wls-1"), converged=d.get("converged", True),
        n_iter=d.get("n_iter", 1), start=d.get("start"), n_samples=d.get("n_samples"),
    )


def load_model(path):
    path = Path(path)
    return model_from_dict(json.loads(path.read_text()), base_dir=path.parent)


def truncate_records(records):
    """Build a pool from records of unequal length by cutting all to the shortest."""
    records = list(records)
    n = min(len(r) for r in records)
    if any(len(r) != n for r in records):
        warnings.warn(f"records truncated to the shortest length {n}", RuntimeWarning)
        records = [r.replace(samples=r.samples[:n]) for r in records]
    return SignalPool(tuple(records))
