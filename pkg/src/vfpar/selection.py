"""
Structure selection for the global model: BIC scans over AR order and
functional-subspace dimension, gated by residual validation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .ar import default_max_lag, whiteness
from .basis import complete_basis, ranges_from_states
from .errors import DegenerateInputError, NumericalError
from .vfp import fit_vfp, predict, residuals_by_state


@dataclass(frozen=True)
class Gates:
    """Validation thresholds a trial must meet to be eligible.

    ``min_whiteness`` is the minimum fraction of states whose residuals
    pass the ACF whiteness check at ``ci_level``; ``None`` disables it.
    """

    min_whiteness: float | None = 0.8
    ci_level: float = 0.95
    max_lag: int | None = None
    require_converged: bool = True

    @classmethod
    def none(cls):
        return cls(min_whiteness=None, require_converged=False)


@dataclass(frozen=True)
class Trial:
    n: int
    p: int
    bic: float
    rss_sss: float
    converged: bool
    whiteness_pass_fraction: float
    passed_gates: bool = True


@dataclass
class SelectionReport:
    trials: list
    chosen: tuple | None
    diagnostic: str = ""
    models: dict = field(default_factory=dict, repr=False)

    @property
    def chosen_model(self):
        return self.models.get(self.chosen) if self.chosen else None

    def to_frame(self):
        return pd.DataFrame(
            [(t.n, t.p, t.bic, t.rss_sss, t.whiteness_pass_fraction) for t in self.trials],
            columns=["n", "p", "bic", "rss_sss", "whiteness_pass_fraction"],
        )

    def summary(self):
        return {
            "chosen": None if self.chosen is None else {"n": self.chosen[0], "p": self.chosen[1]},
            "diagnostic": self.diagnostic,
            "n_trials": len(self.trials),
        }


def pooled_bic(sigma2, n_time, d):
    """``sum_k T ln sigma2_k + d ln(M T)`` for per-state variances ``sigma2``."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0):
        return -math.inf
    return float(n_time * np.sum(np.log(sigma2)) + d * math.log(sigma2.size * n_time))


@dataclass(frozen=True)
class ValidationResult:
    reports: list           # (state, WhitenessReport)
    pass_fraction: float
    normality: list         # (state, skewness, excess kurtosis, within_limits)
    excluded: list


def validate(model, pool, ci_level=0.95, max_lag=None):
    """Whiteness of each state's residuals plus an advisory normality screen."""
    reports, normality, excluded = [], [], []
    for rec in pool:
        e = predict(model, rec.state, rec.samples).residuals
        try:
            rep = whiteness(e, max_lag=max_lag, ci_level=ci_level)
        except DegenerateInputError:
            warnings.warn(f"state {rec.state} has zero residual variance; excluded",
                          RuntimeWarning)
            excluded.append(rec.state)
            continue
        reports.append((rec.state, rep))
        skew = float(stats.skew(e))
        kurt = float(stats.kurtosis(e))
        normality.append((rec.state, skew, kurt, abs(skew) <= 0.5 and abs(kurt) <= 0.5))
    frac = float(np.mean([r.passed for _, r in reports])) if reports else 0.0
    return ValidationResult(reports, frac, normality, excluded)


def _whiteness_fraction(E, gates):
    max_lag = gates.max_lag or default_max_lag(E.shape[1])
    passed = []
    for e in E:
        try:
            passed.append(whiteness(e, max_lag, gates.ci_level).passed)
        except DegenerateInputError:
            continue
    return float(np.mean(passed)) if passed else 0.0


def _run_trial(pool, n, basis, method, start, gates):
    model = fit_vfp(pool, n, basis, method=method, start=start)
    start = model.start
    E = residuals_by_state(pool, n, basis, model.theta, start)
    rss = float(np.sum(E ** 2))
    sss = float(np.sum(pool.data()[:, start:] ** 2))
    bic = pooled_bic(np.mean(E ** 2, axis=1), E.shape[1], n * basis.p)
    wf = _whiteness_fraction(E, gates) if gates.min_whiteness is not None else float("nan")
    ok = True
    if gates.min_whiteness is not None and not wf >= gates.min_whiteness:
        ok = False
    if gates.require_converged and not model.converged:
        ok = False
    return Trial(n, basis.p, bic, rss / sss, model.converged, wf, ok), model


def _choose(trials):
    eligible = [t for t in trials if t.passed_gates and not math.isnan(t.bic)]
    if not eligible:
        return None
    # smallest BIC; ties go to the smaller structure
    best = min(eligible, key=lambda t: (t.bic, t.p, t.n))
    return best.n, best.p


def select_basis_dim(pool, n, p_max, gates=Gates(), method="wls-1", ranges=None,
                     keep_models=False):
    """Scan complete bases ``p = 1..p_max`` at fixed order ``n``."""
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    ranges = ranges or ranges_from_states(pool.states)
    trials, models = [], {}
    for p in range(1, p_max + 1):
        try:
            trial, model = _run_trial(pool, n, complete_basis(p, ranges), method, None, gates)
        except NumericalError as exc:
            warnings.warn(f"trial n={n}, p={p} failed: {exc}", RuntimeWarning)
            continue
        trials.append(trial)
        if keep_models:
            models[(n, p)] = model
    return _report(trials, models)


def select_order_global(pool, basis, n_grid, gates=Gates(), method="wls-1",
                        keep_models=False):
    """Scan AR orders at a fixed basis over a common estimation window."""
    n_grid = sorted(set(int(n) for n in n_grid))
    if not n_grid:
        raise ValueError("n_grid must be non-empty")
    if max(n_grid) >= pool.n_samples / 2:
        raise ValueError("largest order must be below N/2")
    start = max(n_grid)
    trials, models = [], {}
    for n in n_grid:
        try:
            trial, model = _run_trial(pool, n, basis, method, start, gates)
        except NumericalError as exc:
            warnings.warn(f"trial n={n}, p={basis.p} failed: {exc}", RuntimeWarning)
            continue
        trials.append(trial)
        if keep_models:
            models[(n, basis.p)] = model
    return _report(trials, models)


def _report(trials, models):
    chosen = _choose(trials)
    diag = "" if chosen else "no trial passed the validation gates"
    if not trials:
        diag = "all trials failed numerically"
    return SelectionReport(trials, chosen, diag, models)


def select_structure(pool, n_grid, p_max, gates=Gates(), method="wls-1", order_p=None,
                     ranges=None):
    """Order scan at a fixed complete basis, then a basis scan at the chosen order.

    ``order_p`` is the basis dimension used during the order scan
    (defaults to ``p_max``).
    """
    ranges = ranges or ranges_from_states(pool.states)
    order_rep = select_order_global(pool, complete_basis(order_p or p_max, ranges), n_grid,
                                    gates, method)
    if order_rep.chosen is None:
        return order_rep, None
    basis_rep = select_basis_dim(pool, order_rep.chosen[0], p_max, gates, method, ranges)
    return order_rep, basis_rep
