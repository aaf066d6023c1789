"""
Command-line front end.

Every subcommand accepts ``--config run.toml``; explicit flags override
values from the file.  Exit codes: 0 success, 1 validation-gate failure,
2 usage/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .basis import complete_basis, ranges_from_states
from .errors import NumericalError, OutOfRangeError, PoolFormatError, VfpError
from .selection import Gates, select_basis_dim, select_order_global, validate
from .signals import (
    FlightState, decimate, design_cheby2_lowpass, energy_stats, load_pool, mean_correct,
    save_pool,
)
from .simulate import SimSpec, simulate_pool
from .spectral import frf_surface, welch_psd, write_surface
from .vfp import (
    fit_vfp, freeze, freeze_extrapolate, global_rss_sss, load_model, regression_shape, save_model,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("vfpar")

EXIT_OK, EXIT_GATE, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
QR_MEMORY_LIMIT = 1.5e9   # bytes of regressor matrix before switching to streamed normal equations


class ConfigError(VfpError, ValueError):
    pass


class GateFailure(Exception):
    pass


# -- config & provenance ------------------------------------------------------

def load_config(path):
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc


def setting(args, cfg, section, key, attr=None, default=None):
    """Flag value if given, else ``cfg[section][key]``, else ``default``."""
    value = getattr(args, attr or key, None)
    if value is not None:
        return value
    block = cfg.get(section, {})
    if not isinstance(block, dict):
        raise ConfigError(f"config section [{section}] must be a table")
    return block.get(key, default)


def provenance(command, settings):
    blob = json.dumps(settings, sort_keys=True, default=str).encode()
    return {"tool": "vfpar", "version": __version__, "command": command,
            "config_sha256": hashlib.sha256(blob).hexdigest()}


def write_csv(df, path, prov):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {json.dumps(prov, sort_keys=True)}\n")
        df.to_csv(fh, index=False, float_format="%.17g")
    return path


def write_json(obj, path, prov):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"provenance": prov, **obj}, indent=1, default=_jsonable))
    return path


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not serializable: {type(x)}")


def _require_path(value, what):
    if value is None:
        raise ConfigError(f"missing {what}")
    p = Path(value)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _select_record(pool, k1, k2):
    if k1 is None and k2 is None:
        if len(pool) != 1:
            raise ConfigError("pool has several records; select one with --k1/--k2")
        return pool.records[0]
    try:
        return pool.record(FlightState(k1, k2))
    except (KeyError, TypeError):
        raise ConfigError(f"no record at k1={k1}, k2={k2}") from None


# -- commands -----------------------------------------------------------------

def cmd_preprocess(args, cfg):
    src = _require_path(setting(args, cfg, "input", "pool", "input"), "input pool")
    out = setting(args, cfg, "output", "pool", "output") or "processed_pool.csv"
    factor = int(setting(args, cfg, "preprocess", "factor", default=1))
    use_filter = not args.no_filter and setting(None, cfg, "preprocess", "filter", default=True)
    zero_phase = bool(args.zero_phase or setting(None, cfg, "preprocess", "zero_phase",
                                                  default=False))
    do_mean = not args.no_mean_correct and setting(None, cfg, "preprocess", "mean_correct",
                                                    default=True)
    pool = load_pool(src)
    filt = None
    if use_filter:
        order = int(setting(args, cfg, "preprocess", "filter_order", default=12))
        cutoff = float(setting(args, cfg, "preprocess", "cutoff_hz", "cutoff", default=80.0))
        atten = float(setting(args, cfg, "preprocess", "stop_atten_db", "atten", default=50.0))
        filt = design_cheby2_lowpass(order, cutoff, atten, pool.fs)
    processed = pool.map(lambda r: decimate(r, filt, factor, zero_phase))
    if do_mean:
        processed = processed.map(mean_correct)
    settings = {"input": str(src), "factor": factor, "filter": filt.to_dict() if filt else None,
                "zero_phase": zero_phase, "mean_correct": bool(do_mean)}
    prov = provenance("preprocess", settings)
    save_pool(processed, out, header=json.dumps(prov, sort_keys=True))
    write_json({"original_fs": pool.fs, "fs": processed.fs, **settings},
               Path(str(out) + ".provenance.json"), prov)
    log.info("wrote %s (%d records, fs=%g Hz, N=%d)", out, len(processed), processed.fs,
             processed.n_samples)


def _grid(value):
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    text = str(value)
    if ":" in text:
        parts = [int(v) for v in text.split(":")]
        lo, hi = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else 1
        return list(range(lo, hi + 1, step))
    return [int(v) for v in text.split(",")]


def cmd_identify(args, cfg):
    src = _require_path(setting(args, cfg, "input", "pool", "input"), "input pool")
    out_dir = Path(setting(args, cfg, "output", "dir", "out_dir", default="identify_out"))
    method = setting(args, cfg, "model", "method", default="wls-1")
    ci_level = float(setting(args, cfg, "model", "ci_level", default=0.99))
    n = setting(args, cfg, "model", "order")
    n_grid = _grid(setting(args, cfg, "model", "order_grid"))
    p = setting(args, cfg, "model", "p")
    p_max = setting(args, cfg, "model", "p_max")
    solver = setting(args, cfg, "model", "solver", default="auto")
    min_white = setting(args, cfg, "gates", "min_whiteness", default=0.8)
    gate_ci = float(setting(args, cfg, "gates", "ci_level", "gate_ci", default=0.95))
    no_gate = bool(args.no_gate or setting(None, cfg, "gates", "disabled", default=False))
    if method not in ("ols", "wls-1", "wls-iterated"):
        raise ConfigError(f"unknown method {method!r}")
    if n is None and not n_grid:
        raise ConfigError("give model.order or model.order_grid")
    if p is None and p_max is None:
        raise ConfigError("give model.p or model.p_max")

    pool = load_pool(src)
    cfg_ranges = cfg.get("model", {}).get("ranges")
    ranges = (tuple(cfg_ranges["k1"]), tuple(cfg_ranges["k2"])) if cfg_ranges else \
        ranges_from_states(pool.states)
    gates = Gates(min_whiteness=min_white, ci_level=gate_ci)
    trials = []
    if n_grid:
        rep = select_order_global(pool, complete_basis(int(p or p_max), ranges), n_grid,
                                  gates, method)
        trials += rep.trials
        if rep.chosen is None:
            raise GateFailure(f"order scan: {rep.diagnostic}")
        n = rep.chosen[0]
    n = int(n)
    if p is None:
        rep = select_basis_dim(pool, n, int(p_max), gates, method, ranges)
        trials += rep.trials
        if rep.chosen is None:
            raise GateFailure(f"basis scan: {rep.diagnostic}")
        p = rep.chosen[1]
    basis = complete_basis(int(p), ranges)
    if solver == "auto":
        rows, cols = regression_shape(pool.n_samples, n, basis.p, len(pool))
        solver = "normal" if rows * cols * 8 > QR_MEMORY_LIMIT else "qr"
    model = fit_vfp(pool, n, basis, method=method, solver=solver,
                    max_wls_iters=int(setting(None, cfg, "model", "max_wls_iters", default=20)))
    val = validate(model, pool, ci_level=gate_ci)
    grss = global_rss_sss(model, pool)

    settings = {"input": str(src), "n": n, "p": int(p), "method": method, "ci_level": ci_level,
                "ranges": ranges, "solver": solver, "gates": [min_white, gate_ci]}
    prov = provenance("identify", settings)
    save_model(model, out_dir / "model.json", extra={"provenance": prov,
                                                     "ci_level": ci_level})
    if trials:
        write_csv(pd.DataFrame([(t.n, t.p, t.bic, t.rss_sss, t.whiteness_pass_fraction)
                                for t in trials],
                               columns=["n", "p", "bic", "rss_sss", "whiteness_pass_fraction"]),
                  out_dir / "selection.csv", prov)
    write_csv(pd.DataFrame(
        [(s.k1, s.k2, r.exceed_fraction, int(r.passed), sk, ku)
         for (s, r), (_, sk, ku, _) in zip(val.reports, val.normality)],
        columns=["k1", "k2", "exceed_fraction", "white", "skewness", "excess_kurtosis"]),
        out_dir / "validation.csv", prov)
    gate_ok = min_white is None or val.pass_fraction >= float(min_white)
    write_json({"chosen": {"n": n, "p": int(p)}, "global_rss_sss": grss,
                "whiteness_pass_fraction": val.pass_fraction, "converged": model.converged,
                "gates_passed": bool(gate_ok and model.converged)},
               out_dir / "selection.json", prov)
    log.info("VFP-AR(%d)_%d  global RSS/SSS=%.3e  whiteness pass=%.2f", n, p, grss,
             val.pass_fraction)
    if not no_gate and not (gate_ok and model.converged):
        raise GateFailure(f"validation gates failed (whiteness pass fraction "
                          f"{val.pass_fraction:.2f}, converged={model.converged})")


def _frozen_frame(fm):
    return pd.DataFrame({
        "i": np.arange(1, fm.ar.order + 1),
        "coeff": fm.coeffs,
        "std_err": fm.std_errors,
        "ci_lo": fm.coeffs - fm.half_widths,
        "ci_hi": fm.coeffs + fm.half_widths,
    })


def cmd_freeze(args, cfg):
    mpath = _require_path(setting(args, cfg, "input", "model", "model"), "model")
    model = load_model(mpath)
    if args.k1 is None or args.k2 is None:
        raise ConfigError("freeze needs --k1 and --k2")
    k = FlightState(args.k1, args.k2)
    ci = float(setting(args, cfg, "model", "ci_level", default=0.99))
    fm = freeze_extrapolate(model, k, ci) if args.extrapolate else freeze(model, k, ci)
    prov = provenance("freeze", {"model": str(mpath), "k": [k.k1, k.k2], "ci": ci,
                                 "extrapolate": bool(args.extrapolate)})
    summary = {"k1": k.k1, "k2": k.k2, "order": fm.ar.order, "coeffs": fm.coeffs,
               "std_errors": fm.std_errors, "ci_level": ci, "half_widths": fm.half_widths,
               "sigma2": fm.ar.sigma2, "sigma2_interpolated": fm.sigma2_interpolated,
               "unstable": fm.unstable, "max_root": fm.max_root,
               "extrapolated": fm.extrapolated}
    out = args.output
    if out is None:
        print(json.dumps({"provenance": prov, **summary}, default=_jsonable, indent=1))
    elif str(out).endswith(".csv"):
        write_csv(_frozen_frame(fm), out, prov)
        write_json(summary, Path(out).with_suffix(".json"), prov)
    else:
        write_json(summary, out, prov)


def cmd_frf(args, cfg):
    mpath = _require_path(setting(args, cfg, "input", "model", "model"), "model")
    model = load_model(mpath)
    block = "frf"
    sweep = setting(args, cfg, block, "sweep", default="k1")
    lo_default, hi_default = model.basis.ranges[0 if sweep == "k1" else 1]
    start = float(setting(args, cfg, block, "start", default=lo_default))
    stop = float(setting(args, cfg, block, "stop", default=hi_default))
    step = float(setting(args, cfg, block, "step", default=0.1))
    fixed = setting(args, cfg, block, "fixed")
    if fixed is None:
        raise ConfigError("frf needs --fixed (value of the held variable)")
    f_start = float(setting(args, cfg, block, "f_start", default=0.1))
    f_stop = float(setting(args, cfg, block, "f_stop", default=model.fs / 2))
    f_step = float(setting(args, cfg, block, "f_step", default=0.01))
    out = Path(args.output or setting(None, cfg, "output", "frf", default="frf_surface.csv"))
    surf = frf_surface(model, sweep, start, stop, step, float(fixed), f_start, f_stop, f_step,
                       extrapolate=bool(args.extrapolate))
    out.parent.mkdir(parents=True, exist_ok=True)
    prov = provenance("frf", {"model": str(mpath), **surf.metadata()})
    write_surface(surf, out, header=json.dumps(prov, sort_keys=True))
    meta_path = out.with_suffix(".meta.json")
    meta = json.loads(meta_path.read_text())
    meta["provenance"] = prov
    meta_path.write_text(json.dumps(meta, indent=1))


def cmd_psd(args, cfg):
    src = _require_path(setting(args, cfg, "input", "pool", "input"), "input pool")
    pool = load_pool(src)
    rec = _select_record(pool, args.k1, args.k2)
    wl = setting(args, cfg, "psd", "window_len")
    wl = int(wl) if wl is not None else min(5096, len(rec) // 4)
    overlap = float(setting(args, cfg, "psd", "overlap", default=0.9))
    est = welch_psd(rec, wl, overlap)
    prov = provenance("psd", {"input": str(src), "k": [rec.state.k1, rec.state.k2],
                              "window_len": wl, "overlap": overlap})
    out = args.output or "psd.csv"
    write_csv(est.to_frame(), out, prov)
    write_json({"resolution_hz": est.resolution, "window": est.window, "overlap": overlap,
                "n_segments": est.n_segments}, Path(out).with_suffix(".json"), prov)


def cmd_energy(args, cfg):
    src = _require_path(setting(args, cfg, "input", "pool", "input"), "input pool")
    pool = load_pool(src)
    rec = _select_record(pool, args.k1, args.k2)
    window_s = float(setting(args, cfg, "energy", "window_s", default=0.5))
    ci = float(setting(args, cfg, "energy", "ci_level", default=0.99))
    st = energy_stats(rec, window_s, ci)
    prov = provenance("energy", {"input": str(src), "k": [rec.state.k1, rec.state.k2],
                                 "window_s": window_s, "ci": ci})
    out = args.output or "energy.csv"
    write_csv(st.to_frame(), out, prov)
    lo, hi = st.population_bounds()
    write_json({"mean": st.population_mean, "std": st.population_std, "ci_level": ci,
                "ci_lo": lo, "ci_hi": hi, "n_windows": st.n_windows,
                "window_len": st.window_len}, Path(out).with_suffix(".json"), prov)


def cmd_simulate(args, cfg):
    if args.demo:
        from .demo import load_bundled_spec
        spec = load_bundled_spec()
        spec_src = "bundled demo"
    else:
        path = _require_path(args.simspec or setting(None, cfg, "input", "simspec"), "simspec")
        try:
            spec = SimSpec.load(path)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"malformed simspec {path}: {exc}") from exc
        spec_src = str(path)
    if args.seed is not None or args.n_samples is not None:
        spec = SimSpec(spec.theta, spec.basis, spec.fs, spec.states, spec.sigma2,
                       args.n_samples or spec.n_samples, spec.burn_in,
                       spec.seed if args.seed is None else args.seed, spec.gamma_e)
    pool = simulate_pool(spec)
    prov = provenance("simulate", {"simspec": spec_src, **spec.to_dict()})
    out = args.output or "pool.csv"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_pool(pool, out, header=json.dumps(prov, sort_keys=True))


def cmd_validate(args, cfg):
    mpath = _require_path(setting(args, cfg, "input", "model", "model"), "model")
    src = _require_path(setting(args, cfg, "input", "pool", "input"), "input pool")
    model, pool = load_model(mpath), load_pool(src)
    ci = float(setting(args, cfg, "gates", "ci_level", "ci_level", default=0.95))
    min_white = float(setting(args, cfg, "gates", "min_whiteness", default=0.8))
    val = validate(model, pool, ci_level=ci, max_lag=args.max_lag)
    prov = provenance("validate", {"model": str(mpath), "input": str(src), "ci": ci})
    out = args.output or "validation.csv"
    write_csv(pd.DataFrame(
        [(s.k1, s.k2, r.exceed_fraction, int(r.passed), sk, ku)
         for (s, r), (_, sk, ku, _) in zip(val.reports, val.normality)],
        columns=["k1", "k2", "exceed_fraction", "white", "skewness", "excess_kurtosis"]),
        out, prov)
    log.info("whiteness pass fraction %.2f", val.pass_fraction)
    if val.pass_fraction < min_white:
        raise GateFailure(f"whiteness pass fraction {val.pass_fraction:.2f} < {min_white}")


# -- parser -------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="vfpar", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"vfpar {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="TOML run configuration")
        p.set_defaults(func=fn)
        return p

    p = add("preprocess", cmd_preprocess, "low-pass, decimate and mean-correct a pool")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--filter-order", type=int, dest="filter_order")
    p.add_argument("--cutoff", type=float)
    p.add_argument("--atten", type=float)
    p.add_argument("--factor", type=int)
    p.add_argument("--zero-phase", action="store_true")
    p.add_argument("--no-filter", action="store_true")
    p.add_argument("--no-mean-correct", action="store_true")

    p = add("identify", cmd_identify, "fit (and optionally select) a VFP-AR model")
    p.add_argument("--input")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--order", type=int)
    p.add_argument("--order-grid", dest="order_grid", help="e.g. 1:8 or 2,4,6")
    p.add_argument("--p", type=int)
    p.add_argument("--p-max", type=int, dest="p_max")
    p.add_argument("--method", choices=["ols", "wls-1", "wls-iterated"])
    p.add_argument("--ci-level", type=float, dest="ci_level")
    p.add_argument("--solver", choices=["auto", "qr", "normal"])
    p.add_argument("--min-whiteness", type=float, dest="min_whiteness")
    p.add_argument("--no-gate", action="store_true")

    p = add("freeze", cmd_freeze, "frozen AR coefficients with confidence intervals")
    p.add_argument("model", nargs="?")
    p.add_argument("--k1", type=float)
    p.add_argument("--k2", type=float)
    p.add_argument("--ci-level", type=float, dest="ci_level")
    p.add_argument("--extrapolate", action="store_true")
    p.add_argument("--output")

    p = add("frf", cmd_frf, "FRF magnitude surface over a flight-state sweep")
    p.add_argument("model", nargs="?")
    p.add_argument("--sweep", choices=["k1", "k2"])
    p.add_argument("--start", type=float)
    p.add_argument("--stop", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--fixed", type=float)
    p.add_argument("--f-start", type=float, dest="f_start")
    p.add_argument("--f-stop", type=float, dest="f_stop")
    p.add_argument("--f-step", type=float, dest="f_step")
    p.add_argument("--extrapolate", action="store_true")
    p.add_argument("--output")

    for name, fn, help_ in (("psd", cmd_psd, "Welch PSD of one record"),
                            ("energy", cmd_energy, "windowed signal-energy statistics")):
        p = add(name, fn, help_)
        p.add_argument("--input")
        p.add_argument("--k1", type=float)
        p.add_argument("--k2", type=float)
        p.add_argument("--output")
        if name == "psd":
            p.add_argument("--window-len", type=int, dest="window_len")
            p.add_argument("--overlap", type=float)
        else:
            p.add_argument("--window-s", type=float, dest="window_s")
            p.add_argument("--ci-level", type=float, dest="ci_level")

    p = add("simulate", cmd_simulate, "draw a synthetic pool from a SimSpec")
    p.add_argument("simspec", nargs="?")
    p.add_argument("--demo", action="store_true", help="use the bundled wing-like demo spec")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-samples", type=int, dest="n_samples")
    p.add_argument("--output")

    p = add("validate", cmd_validate, "residual whiteness of a model on a pool")
    p.add_argument("model", nargs="?")
    p.add_argument("--input")
    p.add_argument("--ci-level", type=float, dest="ci_level")
    p.add_argument("--max-lag", type=int, dest="max_lag")
    p.add_argument("--min-whiteness", type=float, dest="min_whiteness")
    p.add_argument("--output")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except GateFailure as exc:
        print(f"vfpar: gate failure: {exc}", file=sys.stderr)
        return EXIT_GATE
    except NumericalError as exc:
        print(f"vfpar: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, PoolFormatError, OutOfRangeError, FileNotFoundError,
            ValueError, KeyError) as exc:
        print(f"vfpar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
