"""Command-line interface: ``klshrink {risk-sweep, density-slice, verify SUITE}``.

Exit codes: 0 pass, 1 fail, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import risk, verify
from .errors import KLShrinkError
from .model import (
    Gaussian,
    GaussianModel,
    Harmonic,
    InverseGammaLike,
    Mixture,
    ScaleMixture,
    Strawderman,
    Uniform,
    multivariate_t,
    validate_prior,
)
from .predictive import PredictiveDensity, density_slice, grid_axis, write_slice_csv
from .shrinkage import multiple_shrinkage, recenter, toward_subspace

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SUITES = ("heat", "identity", "superharmonic", "theorem2", "lemma1", "eq25", "corollary1-rate")


class UsageError(Exception):
    """Bad command-line input or configuration; reported with exit code 2."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def load_config(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        raise UsageError("--config is required")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        # the decoder message carries the line and column
        raise UsageError(f"{path}: {exc}") from None


def _section(cfg, name, required=True) -> Dict[str, Any]:
    if name not in cfg:
        if required:
            raise UsageError(f"config is missing the [{name}] section")
        return {}
    sec = cfg[name]
    if not isinstance(sec, dict):
        raise UsageError(f"[{name}] must be a table")
    return sec


def _check_keys(tbl, allowed, where):
    extra = sorted(set(tbl) - set(allowed))
    if extra:
        raise UsageError(f"{where}: unknown key(s) {', '.join(extra)}")


def _get(tbl, key, where, kind=float, default=None, required=True):
    if key not in tbl:
        if required and default is None:
            raise UsageError(f"{where}: missing key '{key}'")
        return default
    val = tbl[key]
    try:
        if kind is list:
            if not isinstance(val, list):
                raise TypeError
            return [float(x) for x in val]
        if kind is int and (isinstance(val, bool) or not float(val).is_integer()):
            raise TypeError
        return kind(val)
    except (TypeError, ValueError):
        raise UsageError(f"{where}: '{key}' has invalid value {val!r}") from None


def parse_model(cfg) -> GaussianModel:
    sec = _section(cfg, "model")
    _check_keys(sec, ("p", "v_x", "v_y"), "[model]")
    try:
        return GaussianModel(_get(sec, "p", "[model]", int), _get(sec, "v_x", "[model]"), _get(sec, "v_y", "[model]"))
    except KLShrinkError as exc:
        raise UsageError(f"[model]: {exc}") from None


def _mixing_from_config(tbl, where):
    if not isinstance(tbl, dict):
        raise UsageError(f"{where}: 'h' must be a table")
    kind = tbl.get("type")
    if kind == "strawderman":
        _check_keys(tbl, ("type", "a"), where)
        return Strawderman(_get(tbl, "a", where))
    if kind == "inverse_gamma":
        _check_keys(tbl, ("type", "alpha", "beta"), where)
        return InverseGammaLike(_get(tbl, "alpha", where), _get(tbl, "beta", where))
    raise UsageError(f"{where}: unknown mixing density type {kind!r}")


_PRIOR_KEYS = {
    "uniform": (),
    "plugin": (),
    "gaussian": ("sigma2", "center"),
    "harmonic": ("center",),
    "strawderman": ("a", "v0", "center"),
    "scale_mixture": ("h", "v0", "center"),
    "multivariate_t": ("a1", "a2", "v0", "center"),
    "subspace": ("base", "basis", "offset"),
    "mixture": ("components", "weights"),
    "multiple_shrinkage": ("base", "centers", "weights"),
    "recenter": ("base", "b"),
}


def prior_from_config(tbl, where="[prior]"):
    """Build a prior from a config table; ``type = "plugin"`` yields the string ``"plugin"``."""
    if not isinstance(tbl, dict):
        raise UsageError(f"{where} must be a table")
    kind = tbl.get("type")
    if kind not in _PRIOR_KEYS:
        raise UsageError(f"{where}: unknown prior type {kind!r}; choose from {', '.join(_PRIOR_KEYS)}")
    _check_keys(tbl, ("type", "name") + _PRIOR_KEYS[kind], where)
    center = _get(tbl, "center", where, list, required=False)
    v0 = _get(tbl, "v0", where, default=1.0)
    if kind == "uniform":
        return Uniform()
    if kind == "plugin":
        return "plugin"
    if kind == "gaussian":
        return Gaussian(_get(tbl, "sigma2", where), center)
    if kind == "harmonic":
        return Harmonic(center)
    if kind == "strawderman":
        return ScaleMixture(Strawderman(_get(tbl, "a", where)), v0, center)
    if kind == "scale_mixture":
        if "h" not in tbl:
            raise UsageError(f"{where}: missing key 'h'")
        return ScaleMixture(_mixing_from_config(tbl["h"], f"{where}.h"), v0, center)
    if kind == "multivariate_t":
        return multivariate_t(_get(tbl, "a1", where), _get(tbl, "a2", where), v0, center)

    def base():
        if "base" not in tbl:
            raise UsageError(f"{where}: missing key 'base'")
        return prior_from_config(tbl["base"], f"{where}.base")

    if kind == "subspace":
        basis = tbl.get("basis", [])
        if not isinstance(basis, list) or not all(isinstance(r, list) for r in basis):
            raise UsageError(f"{where}: 'basis' must be a list of vectors")
        offset = _get(tbl, "offset", where, list, required=False)
        return toward_subspace(base(), np.array(basis, dtype=float), offset)
    if kind == "recenter":
        return recenter(base(), _get(tbl, "b", where, list))
    weights = _get(tbl, "weights", where, list)
    if kind == "mixture":
        comps = tbl.get("components")
        if not isinstance(comps, list) or not comps:
            raise UsageError(f"{where}: 'components' must be a non-empty array of tables")
        return Mixture(
            tuple(prior_from_config(c, f"{where}.components[{i}]") for i, c in enumerate(comps)), tuple(weights)
        )
    centers = tbl.get("centers")
    if not isinstance(centers, list) or not all(isinstance(c, list) for c in centers):
        raise UsageError(f"{where}: 'centers' must be a list of vectors")
    return multiple_shrinkage(centers, weights, base())


def parse_priors(cfg, model: GaussianModel) -> Dict[str, object]:
    """Named priors from ``[prior]`` or ``[[prior]]``, validated for ``model.p``."""
    if "prior" not in cfg:
        raise UsageError("config is missing the [prior] section")
    raw = cfg["prior"]
    tables = raw if isinstance(raw, list) else [raw]
    out: Dict[str, object] = {}
    for i, tbl in enumerate(tables):
        where = "[prior]" if len(tables) == 1 else f"[[prior]] #{i + 1}"
        try:
            prior = prior_from_config(tbl, where)
            if not isinstance(prior, str):
                prior = validate_prior(prior, model.p)
        except KLShrinkError as exc:
            raise UsageError(f"{where}: {exc}") from None
        name = str(tbl.get("name", tbl.get("type")))
        if name in out:
            raise UsageError(f"{where}: duplicate prior name {name!r}")
        out[name] = prior
    return out


def _mc(cfg, args):
    sec = _section(cfg, "mc", required=False)
    _check_keys(sec, ("n", "seed"), "[mc]")
    n = args.n if args.n is not None else _get(sec, "n", "[mc]", int, default=risk.DEFAULT_N)
    seed = args.seed if args.seed is not None else _get(sec, "seed", "[mc]", int, default=0, required=False)
    if n < 2:
        raise UsageError("n must be at least 2")
    if seed < 0 or seed >= 2**64:
        raise UsageError("seed must be an unsigned 64-bit integer")
    return int(n), int(seed or 0)


def _vector(tbl, key, where, p, default=None):
    val = _get(tbl, key, where, list, required=default is None)
    if val is None:
        return default
    if len(val) != p:
        raise UsageError(f"{where}: '{key}' has length {len(val)}, expected {p}")
    return np.array(val)


def _axis(tbl, key, where):
    spec = tbl.get(key)
    if isinstance(spec, list):
        return np.array([float(x) for x in spec])
    if not isinstance(spec, dict):
        raise UsageError(f"{where}: '{key}' must be a list or a table with start, stop, step")
    _check_keys(spec, ("start", "stop", "step"), f"{where}.{key}")
    try:
        return grid_axis(_get(spec, "start", where), _get(spec, "stop", where), _get(spec, "step", where))
    except KLShrinkError as exc:
        raise UsageError(f"{where}.{key}: {exc}") from None


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_risk_sweep(args) -> int:
    cfg = load_config(args.config)
    model = parse_model(cfg)
    priors = parse_priors(cfg, model)
    n, seed = _mc(cfg, args)
    sec = _section(cfg, "sweep")
    _check_keys(sec, ("norms", "direction", "estimator", "center"), "[sweep]")
    norms = sec.get("norms")
    if isinstance(norms, dict):
        norms = _axis(sec, "norms", "[sweep]").tolist()
    else:
        norms = _get(sec, "norms", "[sweep]", list)
    if not norms:
        raise UsageError("[sweep]: the mu grid is empty")
    direction = _vector(sec, "direction", "[sweep]", model.p, default=np.eye(model.p)[0])
    center = _vector(sec, "center", "[sweep]", model.p, default=np.zeros(model.p))
    estimator = sec.get("estimator", "risk_difference")
    if estimator not in ("risk_difference", "kl_risk"):
        raise UsageError(f"[sweep]: unknown estimator {estimator!r}")
    if estimator == "risk_difference" and any(isinstance(p, str) for p in priors.values()):
        raise UsageError("[sweep]: predictive kinds such as 'plugin' need estimator = \"kl_risk\"")
    try:
        rows = risk.risk_sweep(priors, model, norms, direction, n, seed, estimator, args.threads, center)
    except KLShrinkError as exc:
        raise UsageError(str(exc)) from None
    out = args.out or "risk_sweep.csv"
    risk.write_risk_csv(rows, out)
    for name in priors:
        tag = f"{estimator}:{name}"
        sel = [r for r in rows if r.estimator == tag]
        means = [r.mean for r in sel]
        line = f"{tag}: min {min(means):.6g} max {max(means):.6g}"
        if estimator == "risk_difference":
            no_worse = all(r.mean >= -3.0 * r.std_error for r in sel)
            better = any(r.mean > 3.0 * r.std_error for r in sel)
            verdict = "dominates" if no_worse and better else ("no worse" if no_worse else "not dominating")
            line += f", {verdict} p_U over the grid"
        print(line)
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_PASS


def cmd_density_slice(args) -> int:
    cfg = load_config(args.config)
    model = parse_model(cfg)
    priors = parse_priors(cfg, model) if "prior" in cfg else {}
    sec = _section(cfg, "slice")
    _check_keys(sec, ("x", "axes", "y1", "y2", "densities", "anchor"), "[slice]")
    if "x" not in sec:
        raise UsageError("[slice]: missing key 'x'")
    x = _vector(sec, "x", "[slice]", model.p)
    axes = tuple(int(a) for a in sec.get("axes", [0, 1]))
    if len(axes) != 2:
        raise UsageError("[slice]: 'axes' must name two coordinates")
    for key in ("y1", "y2"):
        if key not in sec:
            raise UsageError(f"[slice]: missing key '{key}'")
    y1 = _axis(sec, "y1", "[slice]")
    y2 = _axis(sec, "y2", "[slice]")
    anchor = _vector(sec, "anchor", "[slice]", model.p, default=np.zeros(model.p))
    names = sec.get("densities", ["uniform"] + list(priors))
    densities = []
    for name in names:
        if name in priors:
            obj = priors[name]
            d = PredictiveDensity(model, obj) if isinstance(obj, str) else PredictiveDensity.bayes(obj, model)
        elif name in ("uniform", "plugin"):
            d = PredictiveDensity(model, name)
        else:
            raise UsageError(f"[slice]: unknown density {name!r}")
        densities.append((name, d))
    out = Path(args.out or "density_slice.csv")
    for name, d in densities:
        try:
            table = density_slice(d, x, axes, y1, y2, anchor, threads=args.threads)
        except KLShrinkError as exc:
            raise UsageError(str(exc)) from None
        path = out if len(densities) == 1 else out.with_name(f"{out.stem}_{name}{out.suffix or '.csv'}")
        write_slice_csv(table, path)
        a, b = table.argmax()
        print(f"{name}: mode grid point ({a:.6g}, {b:.6g}), wrote {path}")
    return EXIT_PASS


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["z_norm", "v", "value", "bound", "ok"])
        for z, v, value, bound, ok in rows:
            writer.writerow([repr(float(z)), repr(float(v)), repr(float(value)), repr(float(bound)), int(bool(ok))])


def _scan_rows(report):
    return [(r.z_norm, r.v, r.value, r.bound, r.ok) for r in report.records]


def _only_priors(priors, suite):
    bad = [k for k, p in priors.items() if isinstance(p, str)]
    if bad:
        raise UsageError(f"suite {suite} needs priors, got predictive kind(s) {', '.join(bad)}")
    return priors


def _suite_grid(suite, cfg, model, sec, args):
    priors = _only_priors(parse_priors(cfg, model), suite)
    mode = sec.get("mode", "m")
    if mode not in ("m", "sqrt"):
        raise UsageError(f"[verify]: mode must be 'm' or 'sqrt', got {mode!r}")
    seed = args.seed if args.seed is not None else 0
    rows, ok = [], True
    for name, prior in priors.items():
        if suite == "heat":
            rep = verify.heat_suite(prior, model, seed=seed)
        elif suite == "identity":
            rep = verify.identity_suite(prior, model, seed=seed)
        else:
            rep = verify.superharmonic_scan(prior, model, mode, seed=seed)
            name = f"{name} ({mode} mode)"
        print(rep.summary(f"{suite} {name}"))
        rows += _scan_rows(rep)
        ok &= rep.passed
    return ok, rows


def _suite_theorem2(cfg, model, sec):
    eps = _get(sec, "epsilon", "[verify]", default=1e-6)
    if "h" in sec:
        h = _mixing_from_config(sec["h"], "[verify].h")
    else:
        priors = parse_priors(cfg, model)
        found = [p for p in priors.values() if isinstance(p, ScaleMixture)]
        if not found:
            raise UsageError("theorem2 needs [verify].h or a scale-mixture prior")
        h = found[0].h
    if not isinstance(h, Strawderman):
        raise UsageError("theorem2 from config supports the Strawderman family only")
    res = verify.check_theorem2(verify.canonical_decomposition(h, model.p, eps))
    d = res.diagnostics
    print(
        f"theorem2 a={h.a} p={model.p}: {res.verdict} "
        f"(A/2 + B = {d['budget']:.7g}, limit {d['budget_limit']:.7g})"
    )
    rows = [
        (r, math.nan, sub.diagnostics["budget"], sub.diagnostics["budget_limit"], sub.passed)
        for r, sub in sorted(res.rescaled.items())
    ]
    return res.passed, rows


def _suite_lemma1(cfg, model, sec, args):
    priors = _only_priors(parse_priors(cfg, model), "lemma1")
    n, seed = _mc(cfg, args)
    x = _vector(sec, "x", "[verify]", model.p, default=2.0 * np.eye(model.p)[0])
    rows, ok = [], True
    xn = float(np.linalg.norm(x))
    for name, prior in priors.items():
        rep = verify.check_lemma1(prior, model, x, n, seed)
        print(
            f"lemma1 {name}: {'pass' if rep.passed else 'fail'} "
            f"(mass {rep.mass:.6f} +/- {rep.mass_se:.2g})"
        )
        rows.append((xn, model.v_x, abs(rep.mass - 1.0), 3.0 * rep.mass_se, rep.mass_ok))
        for diff, se in zip(np.abs(rep.predictive_mean - rep.posterior_mean), rep.predictive_se):
            rows.append((xn, model.v_x, diff, 3.0 * se, diff <= 3.0 * se + 1e-12))
        ok &= rep.passed
    return ok, rows


def _suite_eq25(cfg, model, sec, args):
    priors = _only_priors(parse_priors(cfg, model), "eq25")
    n, seed = _mc(cfg, args)
    vs = _get(sec, "v", "[verify]", list, default=[model.v_w, model.v_x])
    norms = _get(sec, "norms", "[verify]", list, default=[0.0, 2.0, 5.0])
    direction = _vector(sec, "direction", "[verify]", model.p, default=np.eye(model.p)[0])
    direction = direction / np.linalg.norm(direction)
    rows, ok = [], True
    for name, prior in priors.items():
        for i, v in enumerate(vs):
            for j, t in enumerate(norms):
                s = risk.substream_seed(seed, i * len(norms) + j, f"eq25:{name}")
                direct, via = risk.check_eq25(prior, v, t * direction, n, s)
                gap = abs(direct.mean - via.mean)
                bound = 3.0 * risk.combined_se(direct, via)
                rows.append((t, v, gap, bound, gap <= bound))
                ok &= gap <= bound
        print(f"eq25 {name}: {'pass' if ok else 'fail'}")
    return ok, rows


def _suite_rate(model, sec):
    s2 = _get(sec, "sigma2", "[verify]", list, default=[1e2, 1e3, 1e4])
    tol = _get(sec, "tolerance", "[verify]", default=0.1)
    rep = verify.corollary1_rate(model, s2, tolerance=tol)
    print(f"corollary1-rate: {'pass' if rep.passed else 'fail'} (slope {rep.slope:.6f}, target {rep.target} +/- {tol})")
    rows = [(0.0, s, g, math.inf, g > 0) for s, g in zip(rep.sigma2, rep.gaps)]
    rows.append((math.nan, math.nan, rep.slope, rep.target + tol, rep.passed))
    return rep.passed, rows


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    model = parse_model(cfg)
    sec = _section(cfg, "verify", required=False)
    _check_keys(
        sec, ("mode", "h", "epsilon", "x", "v", "norms", "direction", "sigma2", "tolerance"), "[verify]"
    )
    suite = args.suite
    try:
        if suite in ("heat", "identity", "superharmonic"):
            ok, rows = _suite_grid(suite, cfg, model, sec, args)
        elif suite == "theorem2":
            ok, rows = _suite_theorem2(cfg, model, sec)
        elif suite == "lemma1":
            ok, rows = _suite_lemma1(cfg, model, sec, args)
        elif suite == "eq25":
            ok, rows = _suite_eq25(cfg, model, sec, args)
        else:
            ok, rows = _suite_rate(model, sec)
    except KLShrinkError as exc:
        raise UsageError(str(exc)) from None
    out = args.out or f"verify_{suite}.csv"
    _write_rows(out, rows)
    print(f"{suite}: {'PASS' if ok else 'FAIL'}, wrote {len(rows)} rows to {out}")
    return EXIT_PASS if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _positive_int(text):
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if val < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return val


def _u64(text):
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("must be an unsigned 64-bit integer")
    return val


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML configuration file")
    common.add_argument("--out", metavar="PATH", help="output CSV path")
    common.add_argument("--seed", type=_u64, help="master seed (overrides [mc].seed)")
    common.add_argument("--n", type=_positive_int, help="Monte Carlo sample size (overrides [mc].n)")
    common.add_argument(
        "--threads", type=_positive_int, default=os.cpu_count() or 1, help="worker threads (default: all cores)"
    )
    parser = argparse.ArgumentParser(prog="klshrink", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("risk-sweep", parents=[common], help="KL risk or risk difference over a grid of |mu|")
    sub.add_parser("density-slice", parents=[common], help="predictive density on a two-coordinate grid")
    v = sub.add_parser("verify", parents=[common], help="run a verification suite")
    v.add_argument("suite", choices=SUITES)
    return parser


COMMANDS = {"risk-sweep": cmd_risk_sweep, "density-slice": cmd_density_slice, "verify": cmd_verify}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"klshrink: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
