"""Numerical checks of the identities and sufficient conditions behind minimaxity.

Every check compares two independently computed quantities, or tests a sign
condition against a tolerance derived from the propagated numerical error.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InputError, ParameterError
from .marginals import evaluate, log_marginal_batch, posterior_mean
from .model import (
    GaussianModel,
    Gaussian,
    Harmonic,
    Mixture,
    Rescaled,
    ScaleMixture,
    Strawderman,
    Subspace,
    Uniform,
    as_center,
    validate_prior,
)
from .predictive import MomentEstimate, predictive_mean
from .risk import DEFAULT_N, bayes_risk_gap

__all__ = [
    "SCAN_RADII",
    "SCAN_TOL",
    "ScanRecord",
    "ScanReport",
    "scan_points",
    "heat_residual",
    "check_identity_18_19",
    "relative_gap",
    "superharmonic_scan",
    "heat_suite",
    "identity_suite",
    "HConditionInput",
    "Theorem2Result",
    "canonical_decomposition",
    "check_theorem2",
    "Lemma1Report",
    "check_lemma1",
    "RateReport",
    "corollary1_rate",
    "write_scan_csv",
]

SCAN_RADII = (0.1, 0.5, 1.0, 2.0, 5.0, 10.0)
SCAN_DIRECTIONS = 4
SCAN_BALL_POINTS = 32
SCAN_BALL_RADIUS = 10.0
SCAN_V_POINTS = 8
SCAN_TOL = 1e-8
HEAT_TOL = 1e-5
IDENTITY_TOL_CLOSED = 1e-10
IDENTITY_TOL_QUAD = 1e-4


# ---------------------------------------------------------------------------
# Scan reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScanRecord:
    z_norm: float
    v: float
    value: float
    bound: float
    ok: bool


@dataclass
class ScanReport:
    """Outcome of evaluating a ``value <= bound`` condition over a point grid.

    Each record's ``bound`` is the base ``tolerance`` widened by that
    point's numerical-error allowance.  ``max_violation`` is the largest
    value after subtracting the allowance, so the verdict is ``"pass"``
    exactly when ``max_violation <= tolerance``.
    """

    records: List[ScanRecord]
    tolerance: float
    max_violation: float = field(init=False)
    verdict: str = field(init=False)

    def __post_init__(self):
        if self.records:
            self.max_violation = max(r.value - (r.bound - self.tolerance) for r in self.records)
        else:
            self.max_violation = -math.inf
        self.verdict = "pass" if self.max_violation <= self.tolerance else "fail"

    @property
    def points_tested(self) -> int:
        return len(self.records)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def summary(self, name: str) -> str:
        return (
            f"{name}: {self.verdict} ({self.points_tested} points, "
            f"max violation {self.max_violation:.3e}, tolerance {self.tolerance:.1e})"
        )


def write_scan_csv(report: ScanReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["z_norm", "v", "value", "bound", "ok"])
        for r in report.records:
            writer.writerow([repr(r.z_norm), repr(r.v), repr(r.value), repr(r.bound), int(r.ok)])


def _default_center(prior, p):
    if isinstance(prior, (Gaussian, Harmonic, ScaleMixture)):
        return as_center(prior.center, p)
    if isinstance(prior, Subspace):
        return as_center(prior.offset, p)
    if isinstance(prior, Mixture):
        return sum(w * _default_center(c, p) for w, c in zip(prior.weights, prior.components))
    return np.zeros(p)


def scan_points(p: int, v: float, center=None, seed: int = 0) -> np.ndarray:
    """Radial shells in random directions plus uniform points in a ball, scaled by ``sqrt(v)``."""
    rng = np.random.default_rng(seed)
    c = np.zeros(p) if center is None else np.asarray(center, dtype=float)
    dirs = rng.standard_normal((SCAN_DIRECTIONS, p))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    shells = np.array([r * d for r in SCAN_RADII for d in dirs])
    g = rng.standard_normal((SCAN_BALL_POINTS, p))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    radius = SCAN_BALL_RADIUS * rng.random(SCAN_BALL_POINTS) ** (1.0 / p)
    ball = g * radius[:, None]
    return c + math.sqrt(v) * np.vstack([shells, ball])


def _v_grid(model: GaussianModel, count: int = SCAN_V_POINTS) -> np.ndarray:
    return np.linspace(model.v_w, model.v_x, count)


# ---------------------------------------------------------------------------
# Pointwise identities
# ---------------------------------------------------------------------------


def relative_gap(a: float, b: float, scale: float = 0.0) -> float:
    """``|a - b|`` relative to ``max(|a|, |b|, scale)``."""
    scale = max(abs(a), abs(b), scale)
    return 0.0 if scale == 0.0 else abs(a - b) / scale


def _richardson(values: Sequence[float], ratio: float = 2.0, order: int = 2) -> float:
    """Neville-style extrapolation of a sequence computed at steps ``h / ratio**k``."""
    table = list(values)
    k = order
    while len(table) > 1:
        f = ratio**k
        table = [(f * table[i + 1] - table[i]) / (f - 1.0) for i in range(len(table) - 1)]
        k += order
    return table[0]


def _fd_dv_logm(prior, z, v, levels=4):
    h0 = 0.05 * v
    Z = np.asarray(z, dtype=float).reshape(1, -1)
    est = []
    for k in range(levels):
        h = h0 / 2.0**k
        up = log_marginal_batch(prior, Z, v + h)[0]
        down = log_marginal_batch(prior, Z, v - h)[0]
        est.append((up - down) / (2.0 * h))
    return _richardson(est)


def heat_residual(prior, z, v: float) -> float:
    """``|d/dv m - lap m / 2| / m`` at ``(z, v)``.

    ``d/dv log m`` comes from Richardson-extrapolated central differences in
    ``v``; ``lap m / m`` from the analytic or under-the-integral route.
    """
    z = np.asarray(z, dtype=float)
    prior = validate_prior(prior, z.size)
    if isinstance(prior, Uniform):
        return 0.0
    lap = float(evaluate(prior, z.reshape(1, -1), v).lap[0])
    return abs(_fd_dv_logm(prior, z, v) - 0.5 * lap)


def _uses_quadrature(prior) -> bool:
    if isinstance(prior, ScaleMixture):
        return True
    if isinstance(prior, Subspace):
        return _uses_quadrature(prior.base)
    if isinstance(prior, Mixture):
        return any(_uses_quadrature(c) for c in prior.components)
    return False


def _fd_sqrt_laplacian_ratio(prior, z, v, levels=3):
    """``lap sqrt(m) / sqrt(m)`` from second differences of ``exp((log m - log m(z)) / 2)``."""
    p = z.size
    h0 = 0.1 * math.sqrt(v)
    L0 = log_marginal_batch(prior, z.reshape(1, -1), v)[0]
    est = []
    for k in range(levels):
        h = h0 / 2.0**k
        shifts = np.vstack([np.eye(p) * h, -np.eye(p) * h])
        L = log_marginal_batch(prior, z + shifts, v)
        r = np.exp(0.5 * (L - L0))
        est.append(float(np.sum(r[:p] + r[p:] - 2.0)) / h**2)
    return _richardson(est)


def _identity_sides(prior, z, v):
    ev = evaluate(prior, z.reshape(1, -1), v)
    g2 = float(np.sum(ev.grad[0] ** 2))
    lap = float(ev.lap[0])
    lhs = lap - 0.5 * g2
    if _uses_quadrature(prior):
        rhs = 2.0 * _fd_sqrt_laplacian_ratio(prior, z, v)
    else:
        rhs = float(ev.lap_log[0]) + 0.5 * g2
    # both sides are differences of terms of this size, so errors scale with it
    scale = max(abs(lap), 0.5 * g2)
    return lhs, rhs, scale


def check_identity_18_19(prior, z, v: float) -> Tuple[float, float]:
    """Both sides of ``lap m / m - |grad log m|^2 / 2 = 2 lap sqrt(m) / sqrt(m)``.

    The left side uses the direct Laplacian-ratio route.  The right side is
    computed independently: through ``lap log m`` for closed-form priors and
    by finite differences of ``sqrt(m)`` for quadrature-based priors.
    """
    z = np.asarray(z, dtype=float)
    prior = validate_prior(prior, z.size)
    lhs, rhs, _ = _identity_sides(prior, z, v)
    return lhs, rhs


# ---------------------------------------------------------------------------
# Grid suites
# ---------------------------------------------------------------------------


def superharmonic_scan(
    prior,
    model: GaussianModel,
    mode: str = "m",
    center=None,
    v_points: Optional[Sequence[float]] = None,
    seed: int = 0,
    tolerance: float = SCAN_TOL,
) -> ScanReport:
    """Test ``lap m <= 0`` (``mode="m"``) or ``lap sqrt(m) <= 0`` (``mode="sqrt"``).

    The sign is read from ``lap m / m`` or ``lap sqrt(m) / sqrt(m)``.  Points
    are the scan grid around ``center`` at each ``v`` in ``v_points``
    (8 points spanning ``[v_w, v_x]`` by default).  Per-point bounds are
    ``max(tolerance, 10 x propagated error)``.
    """
    if mode not in ("m", "sqrt"):
        raise ParameterError(f"mode must be 'm' or 'sqrt', got {mode!r}")
    p = model.p
    prior = validate_prior(prior, p)
    c = _default_center(prior, p) if center is None else np.asarray(center, dtype=float)
    vs = _v_grid(model) if v_points is None else np.asarray(v_points, dtype=float)
    records = []
    for v in vs:
        Z = scan_points(p, v, c, seed)
        ev = evaluate(prior, Z, v)
        g2 = np.sum(ev.grad**2, axis=1)
        if mode == "m":
            vals, errs = ev.lap, ev.lap_err
        else:
            vals = 0.5 * (ev.lap - 0.5 * g2)
            errs = 0.5 * ev.lap_err + 0.5 * ev.err * g2
        bounds = np.maximum(tolerance, 10.0 * errs)
        norms = np.linalg.norm(Z - c, axis=1)
        for zn, val, b in zip(norms, vals, bounds):
            records.append(ScanRecord(float(zn), float(v), float(val), float(b), bool(val <= b)))
    return ScanReport(records, tolerance)


def heat_suite(prior, model: GaussianModel, center=None, seed: int = 0, tolerance: float = HEAT_TOL) -> ScanReport:
    """:func:`heat_residual` over the scan grid; passes when every residual is below ``tolerance``."""
    p = model.p
    prior = validate_prior(prior, p)
    c = _default_center(prior, p) if center is None else np.asarray(center, dtype=float)
    records = []
    for v in _v_grid(model):
        for z in scan_points(p, v, c, seed):
            res = heat_residual(prior, z, v)
            records.append(ScanRecord(float(np.linalg.norm(z - c)), float(v), res, tolerance, res <= tolerance))
    return ScanReport(records, tolerance)


def identity_suite(prior, model: GaussianModel, center=None, seed: int = 0) -> ScanReport:
    """Gap between the two sides of :func:`check_identity_18_19` over the scan grid.

    The gap is relative to the larger of the two sides and the summands
    ``lap m / m`` and ``|grad log m|^2 / 2`` they are formed from.
    """
    p = model.p
    prior = validate_prior(prior, p)
    tol = IDENTITY_TOL_QUAD if _uses_quadrature(prior) else IDENTITY_TOL_CLOSED
    c = _default_center(prior, p) if center is None else np.asarray(center, dtype=float)
    records = []
    for v in _v_grid(model):
        for z in scan_points(p, v, c, seed):
            lhs, rhs, scale = _identity_sides(prior, z, v)
            gap = relative_gap(lhs, rhs, scale)
            records.append(ScanRecord(float(np.linalg.norm(z - c)), float(v), gap, tol, gap <= tol))
    return ScanReport(records, tol)


# ---------------------------------------------------------------------------
# Mixing-density conditions for scale-mixture priors
# ---------------------------------------------------------------------------

DEFAULT_S_GRID = np.concatenate([[0.0], np.logspace(-6, 6, 241)])
DECOMPOSITION_TOL = 1e-8
MONOTONE_SLACK = 1e-10


@dataclass
class HConditionInput:
    """A mixing density with a candidate split ``-(s+1) h'(s)/h(s) = l1(s) + l2(s)``."""

    h: object
    p: int
    l1: Callable[[np.ndarray], np.ndarray]
    l2: Callable[[np.ndarray], np.ndarray]
    A: float
    B: float
    s_grid: np.ndarray = field(default_factory=lambda: DEFAULT_S_GRID.copy())
    epsilon: float = 1e-6


@dataclass
class Theorem2Result:
    """``verdict`` is ``"pass"``, ``"pass-at-boundary"`` or ``"fail"``."""

    verdict: str
    diagnostics: Dict[str, object]
    rescaled: Dict[float, "Theorem2Result"] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict != "fail"


def canonical_decomposition(h: Strawderman, p: int, epsilon: float = 1e-6) -> HConditionInput:
    """``l1 = 2 - a - eps``, ``l2 = eps`` for ``h(s) = (1+s)^(a-2)``, whose target is ``2 - a``."""
    if not isinstance(h, Strawderman):
        raise ParameterError("the canonical decomposition is defined for the Strawderman family")
    c1 = 2.0 - h.a - epsilon

    def l1(s):
        return np.full_like(np.asarray(s, dtype=float), c1)

    def l2(s):
        return np.full_like(np.asarray(s, dtype=float), epsilon)

    return HConditionInput(h=h, p=p, l1=l1, l2=l2, A=c1, B=epsilon, epsilon=epsilon)


def _log_tail_ratio(h, p, s):
    s = np.asarray(s, dtype=float)
    return np.asarray(h.log_h(s), dtype=float) - 0.5 * p * np.log1p(s)


def _theorem2_conditions(h, p, l1_fn, l2_fn, A, B, s, eps) -> Theorem2Result:
    with np.errstate(divide="ignore", invalid="ignore"):
        target = -(s + 1.0) * np.asarray(h.dlog_h(s), dtype=float)
    l1 = np.asarray(l1_fn(s), dtype=float)
    l2 = np.asarray(l2_fn(s), dtype=float)
    finite = np.isfinite(target)
    mismatch = np.abs(l1 + l2 - target)[finite]
    scale = np.maximum(1.0, np.abs(target[finite]))
    worst = float(np.max(mismatch / scale, initial=0.0))
    if worst > DECOMPOSITION_TOL:
        raise InputError(f"l1 + l2 differs from -(s+1)h'/h by {worst:.3g} on the grid")
    budget = 0.5 * A + B
    limit = (p - 2) / 4.0
    tail_s = np.logspace(5, 6, 11)
    tail = _log_tail_ratio(h, p, tail_s)
    ends = _log_tail_ratio(h, p, np.array([1e2, 1e6]))
    diag = {
        "decomposition_error": worst,
        "l1_nondecreasing": bool(np.all(np.diff(l1) >= -MONOTONE_SLACK)),
        "l1_le_A": bool(np.all(l1 <= A + MONOTONE_SLACK)),
        "l2_positive": bool(np.all(l2 > 0)),
        "l2_le_B": bool(np.all(l2 <= B + MONOTONE_SLACK)),
        "budget": budget,
        "budget_limit": limit,
        "budget_ok": budget <= limit,
        "budget_at_boundary": limit < budget <= limit + eps,
        "tail_decreasing": bool(np.all(np.diff(tail) < 0)),
        "tail_small": bool(ends[1] < math.log(1e-3) + ends[0]),
    }
    hard = ["l1_nondecreasing", "l1_le_A", "l2_positive", "l2_le_B", "tail_decreasing", "tail_small"]
    if not all(diag[k] for k in hard):
        verdict = "fail"
    elif diag["budget_ok"]:
        verdict = "pass"
    elif diag["budget_at_boundary"]:
        verdict = "pass-at-boundary"
    else:
        verdict = "fail"
    return Theorem2Result(verdict, diag)


def check_theorem2(inp: HConditionInput, radii: Sequence[float] = (0.25, 0.5, 1.0)) -> Theorem2Result:
    """Check the mixing-density conditions for superharmonic ``sqrt(m)``.

    Condition (i) is the decomposition with its bounds and budget
    ``A/2 + B <= (p - 2)/4``; condition (ii) is tested as a decreasing,
    vanishing tail of ``h(s) / (1 + s)^(p/2)`` over the last grid decade.
    The same checks are repeated for ``h_r(s) = r h(r s)`` with the
    decomposition ``l_i(r s) r (s + 1) / (r s + 1)``; any failure there
    fails the overall verdict.
    """
    s = np.asarray(inp.s_grid, dtype=float)
    if np.any(s < 0):
        raise InputError("s grid must be nonnegative")
    with np.errstate(divide="ignore"):
        logh = np.asarray(inp.h.log_h(s), dtype=float)
    if np.any(~np.isfinite(logh[s > 0])):
        raise InputError("h must be positive on the grid")
    base = _theorem2_conditions(inp.h, inp.p, inp.l1, inp.l2, inp.A, inp.B, s, inp.epsilon)
    for r in radii:

        def factor(t, r=r):
            return r * (t + 1.0) / (r * t + 1.0)

        def l1r(t, r=r):
            return factor(t) * np.asarray(inp.l1(r * t), dtype=float)

        def l2r(t, r=r):
            return factor(t) * np.asarray(inp.l2(r * t), dtype=float)

        base.rescaled[float(r)] = _theorem2_conditions(
            Rescaled(inp.h, float(r)), inp.p, l1r, l2r, inp.A, inp.B, s, inp.epsilon
        )
    if base.verdict != "fail" and any(not res.passed for res in base.rescaled.values()):
        base.verdict = "fail"
        base.diagnostics["rescaling_closure"] = False
    else:
        base.diagnostics["rescaling_closure"] = all(res.passed for res in base.rescaled.values())
    return base


# ---------------------------------------------------------------------------
# Properness and predictive mean
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Lemma1Report:
    mass: float
    mass_se: float
    predictive_mean: np.ndarray
    predictive_se: np.ndarray
    posterior_mean: np.ndarray
    mass_ok: bool
    mean_ok: bool

    @property
    def passed(self) -> bool:
        return self.mass_ok and self.mean_ok


def check_lemma1(prior, model: GaussianModel, x, n: int = DEFAULT_N, seed: int = 0) -> Lemma1Report:
    """Check that the Bayes predictive density integrates to one and has the posterior mean.

    Both are estimated from the same importance sample drawn from ``p_U``;
    each comparison allows three standard errors.
    """
    prior = validate_prior(prior, model.p)
    x = np.asarray(x, dtype=float)
    est: MomentEstimate = predictive_mean(prior, model, x, n, seed)
    post = posterior_mean(prior, x, model.v_x)
    slack = 1e-12
    mass_ok = abs(est.mass - 1.0) <= 3.0 * est.mass_se + slack
    mean_ok = bool(np.all(np.abs(est.mean - post) <= 3.0 * est.std_error + slack))
    return Lemma1Report(est.mass, est.mass_se, est.mean, est.std_error, post, mass_ok, mean_ok)


# ---------------------------------------------------------------------------
# Rate of the Bayes risk gap
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateReport:
    sigma2: Tuple[float, ...]
    gaps: Tuple[float, ...]
    slope: float
    target: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.slope - self.target) <= self.tolerance and all(g > 0 for g in self.gaps)


def corollary1_rate(
    model: GaussianModel,
    sigma2: Sequence[float] = (1e2, 1e3, 1e4),
    target: float = -1.0,
    tolerance: float = 0.1,
) -> RateReport:
    """Least-squares log-log slope of :func:`bayes_risk_gap` against ``sigma2``."""
    s2 = np.asarray(sigma2, dtype=float)
    if s2.size < 2:
        raise ParameterError("need at least two sigma2 values")
    gaps = np.array([bayes_risk_gap(model, s) for s in s2])
    slope = float(np.polyfit(np.log(s2), np.log(gaps), 1)[0])
    return RateReport(tuple(s2.tolist()), tuple(gaps.tolist()), slope, target, tolerance)
