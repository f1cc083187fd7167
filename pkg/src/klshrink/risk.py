"""Monte Carlo and closed-form evaluation of KL and quadratic risks.

All estimators take an explicit integer ``seed`` and are bit-reproducible
from ``(inputs, n, seed)``.  Sweeps derive a per-point seed from the master
seed, the point index and an operation tag (:func:`substream_seed`), so
results do not depend on execution order or thread count.
"""

from __future__ import annotations

import csv
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ParameterError
from .marginals import evaluate, log_marginal_batch
from .model import Gaussian, GaussianModel, Uniform, as_center, validate_prior
from .predictive import PredictiveDensity, weighted_mean

__all__ = [
    "DEFAULT_N",
    "RiskEstimate",
    "SweepRow",
    "substream_seed",
    "combined_se",
    "as_density",
    "gaussian_kl",
    "kl_loss",
    "kl_loss_closed_form",
    "kl_risk",
    "risk_difference",
    "risk_u_closed_form",
    "risk_plugin_closed_form",
    "stein_ure",
    "quadratic_risk",
    "quadratic_risk_reduction",
    "check_eq25",
    "bayes_risk_gap",
    "bayes_risk_gap_mc",
    "risk_sweep",
    "write_risk_csv",
]

DEFAULT_N = 100_000
_LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class RiskEstimate:
    mean: float
    std_error: float
    n: int
    seed: int

    @classmethod
    def from_samples(cls, samples: np.ndarray, seed: int) -> "RiskEstimate":
        n = samples.shape[0]
        se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
        return cls(float(np.mean(samples)), se, n, int(seed))

    def __sub__(self, other: "RiskEstimate") -> "RiskEstimate":
        return RiskEstimate(self.mean - other.mean, combined_se(self, other), self.n, self.seed)


def combined_se(*estimates: RiskEstimate) -> float:
    return math.sqrt(sum(e.std_error**2 for e in estimates))


def substream_seed(master: int, index: int, tag: str) -> int:
    """64-bit seed for the ``index``-th point of operation ``tag``."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(int(index), zlib.crc32(tag.encode())))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _check_n(n):
    if int(n) < 2:
        raise ParameterError(f"sample count must be >= 2, got {n}")
    return int(n)


def _mu(mu, p):
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (p,):
        raise ParameterError(f"mu must have length {p}, got shape {mu.shape}")
    return mu


def as_density(obj, model: GaussianModel) -> PredictiveDensity:
    """Coerce ``"uniform"``, ``"plugin"``, a prior, or a density to a density."""
    if isinstance(obj, PredictiveDensity):
        return obj
    if isinstance(obj, str):
        return PredictiveDensity(model, obj)
    return PredictiveDensity(model, "bayes", obj)


# ---------------------------------------------------------------------------
# KL loss and risk
# ---------------------------------------------------------------------------


def gaussian_kl(p: int, mean1, var1: float, mean2, var2: float) -> float:
    """``KL(N_p(mean1, var1 I) || N_p(mean2, var2 I))``."""
    sq = float(np.sum((np.asarray(mean1, dtype=float) - np.asarray(mean2, dtype=float)) ** 2))
    return 0.5 * p * (math.log(var2 / var1) + var1 / var2 - 1.0) + sq / (2.0 * var2)


def _gaussian_predictive(density: PredictiveDensity, x):
    """Mean and per-coordinate variance when the predictive density is normal."""
    m = density.model
    x = np.asarray(x, dtype=float)
    if density.kind == "uniform" or (density.kind == "bayes" and isinstance(density.prior, Uniform)):
        return x, m.v_x + m.v_y
    if density.kind == "plugin":
        return x, m.v_y
    if isinstance(density.prior, Gaussian):
        s2 = density.prior.sigma2
        b = as_center(density.prior.center, m.p)
        shrink = s2 / (s2 + m.v_x)
        return b + shrink * (x - b), m.v_y + m.v_x * shrink
    return None


def kl_loss_closed_form(model: GaussianModel, mu, density, x) -> Optional[float]:
    """Exact KL loss for normal predictive densities, ``None`` otherwise."""
    density = as_density(density, model)
    got = _gaussian_predictive(density, x)
    if got is None:
        return None
    mean, var = got
    return gaussian_kl(model.p, _mu(mu, model.p), model.v_y, mean, var)


def _paired_log_density(density: PredictiveDensity, X, Y):
    m = density.model
    if density.kind in ("uniform", "plugin"):
        var = m.v_x + m.v_y if density.kind == "uniform" else m.v_y
        return -0.5 * m.p * (_LOG2PI + math.log(var)) - np.sum((Y - X) ** 2, axis=1) / (2.0 * var)
    var = m.v_x + m.v_y
    log_u = -0.5 * m.p * (_LOG2PI + math.log(var)) - np.sum((Y - X) ** 2, axis=1) / (2.0 * var)
    if isinstance(density.prior, Uniform):
        return log_u
    W = weighted_mean(m, X, Y)
    return log_marginal_batch(density.prior, W, m.v_w) - log_marginal_batch(density.prior, X, m.v_x) + log_u


def _log_p_true(model, mu, Y):
    return -0.5 * model.p * (_LOG2PI + math.log(model.v_y)) - np.sum((Y - mu) ** 2, axis=1) / (2.0 * model.v_y)


def kl_loss(model: GaussianModel, mu, density, x, n: int = DEFAULT_N, seed: int = 0) -> RiskEstimate:
    """MC estimate of ``int p(y | mu) log[p(y | mu) / p_hat(y | x)] dy``."""
    n = _check_n(n)
    density = as_density(density, model)
    mu = _mu(mu, model.p)
    x = _mu(x, model.p)
    rng = np.random.default_rng(seed)
    Y = mu + math.sqrt(model.v_y) * rng.standard_normal((n, model.p))
    X = np.broadcast_to(x, Y.shape)
    samples = _log_p_true(model, mu, Y) - _paired_log_density(density, X, Y)
    return RiskEstimate.from_samples(samples, seed)


def kl_risk(density, model: GaussianModel, mu, n: int = DEFAULT_N, seed: int = 0) -> RiskEstimate:
    """MC estimate of the KL risk at ``mu``: one ``y`` draw per ``x`` draw."""
    n = _check_n(n)
    density = as_density(density, model)
    mu = _mu(mu, model.p)
    rng = np.random.default_rng(seed)
    X = mu + math.sqrt(model.v_x) * rng.standard_normal((n, model.p))
    Y = mu + math.sqrt(model.v_y) * rng.standard_normal((n, model.p))
    samples = _log_p_true(model, mu, Y) - _paired_log_density(density, X, Y)
    return RiskEstimate.from_samples(samples, seed)


def risk_difference(prior, model: GaussianModel, mu, n: int = DEFAULT_N, seed: int = 0) -> RiskEstimate:
    """``R_KL(mu, p_U) - R_KL(mu, p_pi)`` as ``E log m(W; v_w) - E log m(X; v_x)``.

    Both expectations use the same standard-normal draws.
    """
    n = _check_n(n)
    prior = validate_prior(prior, model.p)
    mu = _mu(mu, model.p)
    if isinstance(prior, Uniform):
        return RiskEstimate(0.0, 0.0, n, int(seed))
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, model.p))
    lw = log_marginal_batch(prior, mu + math.sqrt(model.v_w) * Z, model.v_w)
    lx = log_marginal_batch(prior, mu + math.sqrt(model.v_x) * Z, model.v_x)
    return RiskEstimate.from_samples(lw - lx, seed)


def risk_u_closed_form(model: GaussianModel) -> float:
    """Constant KL risk of the best invariant density, ``(p/2) log(1 + v_x/v_y)``."""
    return 0.5 * model.p * math.log1p(model.v_x / model.v_y)


def risk_plugin_closed_form(model: GaussianModel) -> float:
    """KL risk of the plug-in density ``N(x, v_y I)``: ``p v_x / (2 v_y)``."""
    return model.p * model.v_x / (2.0 * model.v_y)


# ---------------------------------------------------------------------------
# Quadratic risk and Stein's unbiased estimate
# ---------------------------------------------------------------------------


def stein_ure(prior, z, v: float) -> Tuple[float, float]:
    """Stein's unbiased estimate of quadratic risk reduction, in both forms.

    The first is ``|grad log m|^2 - 2 lap m / m``; the second is
    ``-4 lap sqrt(m) / sqrt(m)`` evaluated through ``lap log m``.
    """
    ev = evaluate(prior, np.asarray(z, dtype=float).reshape(1, -1), v)
    g2 = float(np.sum(ev.grad[0] ** 2))
    form_m = g2 - 2.0 * float(ev.lap[0])
    form_sqrt = -4.0 * (0.5 * float(ev.lap_log[0]) + 0.25 * g2)
    return form_m, form_sqrt


def _posterior_means(prior, X, v):
    return X + v * evaluate(prior, X, v).grad


def quadratic_risk(prior, v: float, mu, n: int = DEFAULT_N, seed: int = 0) -> RiskEstimate:
    """MC estimate of ``E |E_pi(mu | X) - mu|^2`` with ``X ~ N(mu, v I)``."""
    n = _check_n(n)
    mu = np.asarray(mu, dtype=float)
    prior = validate_prior(prior, mu.size)
    rng = np.random.default_rng(seed)
    X = mu + math.sqrt(v) * rng.standard_normal((n, mu.size))
    samples = np.sum((_posterior_means(prior, X, v) - mu) ** 2, axis=1)
    return RiskEstimate.from_samples(samples, seed)


def quadratic_risk_reduction(prior, v: float, mu, n: int = DEFAULT_N, seed: int = 0) -> RiskEstimate:
    """``R_Q(mu, X) - R_Q(mu, E_pi(mu | X))`` with common draws for both terms."""
    n = _check_n(n)
    mu = np.asarray(mu, dtype=float)
    prior = validate_prior(prior, mu.size)
    if isinstance(prior, Uniform):
        return RiskEstimate(0.0, 0.0, n, int(seed))
    rng = np.random.default_rng(seed)
    X = mu + math.sqrt(v) * rng.standard_normal((n, mu.size))
    samples = np.sum((X - mu) ** 2, axis=1) - np.sum((_posterior_means(prior, X, v) - mu) ** 2, axis=1)
    return RiskEstimate.from_samples(samples, seed)


def check_eq25(prior, v: float, mu, n: int = DEFAULT_N, seed: int = 0, dv: Optional[float] = None):
    """Two estimators of the quadratic risk reduction at variance ``v``.

    Returns ``(direct, via_log_marginal)`` where ``direct`` is
    :func:`quadratic_risk_reduction` and ``via_log_marginal`` is
    ``-2 v^2 d/dv E_{mu,v} log m(Z; v)`` by a central difference in ``v``
    with common standard-normal draws.  At ``v = 1`` the factor is the
    familiar ``-2``; the ``v^2`` follows from Stein's identity at general
    ``v``.  The two estimators use independent random streams.
    """
    n = _check_n(n)
    mu = np.asarray(mu, dtype=float)
    p = mu.size
    prior = validate_prior(prior, p)
    dv = 0.01 * v if dv is None else float(dv)
    if not 0 < dv < v:
        raise ParameterError("dv must lie in (0, v)")
    lhs = quadratic_risk_reduction(prior, v, mu, n, substream_seed(seed, 0, "eq25-direct"))
    rseed = substream_seed(seed, 0, "eq25-logm")
    if isinstance(prior, Uniform):
        return lhs, RiskEstimate(0.0, 0.0, n, rseed)
    rng = np.random.default_rng(rseed)
    Z = rng.standard_normal((n, p))
    up = log_marginal_batch(prior, mu + math.sqrt(v + dv) * Z, v + dv)
    down = log_marginal_batch(prior, mu + math.sqrt(v - dv) * Z, v - dv)
    samples = -2.0 * v * v * (up - down) / (2.0 * dv)
    return lhs, RiskEstimate.from_samples(samples, rseed)


# ---------------------------------------------------------------------------
# Gaussian-prior Bayes risk gap
# ---------------------------------------------------------------------------


def bayes_risk_gap(model: GaussianModel, sigma2: float) -> float:
    """Average-risk gap between ``p_U`` and the Bayes rule under ``N_p(0, sigma2 I)``.

    With ``mu ~ N(0, sigma2 I)`` the variable ``Z`` at variance ``v`` is
    ``N(0, (v + sigma2) I)``, so each expected log-marginal is
    ``-(p/2)[log(2 pi (v + sigma2)) + 1]`` and the gap is
    ``(p/2) log((v_x + sigma2) / (v_w + sigma2))``.
    """
    if not sigma2 > 0:
        raise ParameterError(f"sigma2 must be positive, got {sigma2}")
    return 0.5 * model.p * math.log((model.v_x + sigma2) / (model.v_w + sigma2))


def bayes_risk_gap_mc(model: GaussianModel, sigma2: float, n: int = DEFAULT_N, seed: int = 0) -> RiskEstimate:
    """MC version of :func:`bayes_risk_gap`: the risk difference averaged over the prior."""
    n = _check_n(n)
    prior = Gaussian(sigma2)
    rng = np.random.default_rng(seed)
    mu = math.sqrt(sigma2) * rng.standard_normal((n, model.p))
    Z = rng.standard_normal((n, model.p))
    lw = log_marginal_batch(prior, mu + math.sqrt(model.v_w) * Z, model.v_w)
    lx = log_marginal_batch(prior, mu + math.sqrt(model.v_x) * Z, model.v_x)
    return RiskEstimate.from_samples(lw - lx, seed)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    mu_norm: float
    estimator: str
    mean: float
    std_error: float
    n: int
    seed: int


_ESTIMATORS = ("risk_difference", "kl_risk")


def risk_sweep(
    entries: Mapping[str, object],
    model: GaussianModel,
    norms: Sequence[float],
    direction=None,
    n: int = DEFAULT_N,
    seed: int = 0,
    estimator: str = "risk_difference",
    threads: int = 1,
    center=None,
) -> List[SweepRow]:
    """Evaluate ``estimator`` for each named prior at ``mu = center + t * direction``.

    ``entries`` maps a display name to a prior (or, for ``kl_risk``, a
    predictive kind).  Rows come back sorted by entry order then ``t``.
    """
    if estimator not in _ESTIMATORS:
        raise ParameterError(f"unknown estimator {estimator!r}; choose from {_ESTIMATORS}")
    norms = [float(t) for t in norms]
    if not norms:
        raise ParameterError("mu grid is empty")
    p = model.p
    e = np.zeros(p)
    e[0] = 1.0
    direction = e if direction is None else np.asarray(direction, dtype=float)
    if direction.shape != (p,) or not np.linalg.norm(direction) > 0:
        raise ParameterError("direction must be a nonzero vector of length p")
    direction = direction / np.linalg.norm(direction)
    base = as_center(center, p)

    jobs = []
    for name, obj in entries.items():
        tag = f"{estimator}:{name}"
        for idx, t in enumerate(norms):
            jobs.append((name, obj, tag, idx, t))

    def run(job):
        name, obj, tag, idx, t = job
        s = substream_seed(seed, idx, tag)
        mu = base + t * direction
        if estimator == "risk_difference":
            est = risk_difference(obj, model, mu, n, s)
        else:
            est = kl_risk(obj, model, mu, n, s)
        return SweepRow(t, tag, est.mean, est.std_error, est.n, est.seed)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, jobs))
    return [run(job) for job in jobs]


def write_risk_csv(rows: Iterable[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["mu_norm", "estimator", "mean", "std_error", "n", "seed"])
        for r in rows:
            writer.writerow([repr(r.mu_norm), r.estimator, repr(r.mean), repr(r.std_error), r.n, r.seed])
