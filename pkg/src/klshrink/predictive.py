"""Predictive densities for ``Y`` given ``X = x``.

Bayes predictive densities are evaluated only through the marginal-ratio form

    log p_pi(y | x) = log m(w; v_w) - log m(x; v_x) + log p_U(y | x),
    w = (v_y x + v_x y) / (v_x + v_y),

so any additive constant in an improper prior's log-marginal cancels.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ParameterError
from .marginals import log_marginal_batch
from .model import GaussianModel, Uniform, validate_prior

__all__ = [
    "PredictiveDensity",
    "MomentEstimate",
    "SliceTable",
    "weighted_mean",
    "log_density_u",
    "log_density_plugin",
    "log_density_bayes",
    "predictive_mean",
    "density_slice",
    "grid_axis",
    "write_slice_csv",
    "ESS_WARNING_FRACTION",
]

ESS_WARNING_FRACTION = 0.1
_LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PredictiveDensity:
    """A predictive density: ``kind`` is ``"uniform"``, ``"plugin"`` or ``"bayes"``."""

    model: GaussianModel
    kind: str = "uniform"
    prior: Optional[object] = None

    def __post_init__(self):
        if self.kind not in ("uniform", "plugin", "bayes"):
            raise ParameterError(f"unknown predictive kind {self.kind!r}")
        if self.kind == "bayes":
            if self.prior is None:
                raise ParameterError("a Bayes predictive density needs a prior")
            object.__setattr__(self, "prior", validate_prior(self.prior, self.model.p))

    @classmethod
    def bayes(cls, prior, model: GaussianModel) -> "PredictiveDensity":
        return cls(model, "bayes", prior)

    def log_density(self, x, y):
        if self.kind == "uniform":
            return log_density_u(self.model, x, y)
        if self.kind == "plugin":
            return log_density_plugin(self.model, x, y)
        return log_density_bayes(self.prior, self.model, x, y)

    @property
    def label(self) -> str:
        if self.kind != "bayes":
            return self.kind
        return type(self.prior).__name__.lower()


def _normal_logpdf(model, x, y, var):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sq = np.sum((y - x) ** 2, axis=-1)
    out = -0.5 * model.p * (_LOG2PI + math.log(var)) - sq / (2.0 * var)
    return float(out) if np.ndim(out) == 0 else out


def log_density_u(model: GaussianModel, x, y):
    """Best invariant predictive density ``N_p(x, (v_x + v_y) I)`` at ``y``.

    ``y`` may be a single vector or an array of rows.
    """
    return _normal_logpdf(model, x, y, model.v_x + model.v_y)


def log_density_plugin(model: GaussianModel, x, y):
    """Plug-in density ``N_p(x, v_y I)`` at ``y``."""
    return _normal_logpdf(model, x, y, model.v_y)


def weighted_mean(model: GaussianModel, x, y):
    return (model.v_y * np.asarray(x, dtype=float) + model.v_x * np.asarray(y, dtype=float)) / (
        model.v_x + model.v_y
    )


def log_density_bayes(prior, model: GaussianModel, x, y):
    """Bayes predictive log-density under ``prior`` by the marginal-ratio form."""
    prior = validate_prior(prior, model.p)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if isinstance(prior, Uniform):
        return log_density_u(model, x, y)
    Y = np.atleast_2d(y)
    W = weighted_mean(model, x, Y)
    log_ratio = log_marginal_batch(prior, W, model.v_w) - log_marginal_batch(prior, x, model.v_x)[0]
    out = log_ratio + log_density_u(model, x, Y)
    return float(out[0]) if y.ndim == 1 else out


@dataclass(frozen=True)
class MomentEstimate:
    """Importance-sampling estimate of the predictive mean.

    ``mass`` is the unnormalized estimate of ``int p_pi(y | x) dy`` (should
    be 1) with standard error ``mass_se``; ``ess`` is the Kish effective
    sample size of the self-normalized weights.
    """

    mean: np.ndarray
    std_error: np.ndarray
    mass: float
    mass_se: float
    ess: float
    n: int
    seed: int
    degenerate: bool


def _importance_weights(prior, model, x, n, seed):
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    y = x + math.sqrt(model.v_x + model.v_y) * rng.standard_normal((n, model.p))
    W = weighted_mean(model, x, y)
    logw = log_marginal_batch(prior, W, model.v_w) - log_marginal_batch(prior, x, model.v_x)[0]
    return y, np.exp(logw)


def predictive_mean(prior, model: GaussianModel, x, n: int = 100_000, seed: int = 0) -> MomentEstimate:
    """Mean of the Bayes predictive density by importance sampling from ``p_U``.

    Emits a :class:`RuntimeWarning` and sets ``degenerate`` when the effective
    sample size drops below 10% of ``n``.
    """
    prior = validate_prior(prior, model.p)
    if n < 2:
        raise ParameterError("need at least two samples")
    y, w = _importance_weights(prior, model, x, n, seed)
    mass = float(np.mean(w))
    mass_se = float(np.std(w, ddof=1) / math.sqrt(n))
    wn = w / w.sum()
    mean = wn @ y
    # delta-method standard error of a self-normalized (ratio) estimator
    resid = (y - mean) * w[:, None]
    se = np.sqrt(np.sum(resid**2, axis=0)) / w.sum()
    ess = float(1.0 / np.sum(wn**2))
    degenerate = ess < ESS_WARNING_FRACTION * n
    if degenerate:
        warnings.warn(f"importance weights degenerate: ESS {ess:.0f} of {n}", RuntimeWarning, stacklevel=2)
    return MomentEstimate(mean, se, mass, mass_se, ess, n, seed, degenerate)


# ---------------------------------------------------------------------------
# Slices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SliceTable:
    """Density values on a two-axis grid; ``density`` has shape ``(len(y1), len(y2))``."""

    y1: np.ndarray
    y2: np.ndarray
    density: np.ndarray
    axes: Tuple[int, int]

    def rows(self):
        for i, a in enumerate(self.y1):
            for j, b in enumerate(self.y2):
                yield float(a), float(b), float(self.density[i, j])

    def argmax(self) -> Tuple[float, float]:
        i, j = np.unravel_index(np.argmax(self.density), self.density.shape)
        return float(self.y1[i]), float(self.y2[j])


def grid_axis(start: float, stop: float, step: float) -> np.ndarray:
    """Inclusive grid ``start, start + step, ..., stop`` built from integer multiples."""
    if step <= 0 or stop < start:
        raise ParameterError("grid needs step > 0 and stop >= start")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def density_slice(
    density: PredictiveDensity,
    x,
    axes: Tuple[int, int] = (0, 1),
    y1: Sequence[float] = (),
    y2: Sequence[float] = (),
    anchor=None,
    threads: int = 1,
) -> SliceTable:
    """Evaluate ``density(. | x)`` over ``y1 x y2`` in the coordinates ``axes``.

    Coordinates of ``y`` off the two axes are held at ``anchor`` (zero by
    default).  Rows of the first axis are evaluated in parallel when
    ``threads > 1``; output ordering does not depend on ``threads``.
    """
    p = density.model.p
    x = np.asarray(x, dtype=float)
    if x.shape != (p,):
        raise ParameterError(f"x must have length {p}")
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if y1.size == 0 or y2.size == 0:
        raise ParameterError("slice grid is empty")
    i, j = axes
    if i == j or not (0 <= i < p and 0 <= j < p):
        raise ParameterError(f"invalid slice axes {axes}")
    base = np.zeros(p) if anchor is None else np.asarray(anchor, dtype=float)

    def row(a):
        Y = np.tile(base, (y2.size, 1))
        Y[:, i] = a
        Y[:, j] = y2
        return np.exp(density.log_density(x, Y))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(row, y1))
    else:
        rows = [row(a) for a in y1]
    return SliceTable(y1, y2, np.vstack(rows), (i, j))


def write_slice_csv(table: SliceTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["y1", "y2", "density"])
        for a, b, d in table.rows():
            writer.writerow([repr(a), repr(b), repr(d)])
