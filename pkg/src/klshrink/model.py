"""Sampling model and prior taxonomy.

The observation model is ``X | mu ~ N_p(mu, v_x I)`` and
``Y | mu ~ N_p(mu, v_y I)``, independent given ``mu``.  Priors on ``mu`` are
immutable dataclasses; they are plain data and carry no numerics beyond the
one-dimensional mixing densities of scale-mixture priors.  All marginal
computations live in :mod:`klshrink.marginals`.

Vectors (centers, offsets, subspace bases) are stored as tuples of floats so
that priors are hashable and compare by value.  ``None`` as a center means
the origin in whatever dimension the prior is used in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DomainError, ParameterError

__all__ = [
    "GaussianModel",
    "make_model",
    "Strawderman",
    "InverseGammaLike",
    "Custom",
    "Rescaled",
    "MixingDensity",
    "Uniform",
    "Gaussian",
    "Harmonic",
    "ScaleMixture",
    "Subspace",
    "Mixture",
    "Prior",
    "multivariate_t",
    "validate_prior",
    "as_center",
]

WEIGHT_TOL = 1e-12
ORTHO_TOL = 1e-10

Vector = Tuple[float, ...]


def _as_tuple(v) -> Optional[Vector]:
    if v is None:
        return None
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise ParameterError(f"expected a 1-d vector, got shape {arr.shape}")
    return tuple(float(t) for t in arr)


def as_center(center: Optional[Vector], p: int) -> np.ndarray:
    """Return ``center`` as a length-``p`` array (zeros when ``None``)."""
    if center is None:
        return np.zeros(p)
    return np.asarray(center, dtype=float)


# ---------------------------------------------------------------------------
# Sampling model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianModel:
    """Dimension and the two known variances of the prediction problem."""

    p: int
    v_x: float
    v_y: float

    def __post_init__(self):
        if isinstance(self.p, bool) or not isinstance(self.p, (int, np.integer)):
            raise ParameterError(f"p must be an integer, got {self.p!r}")
        if self.p < 1:
            raise ParameterError(f"p must be >= 1, got {self.p}")
        for name in ("v_x", "v_y"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ParameterError(f"{name} must be a positive finite real, got {val!r}")
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "v_x", float(self.v_x))
        object.__setattr__(self, "v_y", float(self.v_y))

    @property
    def v_w(self) -> float:
        """Variance of the weighted mean ``W = (v_y X + v_x Y)/(v_x + v_y)``."""
        return self.v_x * self.v_y / (self.v_x + self.v_y)


def make_model(p: int, v_x: float, v_y: float) -> GaussianModel:
    return GaussianModel(p, v_x, v_y)


# ---------------------------------------------------------------------------
# Mixing densities for scale-mixture priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Strawderman:
    """``h(s) = (1 + s)^(a - 2)``; ``a = 2`` reproduces the harmonic prior."""

    a: float

    def log_h(self, s):
        return (self.a - 2.0) * np.log1p(s)

    def dlog_h(self, s):
        return (self.a - 2.0) / (1.0 + np.asarray(s, dtype=float))

    def tail_exponent(self) -> float:
        return self.a - 2.0


@dataclass(frozen=True)
class InverseGammaLike:
    """``h(s) = s^(-alpha - 1) exp(-beta / s)`` (unnormalized).

    Mixing ``N_p(0, s v0 I)`` over this ``h`` gives a prior proportional to
    ``(|mu|^2 + 2 v0 beta)^-(alpha + p/2)``, i.e. the multivariate-t family
    ``(|mu|^2 + 2/a2)^-(a1 + p/2)`` with ``a1 = alpha`` and
    ``a2 = 1 / (v0 beta)``.  The integral converges when ``alpha > -p/2``.
    """

    alpha: float
    beta: float

    def log_h(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -(self.alpha + 1.0) * np.log(s) - self.beta / s
        return np.where(s > 0, out, -np.inf)

    def dlog_h(self, s):
        s = np.asarray(s, dtype=float)
        return -(self.alpha + 1.0) / s + self.beta / s**2

    def tail_exponent(self) -> float:
        return -(self.alpha + 1.0)


def _richardson_dlog(log_h, s):
    s = np.asarray(s, dtype=float)
    step = np.cbrt(np.finfo(float).eps) * np.maximum(1.0, np.abs(s))
    # one-sided near the origin so log_h is never evaluated at s < 0
    near = s < step

    def central(hh):
        return (log_h(s + hh) - log_h(s - hh)) / (2.0 * hh)

    def forward(hh):
        return (-3.0 * log_h(s) + 4.0 * log_h(s + hh) - log_h(s + 2.0 * hh)) / (2.0 * hh)

    with np.errstate(invalid="ignore", divide="ignore"):
        c = (4.0 * central(np.where(near, 1.0, step) / 2.0) - central(np.where(near, 1.0, step))) / 3.0
        f = (4.0 * forward(step / 2.0) - forward(step)) / 3.0
    return np.where(near, f, c)


@dataclass(frozen=True)
class Custom:
    """User-supplied mixing density given by its logarithm.

    ``log_h`` must accept a numpy array of ``s >= 0`` and return ``log h(s)``
    (``-inf`` where ``h`` vanishes).  ``dlog`` is optional; when omitted the
    log-derivative falls back to central differences.
    """

    log_h_fn: Callable[[np.ndarray], np.ndarray] = field(compare=True)
    dlog_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "custom"

    def log_h(self, s):
        return np.asarray(self.log_h_fn(np.asarray(s, dtype=float)), dtype=float)

    def dlog_h(self, s):
        if self.dlog_fn is not None:
            return np.asarray(self.dlog_fn(np.asarray(s, dtype=float)), dtype=float)
        return _richardson_dlog(self.log_h, s)

    def tail_exponent(self) -> Optional[float]:
        return None


@dataclass(frozen=True)
class Rescaled:
    """``h_r(s) = r h(r s)``, the mixing density seen at variance ``v = r v0``."""

    base: "MixingDensity"
    r: float

    def log_h(self, s):
        return math.log(self.r) + self.base.log_h(self.r * np.asarray(s, dtype=float))

    def dlog_h(self, s):
        return self.r * self.base.dlog_h(self.r * np.asarray(s, dtype=float))

    def tail_exponent(self):
        return self.base.tail_exponent()


MixingDensity = Union[Strawderman, InverseGammaLike, Custom, Rescaled]


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    """Flat prior; yields the best invariant predictive density."""


@dataclass(frozen=True)
class Gaussian:
    sigma2: float
    center: Optional[Vector] = None

    def __post_init__(self):
        object.__setattr__(self, "center", _as_tuple(self.center))


@dataclass(frozen=True)
class Harmonic:
    """``pi(mu) = |mu - center|^-(p - 2)``, defined for ``p >= 3``."""

    center: Optional[Vector] = None

    def __post_init__(self):
        object.__setattr__(self, "center", _as_tuple(self.center))


@dataclass(frozen=True)
class ScaleMixture:
    """``mu | s ~ N_p(center, s v0 I)`` with ``s`` weighted by ``h(s)``."""

    h: MixingDensity
    v0: float = 1.0
    center: Optional[Vector] = None

    def __post_init__(self):
        object.__setattr__(self, "center", _as_tuple(self.center))


@dataclass(frozen=True)
class Subspace:
    """Flat along ``span(basis)``, ``base`` on the orthogonal complement.

    ``basis`` holds ``k`` orthonormal rows of length ``p``; ``base`` is a
    prior in dimension ``p - k`` acting on complement coordinates of
    ``mu - offset``.
    """

    base: "Prior"
    basis: Tuple[Vector, ...]
    offset: Optional[Vector] = None

    def __post_init__(self):
        rows = tuple(_as_tuple(r) for r in self.basis)
        object.__setattr__(self, "basis", rows)
        object.__setattr__(self, "offset", _as_tuple(self.offset))

    def basis_array(self, p: int) -> np.ndarray:
        if not self.basis:
            return np.zeros((0, p))
        return np.asarray(self.basis, dtype=float)


@dataclass(frozen=True)
class Mixture:
    components: Tuple["Prior", ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))


Prior = Union[Uniform, Gaussian, Harmonic, ScaleMixture, Subspace, Mixture]


def multivariate_t(a1: float, a2: float, v0: float = 1.0, center=None) -> ScaleMixture:
    """Scale-mixture form of ``pi(mu) = (|mu|^2 + 2/a2)^-(a1 + p/2)``."""
    if a2 <= 0:
        raise ParameterError(f"a2 must be positive, got {a2}")
    return ScaleMixture(InverseGammaLike(alpha=a1, beta=1.0 / (a2 * v0)), v0=v0, center=center)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _check_center(center, p, what="center"):
    if center is not None and len(center) != p:
        raise ParameterError(f"{what} has length {len(center)}, expected {p}")


_SPOT_GRID = np.concatenate([[0.0], np.logspace(-6, 8, 57)])


def _validate_mixing(h, p: int):
    if isinstance(h, Strawderman):
        if not np.isfinite(h.a):
            raise ParameterError("Strawderman a must be finite")
        if h.a >= p / 2.0 + 1.0:
            raise DomainError(
                f"Strawderman a={h.a} gives an infinite marginal in p={p} (need a < p/2 + 1)"
            )
    elif isinstance(h, InverseGammaLike):
        if not h.beta > 0:
            raise ParameterError(f"InverseGammaLike beta must be positive, got {h.beta}")
        if h.alpha <= -p / 2.0:
            raise DomainError(
                f"InverseGammaLike alpha={h.alpha} gives an infinite marginal in p={p}"
            )
    elif isinstance(h, Rescaled):
        if not h.r > 0:
            raise ParameterError(f"rescaling factor must be positive, got {h.r}")
        _validate_mixing(h.base, p)
    elif not isinstance(h, Custom):
        raise ParameterError(f"unknown mixing density {h!r}")
    with np.errstate(all="ignore"):
        vals = np.asarray(h.log_h(_SPOT_GRID), dtype=float)
    if np.any(np.isnan(vals)) or np.any(vals == np.inf):
        raise ParameterError("mixing density must be nonnegative and finite on [0, inf)")


def _strip_centers(prior):
    if isinstance(prior, (Gaussian, Harmonic, ScaleMixture)):
        return replace(prior, center=None)
    if isinstance(prior, Subspace):
        return replace(prior, offset=None, base=_strip_centers(prior.base))
    if isinstance(prior, Mixture):
        return replace(prior, components=tuple(_strip_centers(c) for c in prior.components))
    return prior


def _is_proper_normalized(prior) -> bool:
    return isinstance(prior, Gaussian)


def _normalize_weights(weights: Sequence[float]) -> Tuple[float, ...]:
    w = [float(x) for x in weights]
    if math.fsum(w) == 1.0:
        return tuple(w)
    total = math.fsum(w)
    w = [x / total for x in w]
    imax = max(range(len(w)), key=lambda i: w[i])
    w[imax] += 1.0 - math.fsum(w)
    return tuple(w)


def validate_prior(prior, p: int):
    """Check ``prior`` for use in dimension ``p`` and return it.

    The returned value is equal to the input except that mixture weights are
    renormalized to sum exactly to one.  Validation is idempotent.

    Raises
    ------
    DomainError
        Harmonic prior with ``p < 3`` (also on a subspace complement), or a
        scale mixture whose marginal is infinite.
    ParameterError
        Bad variances, centers of the wrong length, negative or unnormalized
        mixture weights, a non-orthonormal subspace basis, or incompatible
        mixture components.
    """
    if isinstance(prior, Uniform):
        return prior
    if isinstance(prior, Gaussian):
        if not (np.isfinite(prior.sigma2) and prior.sigma2 > 0):
            raise ParameterError(f"Gaussian sigma2 must be positive, got {prior.sigma2}")
        _check_center(prior.center, p)
        return prior
    if isinstance(prior, Harmonic):
        if p < 3:
            raise DomainError(f"harmonic prior requires p >= 3, got p={p}")
        _check_center(prior.center, p)
        return prior
    if isinstance(prior, ScaleMixture):
        if not (np.isfinite(prior.v0) and prior.v0 > 0):
            raise ParameterError(f"v0 must be positive, got {prior.v0}")
        _validate_mixing(prior.h, p)
        _check_center(prior.center, p)
        return prior
    if isinstance(prior, Subspace):
        basis = prior.basis_array(p)
        k = basis.shape[0]
        if k and basis.shape[1] != p:
            raise ParameterError(f"subspace basis vectors have length {basis.shape[1]}, expected {p}")
        if k > p:
            raise ParameterError(f"subspace of dimension {k} does not fit in p={p}")
        if k and not np.allclose(basis @ basis.T, np.eye(k), rtol=0.0, atol=ORTHO_TOL):
            raise ParameterError("subspace basis is not orthonormal")
        _check_center(prior.offset, p, "offset")
        if p - k < 1:
            raise DomainError("subspace leaves no complement to shrink")
        base = validate_prior(prior.base, p - k)
        return prior if base == prior.base else replace(prior, base=base)
    if isinstance(prior, Mixture):
        if not prior.components:
            raise ParameterError("mixture needs at least one component")
        if len(prior.weights) != len(prior.components):
            raise ParameterError("mixture weights and components differ in length")
        if any(not np.isfinite(w) or w < 0 for w in prior.weights):
            raise ParameterError("mixture weights must be nonnegative")
        if abs(math.fsum(prior.weights) - 1.0) > WEIGHT_TOL:
            raise ParameterError(f"mixture weights sum to {math.fsum(prior.weights)!r}, not 1")
        comps = tuple(validate_prior(c, p) for c in prior.components)
        stripped = {_strip_centers(c) for c in comps}
        if len(stripped) > 1 and not all(_is_proper_normalized(c) for c in comps):
            raise ParameterError(
                "mixture components must all be normalized proper priors or "
                "translates of a single base prior"
            )
        weights = _normalize_weights(prior.weights)
        if comps == prior.components and weights == prior.weights:
            return prior
        return Mixture(comps, weights)
    raise ParameterError(f"unknown prior {prior!r}")
