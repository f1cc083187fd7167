"""Marginal densities ``m(z; v) = int N_p(z; mu, v I) pi(mu) dmu`` and derivatives.

Everything is computed in log space.  For a radially symmetric prior the
log-marginal is a function ``G(rho)`` of ``rho = |z - center|^2`` and

    grad log m   = 2 G'(rho) (z - center)
    lap log m    = 2 p G'(rho) + 4 rho G''(rho)
    lap m / m    = lap log m + |grad log m|^2

Each family also has a direct route to ``lap m / m`` (the Laplacian of the
Gaussian kernel integrated against the prior), which is what
:func:`laplacian_ratio` returns; ``lap log m`` from ``G''`` is kept as an
independent route for identity checks.

Normalization
-------------
* Uniform: ``m = 1``.
* Gaussian: the exact normal convolution.
* Harmonic: the exact convolution of ``|mu|^-(p-2)``,
  ``m_H = rho^-(p-2)/2 * P(p/2 - 1, rho / 2v)`` with ``P`` the regularized
  lower incomplete gamma function.
* Scale mixture: ``int_0^inf N_p(z; center, (v + s v0) I) h(s) ds`` with
  ``h`` exactly as supplied (no normalization).  With ``h = 1`` this equals
  ``Gamma(p/2 - 1) / (2 v0 pi^(p/2))`` times the harmonic marginal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.linalg import null_space
from scipy.special import gammaincc, gammaln, logsumexp

from .errors import NumericalError, ParameterError
from .model import (
    Gaussian,
    Harmonic,
    Mixture,
    ScaleMixture,
    Subspace,
    Uniform,
    as_center,
    validate_prior,
)

__all__ = [
    "MarginalValue",
    "Evaluation",
    "RadialProfile",
    "evaluate",
    "log_marginal",
    "log_marginal_batch",
    "grad_log_marginal",
    "laplacian_ratio",
    "sqrt_laplacian_ratio",
    "log_laplacian",
    "posterior_mean",
    "radial_profile",
    "harmonic_scale_mixture_ratio",
    "QUAD_LOG_TOL",
]

QUAD_LOG_TOL = 1e-10
_CHUNK = 2048
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class MarginalValue:
    log_value: float
    abs_error_bound: float


@dataclass
class Evaluation:
    """Batch evaluation of a marginal at points ``z`` (rows) and variance ``v``.

    ``lap`` is ``lap m / m`` by the direct route, ``lap_log`` is ``lap log m``
    by the independent route.  ``err`` is the error bound on ``logm`` and
    ``lap_err`` the propagated bound on ``lap``.
    """

    logm: np.ndarray
    grad: Optional[np.ndarray] = None
    lap: Optional[np.ndarray] = None
    lap_log: Optional[np.ndarray] = None
    err: Optional[np.ndarray] = None
    lap_err: Optional[np.ndarray] = None


@dataclass(frozen=True)
class RadialProfile:
    """Log-marginal as a function of ``r = |z - center| / sqrt(v)``.

    ``g`` is the log-marginal, ``g1`` and ``g2`` its first and second
    derivatives in ``r``.  For ``r > 0``

        lap m / m = (g2 + g1^2 + (p - 1) g1 / r) / v
    """

    p: int
    v: float
    g: Callable[[np.ndarray], np.ndarray]
    g1: Callable[[np.ndarray], np.ndarray]
    g2: Callable[[np.ndarray], np.ndarray]

    def laplacian_ratio(self, r):
        r = np.asarray(r, dtype=float)
        g1 = self.g1(r)
        return (self.g2(r) + g1**2 + (self.p - 1) * g1 / r) / self.v


# ---------------------------------------------------------------------------
# Radial kernels.  Each returns (G, G1, G2, lap, err, lap_err) over rho where
# G1, G2 are derivatives with respect to rho.
# ---------------------------------------------------------------------------


def _gaussian_radial(sigma2, rho, v, p):
    c = v + sigma2
    G = -0.5 * p * math.log(2.0 * math.pi * c) - rho / (2.0 * c)
    G1 = np.full_like(rho, -0.5 / c)
    G2 = np.zeros_like(rho)
    lap = rho / c**2 - p / c
    zeros = np.zeros_like(rho)
    return G, G1, G2, lap, zeros, zeros


def _harmonic_series(x, nu):
    """``S(x) = sum_n x^n / (nu)_(n+1)`` and its first two derivatives.

    ``gamma(nu, x) = x^nu e^-x S(x)``; used for ``x <= nu + 1`` where the
    terms decrease geometrically.
    """
    nterms = 60 + int(6.0 * math.sqrt(nu + 1.0))
    c = 1.0 / nu
    S = np.full_like(x, c)
    S1 = np.zeros_like(x)
    S2 = np.zeros_like(x)
    pw_m2 = np.zeros_like(x)
    pw_m1 = np.ones_like(x)
    for n in range(1, nterms + 1):
        c /= nu + n
        pw = pw_m1 * x
        S += c * pw
        S1 += n * c * pw_m1
        S2 += n * (n - 1) * c * pw_m2
        pw_m2, pw_m1 = pw_m1, pw
    return S, S1, S2


def _harmonic_L(x, nu):
    """``L(x) = log(x^-nu gamma(nu, x))`` with ``L'``, ``L''`` and ``x^nu e^-x / gamma``."""
    L = np.empty_like(x)
    L1 = np.empty_like(x)
    L2 = np.empty_like(x)
    inv_s = np.empty_like(x)
    small = x <= nu + 1.0
    if np.any(small):
        xs = x[small]
        S, S1, S2 = _harmonic_series(xs, nu)
        L[small] = -xs + np.log(S)
        r1 = S1 / S
        L1[small] = -1.0 + r1
        L2[small] = S2 / S - r1**2
        inv_s[small] = 1.0 / S
    big = ~small
    if np.any(big):
        xb = x[big]
        log_gamma = gammaln(nu) + np.log1p(-gammaincc(nu, xb))
        logx = np.log(xb)
        L[big] = -nu * logx + log_gamma
        q = np.exp((nu - 1.0) * logx - xb - log_gamma)
        L1[big] = -nu / xb + q
        L2[big] = nu / xb**2 + q * ((nu - 1.0) / xb - 1.0 - q)
        inv_s[big] = xb * q
    return L, L1, L2, inv_s


def _harmonic_radial(rho, v, p):
    nu = 0.5 * (p - 2)
    x = rho / (2.0 * v)
    L, L1, L2, inv_s = _harmonic_L(x, nu)
    G = -nu * math.log(2.0 * v) - gammaln(nu) + L
    G1 = L1 / (2.0 * v)
    G2 = L2 / (4.0 * v * v)
    # heat-equation form: lap m / m = 2 d/dv log m = -2 x^nu e^-x / (v gamma(nu, x))
    lap = -2.0 * inv_s / v
    zeros = np.zeros_like(rho)
    return G, G1, G2, lap, zeros, 4.0 * _EPS * np.abs(lap)


def _u_grid(prior, rho_max, v, p, step):
    """Integer-anchored nodes ``u = j * step`` covering the mass of ``s = e^u``."""
    ratio = math.log(v / prior.v0)
    lo = min(0.0, ratio) - 40.0
    peak = max(0.0, ratio, math.log(max(rho_max / p, v) / prior.v0))
    tail = prior.h.tail_exponent()
    slope = None if tail is None else tail + 1.0 - 0.5 * p
    if slope is None or slope >= -0.05:
        extent = 80.0
    else:
        extent = min(40.0 / -slope, 600.0)
    hi = min(peak + extent + 5.0, 700.0)
    j0 = math.floor(lo / step)
    j1 = math.ceil(hi / step)
    j1 += (j1 - j0) % 2  # even node count so the coarse grid is every other node
    return np.arange(j0, j1 + 1) * step


def _scale_mixture_chunk(prior, rho, v, p, step, order):
    u = _u_grid(prior, float(rho.max(initial=0.0)), v, p, step)
    s = np.exp(u)
    c = v + prior.v0 * s
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        base = np.asarray(prior.h.log_h(s), dtype=float) + u - 0.5 * p * np.log(2.0 * math.pi * c)
    base = np.where(np.isnan(base), -np.inf, base)
    inv_c = 1.0 / c
    f = base[None, :] - rho[:, None] * (0.5 * inv_c)[None, :]
    fmax = f.max(axis=1)
    if not np.all(np.isfinite(fmax)):
        raise NumericalError("scale-mixture integrand vanished on the quadrature grid")
    w = np.exp(f - fmax[:, None])
    # trapezoid over the full line; the end nodes carry negligible mass
    S0 = w.sum(axis=1)
    S0c = w[:, ::2].sum(axis=1)
    # tail beyond the last node, bounded by a geometric continuation
    tail = w[:, -1] / max(1.0 - math.exp(-0.05 * step), 1e-300)
    logm = fmax + np.log(S0 * step)
    err = np.abs(np.log(S0c * 2.0 * step) - np.log(S0 * step)) + tail / S0
    if order == 0:
        return logm, None, None, None, err, None
    E1 = (w @ inv_c) / S0
    dev = inv_c[None, :] - E1[:, None]
    var1 = np.einsum("ij,ij->i", w, dev * dev) / S0
    E2 = (w @ (inv_c * inv_c)) / S0
    G1 = -0.5 * E1
    G2 = 0.25 * var1
    lap = rho * E2 - p * E1
    lap_err = (err + 8.0 * _EPS) * (rho * E2 + p * E1)
    return logm, G1, G2, lap, err, lap_err


def _scale_mixture_radial(prior, rho, v, p, order, tol=QUAD_LOG_TOL):
    n = rho.shape[0]
    out = [np.empty(n) for _ in range(6)] if order else [np.empty(n), None, None, None, np.empty(n), None]
    step0 = min(0.25, 0.4 * math.sqrt(2.0 / p))
    for start in range(0, n, _CHUNK):
        sl = slice(start, min(start + _CHUNK, n))
        step = step0
        for _ in range(4):
            res = _scale_mixture_chunk(prior, rho[sl], v, p, step, order)
            if np.max(res[4], initial=0.0) <= tol:
                break
            step *= 0.5
        for dst, src in zip(out, res):
            if dst is not None:
                dst[sl] = src
    return tuple(out)


# ---------------------------------------------------------------------------
# Batch evaluation
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _complement(basis, p):
    if not basis:
        return np.eye(p)
    return null_space(np.asarray(basis, dtype=float))


def _as_points(z):
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        return z[None, :], True
    if z.ndim != 2:
        raise ParameterError(f"points must be a vector or a 2-d array, got shape {z.shape}")
    return z, False


def _check_v(v):
    if not (np.isfinite(v) and v > 0):
        raise ParameterError(f"variance v must be positive, got {v!r}")


def _evaluate(prior, Z, v, order):
    n, p = Z.shape
    if isinstance(prior, Uniform):
        zeros = np.zeros(n)
        if order == 0:
            return Evaluation(zeros, err=zeros)
        return Evaluation(zeros, np.zeros((n, p)), zeros, zeros.copy(), zeros, zeros)

    if isinstance(prior, (Gaussian, Harmonic, ScaleMixture)):
        d = Z - as_center(prior.center, p)
        rho = np.einsum("ij,ij->i", d, d)
        if isinstance(prior, Gaussian):
            G, G1, G2, lap, err, lap_err = _gaussian_radial(prior.sigma2, rho, v, p)
        elif isinstance(prior, Harmonic):
            G, G1, G2, lap, err, lap_err = _harmonic_radial(rho, v, p)
        else:
            G, G1, G2, lap, err, lap_err = _scale_mixture_radial(prior, rho, v, p, order)
        if order == 0:
            return Evaluation(G, err=err)
        grad = 2.0 * G1[:, None] * d
        lap_log = 2.0 * p * G1 + 4.0 * rho * G2
        return Evaluation(G, grad, lap, lap_log, err, lap_err)

    if isinstance(prior, Subspace):
        Q = _complement(prior.basis, p)
        off = as_center(prior.offset, p)
        sub = _evaluate(prior.base, (Z - off) @ Q, v, order)
        if order == 0:
            return sub
        sub.grad = sub.grad @ Q.T
        return sub

    if isinstance(prior, Mixture):
        parts = [_evaluate(c, Z, v, order) for c in prior.components]
        with np.errstate(divide="ignore"):
            logw = np.log(np.asarray(prior.weights))
        terms = np.stack([lw + e.logm for lw, e in zip(logw, parts)])
        logm = logsumexp(terms, axis=0)
        err = np.max(np.stack([e.err for e in parts]), axis=0)
        if order == 0:
            return Evaluation(logm, err=err)
        post = np.exp(terms - logm[None, :])
        grad = np.sum(post[:, :, None] * np.stack([e.grad for e in parts]), axis=0)
        lap = np.sum(post * np.stack([e.lap for e in parts]), axis=0)
        spread = np.stack([np.sum((e.grad - grad) ** 2, axis=1) for e in parts])
        lap_log = np.sum(post * (np.stack([e.lap_log for e in parts]) + spread), axis=0)
        lap_err = np.sum(post * np.stack([e.lap_err for e in parts]), axis=0)
        return Evaluation(logm, grad, lap, lap_log, err, lap_err)

    raise ParameterError(f"unknown prior {prior!r}")


def evaluate(prior, z, v: float, *, order: int = 2) -> Evaluation:
    """Evaluate the marginal of ``prior`` at the rows of ``z``.

    ``order=0`` computes only the log-marginal and its error bound; any other
    value also fills gradient and Laplacian fields.
    """
    Z, _ = _as_points(z)
    _check_v(v)
    prior = validate_prior(prior, Z.shape[1])
    return _evaluate(prior, Z, float(v), order)


def log_marginal_batch(prior, z, v: float) -> np.ndarray:
    return evaluate(prior, z, v, order=0).logm


def log_marginal(prior, z, v: float, *, tol: float = QUAD_LOG_TOL) -> MarginalValue:
    """Log-marginal at a single point with its numerical error bound.

    Raises :class:`NumericalError` if the quadrature for a scale-mixture
    prior cannot reach ``tol`` on the log scale.
    """
    ev = evaluate(prior, np.asarray(z, dtype=float).reshape(-1), v, order=0)
    bound = float(ev.err[0])
    if bound > tol:
        raise NumericalError(f"marginal quadrature reached only {bound:.3g} (requested {tol:.3g})", bound)
    return MarginalValue(float(ev.logm[0]), bound)


def _single(z, fn):
    Z, single = _as_points(z)
    out = fn(Z)
    return out[0] if single else out


def grad_log_marginal(prior, z, v: float) -> np.ndarray:
    return _single(z, lambda Z: evaluate(prior, Z, v).grad)


def laplacian_ratio(prior, z, v: float):
    """``lap m(z; v) / m(z; v)``."""
    res = _single(z, lambda Z: evaluate(prior, Z, v).lap)
    return float(res) if np.ndim(res) == 0 else res


def log_laplacian(prior, z, v: float):
    """``lap log m(z; v)`` by the second-derivative route."""
    res = _single(z, lambda Z: evaluate(prior, Z, v).lap_log)
    return float(res) if np.ndim(res) == 0 else res


def sqrt_laplacian_ratio(prior, z, v: float):
    """``lap sqrt(m) / sqrt(m) = (lap m / m - |grad log m|^2 / 2) / 2``."""

    def fn(Z):
        ev = evaluate(prior, Z, v)
        return 0.5 * (ev.lap - 0.5 * np.sum(ev.grad**2, axis=1))

    res = _single(z, fn)
    return float(res) if np.ndim(res) == 0 else res


def posterior_mean(prior, x, v: float) -> np.ndarray:
    """Posterior mean of ``mu`` given ``x ~ N(mu, v I)``: ``x + v grad log m(x; v)``."""
    x = np.asarray(x, dtype=float)
    return x + v * grad_log_marginal(prior, x, v)


def radial_profile(prior, p: int, v: float) -> RadialProfile:
    """Radial log-marginal profile of a Uniform, Gaussian, Harmonic or ScaleMixture prior."""
    prior = validate_prior(prior, p)
    if not isinstance(prior, (Uniform, Gaussian, Harmonic, ScaleMixture)):
        raise ParameterError("radial profiles exist only for radially symmetric priors")
    e1 = np.zeros(p)
    e1[0] = 1.0
    center = as_center(getattr(prior, "center", None), p)

    def at(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        Z = center + np.sqrt(v) * r[:, None] * e1
        ev = _evaluate(prior, Z, float(v), 2)
        return r, ev

    def g(r):
        return at(r)[1].logm

    def g1(r):
        rr, ev = at(r)
        # d/dr log m = grad . e1 * sqrt(v)
        return ev.grad[:, 0] * np.sqrt(v)

    def g2(r):
        rr, ev = at(r)
        # lap log m = (g2 + (p - 1) g1 / r) / v  for a radial function
        g1v = ev.grad[:, 0] * np.sqrt(v)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = v * ev.lap_log - (p - 1) * g1v / rr
        # at r = 0 the radial second derivative equals lap log m * v / p
        return np.where(rr > 0, out, v * ev.lap_log / p)

    return RadialProfile(p=p, v=float(v), g=g, g1=g1, g2=g2)


def harmonic_scale_mixture_ratio(p: int, v0: float) -> float:
    """Constant ratio ``m_{a=2}(z; v) / m_H(z; v)`` between the two normalizations."""
    return math.exp(gammaln(0.5 * p - 1.0) - math.log(2.0 * v0) - 0.5 * p * math.log(math.pi))
