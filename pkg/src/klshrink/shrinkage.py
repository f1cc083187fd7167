"""Prior constructors: recentering, shrinkage toward a subspace, multiple shrinkage."""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from .errors import DomainError, ParameterError
from .marginals import log_marginal_batch
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

__all__ = ["recenter", "toward_subspace", "multiple_shrinkage", "component_weights"]


def _shift(center, b):
    return tuple((as_center(center, b.size) + b).tolist())


def recenter(prior, b):
    """Return the prior whose density at ``mu`` is ``prior``'s density at ``mu - b``."""
    b = np.asarray(b, dtype=float).ravel()
    prior = validate_prior(prior, b.size)
    if isinstance(prior, Uniform):
        return prior
    if isinstance(prior, (Gaussian, Harmonic, ScaleMixture)):
        return replace(prior, center=_shift(prior.center, b))
    if isinstance(prior, Subspace):
        return replace(prior, offset=_shift(prior.offset, b))
    if isinstance(prior, Mixture):
        return Mixture(tuple(recenter(c, b) for c in prior.components), prior.weights)
    raise ParameterError(f"cannot recenter {prior!r}")


def toward_subspace(base, basis, offset=None, p: int | None = None):
    """Flat along ``span(basis)`` (through ``offset``) and ``base`` on its complement.

    ``basis`` is a ``k x p`` array of orthonormal rows and ``base`` a prior in
    dimension ``p - k``.  With ``k = 0`` the result is ``base`` itself,
    recentered at ``offset`` if one is given; ``p`` is only needed when
    ``basis`` is an empty list.
    """
    B = np.asarray(basis, dtype=float)
    if B.ndim == 1:
        B = B.reshape(1, -1) if B.size else B.reshape(0, p or 0)
    if B.shape[0] == 0:
        if offset is None:
            return base
        return recenter(base, offset)
    if not isinstance(base, (Harmonic, ScaleMixture)):
        raise ParameterError("subspace shrinkage needs a Harmonic or ScaleMixture base")
    k, dim = B.shape
    if isinstance(base, Harmonic) and dim - k < 3:
        raise DomainError(f"harmonic shrinkage needs a complement of dimension >= 3, got {dim - k}")
    prior = Subspace(base, tuple(map(tuple, B.tolist())), offset)
    return validate_prior(prior, dim)


def multiple_shrinkage(centers: Sequence, weights: Sequence[float], base):
    """Mixture of copies of ``base`` recentered at each of ``centers``.

    Weights are constants, independent of ``v``.
    """
    C = [np.asarray(c, dtype=float).ravel() for c in centers]
    if not C:
        raise ParameterError("need at least one center")
    if len(weights) != len(C):
        raise ParameterError("centers and weights differ in length")
    p = C[0].size
    mix = Mixture(tuple(recenter(base, c) for c in C), tuple(weights))
    return validate_prior(mix, p)


def component_weights(prior: Mixture, x, v: float) -> np.ndarray:
    """Posterior component probabilities ``w_i m_i(x; v) / sum_j w_j m_j(x; v)``."""
    x = np.asarray(x, dtype=float)
    prior = validate_prior(prior, x.size)
    if not isinstance(prior, Mixture):
        raise ParameterError("component weights are defined for mixtures")
    logs = np.array(
        [np.log(w) + log_marginal_batch(c, x.reshape(1, -1), v)[0] if w > 0 else -np.inf
         for c, w in zip(prior.components, prior.weights)]
    )
    logs -= logs.max()
    out = np.exp(logs)
    return out / out.sum()
