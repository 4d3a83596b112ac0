"""Pluggable elementwise losses, derivative tensors, and fit metrics.

A loss is a scalar function phi(t, m) of an observed value t and the model
value m at the same entry, with vectorized first and second derivatives in m.
The built-in losses are registered by name; additional losses can be
registered with :func:`register_loss`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import SparseTensor
from .exceptions import DataError
from .kernels import tttp

# model values are clamped here before exponentiation to keep exp() finite
POISSON_EXP_CLAMP = 50.0


@dataclass
class LossFunction:
    """Elementwise loss with vectorized derivative evaluators.

    ``phi``, ``dphi``, ``d2phi`` map (t, m) arrays to arrays; ``validate_data``
    raises :class:`DataError` when observed values are outside the loss's
    domain. ``diagnostics`` collects counters such as clamp events.
    """

    ident: str
    phi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dphi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d2phi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    validate_data: Callable[[np.ndarray], None] = lambda values: None
    diagnostics: dict = field(default_factory=dict)


def least_squares() -> LossFunction:
    """Squared-error loss: phi = (t - m)^2, dphi = 2(m - t), d2phi = 2."""
    return LossFunction(
        ident="ls",
        phi=lambda t, m: (t - m) ** 2,
        dphi=lambda t, m: 2.0 * (m - t),
        d2phi=lambda t, m: np.full_like(np.asarray(m, dtype=np.float64), 2.0),
    )


def poisson_log_link() -> LossFunction:
    """Poisson loss under a log link: phi = exp(m) - t * m.

    Valid for nonnegative observed counts; the model value is unconstrained
    (the link removes the positivity constraint). Exponentials are evaluated
    with m clamped at +50 to stay finite; clamp events are counted in
    ``diagnostics['exp_clamped']``.
    """
    diagnostics = {"exp_clamped": 0}

    def _exp(m):
        m = np.asarray(m, dtype=np.float64)
        clipped = np.minimum(m, POISSON_EXP_CLAMP)
        n_clamped = int(np.count_nonzero(m > POISSON_EXP_CLAMP))
        if n_clamped:
            diagnostics["exp_clamped"] += n_clamped
        return np.exp(clipped)

    def validate_data(values):
        if np.any(np.asarray(values) < 0.0):
            raise DataError("poisson loss requires nonnegative observed values")

    return LossFunction(
        ident="poisson",
        phi=lambda t, m: _exp(m) - t * m,
        dphi=lambda t, m: _exp(m) - t,
        d2phi=lambda t, m: _exp(m),
        validate_data=validate_data,
        diagnostics=diagnostics,
    )


_REGISTRY: dict[str, Callable[[], LossFunction]] = {
    "ls": least_squares,
    "poisson": poisson_log_link,
}


def register_loss(ident: str, factory: Callable[[], LossFunction]) -> None:
    """Register a loss factory under ``ident`` for config/CLI lookup."""
    _REGISTRY[ident] = factory


def get_loss(ident: str) -> LossFunction:
    try:
        return _REGISTRY[ident]()
    except KeyError:
        raise DataError(
            f"unknown loss {ident!r}; registered: {sorted(_REGISTRY)}"
        ) from None


def registered_losses() -> list[str]:
    return sorted(_REGISTRY)


def model_at_observed(mask: SparseTensor, factors,
                      threads: int = 1) -> SparseTensor:
    """Model values at the observed pattern: multilinear products of rows.

    ``mask`` must carry unit values (an observation mask); the output shares
    its pattern and holds the factor-row inner products.
    """
    return tttp(mask, factors, threads=threads)


def derivative_tensors(loss: LossFunction, t: SparseTensor,
                       m: SparseTensor):
    """First and second loss-derivative tensors on the shared pattern of t, m."""
    if t.nnz != m.nnz or not np.array_equal(t.keys, m.keys):
        raise ValueError("observed and model tensors must share a key set")
    return (t.with_values(loss.dphi(t.values, m.values)),
            t.with_values(loss.d2phi(t.values, m.values)))


def objective(loss: LossFunction, t: SparseTensor, factors,
              reg: float = 0.0, model: SparseTensor | None = None,
              threads: int = 1) -> float:
    """Regularized objective: sum of phi over observed entries plus
    reg * sum of squared factor Frobenius norms."""
    loss.validate_data(t.values)
    if model is None:
        model = model_at_observed(t.observation_mask(), factors,
                                  threads=threads)
    total = float(np.sum(loss.phi(t.values, model.values)))
    if reg:
        total += reg * sum(float(np.sum(f * f)) for f in factors)
    return total


def rmse(t: SparseTensor, factors, model: SparseTensor | None = None,
         threads: int = 1) -> float:
    """Root-mean-square error over the observed entries."""
    if t.nnz == 0:
        raise ValueError("rmse undefined for an empty observation set")
    if model is None:
        model = model_at_observed(t.observation_mask(), factors,
                                  threads=threads)
    diff = t.values - model.values
    return float(np.sqrt(np.dot(diff, diff) / t.nnz))


def fast_ls_loss(t_norm_sq: float, u_new: np.ndarray, g_blocks: np.ndarray,
                 p_rhs: np.ndarray) -> float:
    """Least-squares data term from the last alternating subiteration.

    Reuses that subiteration's per-row normal-equation matrices ``g_blocks``
    and right-hand sides ``p_rhs`` for the factor just updated to ``u_new``:

        sum (t - m)^2 = sum t^2 + sum_i u_i^T G_i u_i - 2 sum_i u_i^T p_i

    Cost O(I * R^2), no pass over the nonzeros.
    """
    u_new = np.asarray(u_new, dtype=np.float64)
    if g_blocks.shape != (u_new.shape[0], u_new.shape[1], u_new.shape[1]):
        raise ValueError("g_blocks shape does not match the updated factor")
    if p_rhs.shape != u_new.shape:
        raise ValueError("p_rhs shape does not match the updated factor")
    quad = float(np.einsum("ir,irs,is->", u_new, g_blocks, u_new))
    cross = float(np.sum(u_new * p_rhs))
    return float(t_norm_sq) + quad - 2.0 * cross
