"""Fisher information over a pool: diagonal importance, top-k masks, and the
masked per-sample factors and pool matrix used by the batch selector."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from ._validation import check_sparsity, check_vector
from .exceptions import ContractError, ResourceError
from .model import ModelState, ParamLayout, grad_logp_batch

MAX_MASK_SIZE = 2048
SPARSITY_SWEEP = (0.01, 0.005, 0.002, 0.001)
DEFAULT_SPARSITY = 0.002

# rows per grad_logp_batch call; bounds the (rows, |theta|, n_classes) buffer
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True, eq=False)
class FisherDiagonal:
    values: np.ndarray
    pool_size: int
    layout: ParamLayout | None = None


@dataclass(frozen=True, eq=False)
class FisherMask:
    indices: np.ndarray
    sparsity: float
    layout: ParamLayout | None = None

    @property
    def k(self):
        return self.indices.shape[0]


class LayerShare(NamedTuple):
    layer: str
    selected: int
    total: int
    fraction: float


def _chunks(m: ModelState, pool):
    """Yield (X_chunk) in ascending sample-id order."""
    order = np.argsort(pool.ids, kind="stable")
    per_row = m.layout.total * m.spec.n_classes
    rows = max(1, _CHUNK_ELEMENTS // per_row)
    for start in range(0, order.size, rows):
        yield pool.features[order[start : start + rows]]


def _diag_from_scores(G, P):
    """sum_b sum_y P[b, y] * G[b, :, y]**2 for scores G of shape (B, |theta|, n)."""
    return np.einsum("bpy,by->p", G * G, P)


def fisher_diag_pool(m: ModelState, pool) -> FisherDiagonal:
    """Mean over the pool of E_{y ~ p(.|x)} (d log p(y|x) / d theta_j)^2.

    The expectation over labels is exact: a sum over all classes weighted by
    the model's own probabilities.
    """
    if len(pool) == 0:
        raise ContractError("pool must be non-empty")
    acc = np.zeros(m.layout.total)
    for X in _chunks(m, pool):
        G, P = grad_logp_batch(m, X)
        acc += _diag_from_scores(G, P)
    return FisherDiagonal(acc / len(pool), len(pool), m.layout)


def fisher_diag_monte_carlo(m: ModelState, pool, n_draws, seed) -> FisherDiagonal:
    """Sampled-label estimate of :func:`fisher_diag_pool`, for testing only."""
    rng = np.random.default_rng(seed)
    acc = np.zeros(m.layout.total)
    for X in _chunks(m, pool):
        G, P = grad_logp_batch(m, X)
        for b in range(X.shape[0]):
            ys = rng.choice(P.shape[1], size=n_draws, p=P[b])
            counts = np.bincount(ys, minlength=P.shape[1]) / n_draws
            acc += (G[b] ** 2) @ counts
    return FisherDiagonal(acc / len(pool), len(pool), m.layout)


def mask_size(sparsity, total):
    """k = ceil(sparsity * total), at least 1.

    The product is taken on the decimal value of ``sparsity`` so that e.g.
    0.01 * 300 gives exactly 3 rather than a float just above it.
    """
    return max(1, math.ceil(Fraction(repr(float(sparsity))) * total))


def build_mask(diag: FisherDiagonal, sparsity) -> FisherMask:
    """Indices of the k largest diagonal entries; ties go to the lower index."""
    sparsity = check_sparsity(sparsity)
    values = np.asarray(diag.values)
    k = mask_size(sparsity, values.size)
    order = np.argsort(-values, kind="stable")
    return FisherMask(np.sort(order[:k]), sparsity, diag.layout)


def segment_mask(layout: ParamLayout, names) -> FisherMask:
    """Mask covering whole named segments (e.g. the last layer)."""
    idx = np.sort(np.concatenate([layout.indices(name) for name in names]))
    return FisherMask(idx, idx.size / layout.total, layout)


def _check_mask(m: ModelState, mask: FisherMask):
    if mask.layout is not None and mask.layout != m.layout:
        raise ContractError("mask was built for a different parameter layout")
    if mask.indices.size and (mask.indices.min() < 0 or mask.indices.max() >= m.layout.total):
        raise ContractError("mask indices fall outside the parameter vector")


def grad_factors(m: ModelState, X, mask: FisherMask) -> np.ndarray:
    """Masked, probability-scaled scores for a batch: shape (B, k, n_classes).

    Column y of each (k, n) slice is sqrt(p(y|x)) times the masked gradient
    of log p(y|x), so V @ V.T is that sample's masked Fisher matrix.
    """
    _check_mask(m, mask)
    G, P = grad_logp_batch(m, X)
    return G[:, mask.indices, :] * np.sqrt(P)[:, None, :]


def grad_factor(m: ModelState, x, mask: FisherMask) -> np.ndarray:
    x = check_vector(x, m.spec.d)
    return grad_factors(m, x[None, :], mask)[0]


def pool_fisher_masked(m: ModelState, pool, mask: FisherMask, max_k=MAX_MASK_SIZE) -> np.ndarray:
    """Dense (k, k) pool Fisher over the masked parameters: mean of V V^T."""
    if len(pool) == 0:
        raise ContractError("pool must be non-empty")
    if mask.k > max_k:
        raise ResourceError(
            f"mask has {mask.k} parameters, dense Fisher storage is capped at {max_k}; lower the sparsity"
        )
    _check_mask(m, mask)
    F = np.zeros((mask.k, mask.k))
    for X in _chunks(m, pool):
        V = grad_factors(m, X, mask)
        flat = V.transpose(1, 0, 2).reshape(mask.k, -1)
        F += flat @ flat.T
    F /= len(pool)
    return 0.5 * (F + F.T)


def layer_profile(mask: FisherMask) -> list:
    """Per-layer count and fraction of parameters inside the mask."""
    if mask.layout is None:
        raise ContractError("mask carries no layout snapshot")
    owners = mask.layout.segment_of(mask.indices)
    counts = np.bincount(owners, minlength=len(mask.layout.segments))
    return [
        LayerShare(s.name, int(c), s.length, c / s.length)
        for s, c in zip(mask.layout.segments, counts)
    ]
