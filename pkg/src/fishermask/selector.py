"""Batch query strategies.

The Fisher-based strategies (``fishermask`` and ``bait``) greedily pick the
pool sample x minimising tr((M + V_x V_x^T)^{-1} F), where F is the masked
pool Fisher and M the regularised labeled-set Fisher. With the Woodbury
identity this equals tr(M^{-1} F) minus

    tr(V_x^T M^{-1} F M^{-1} V_x A^{-1}),   A = I_n + V_x^T M^{-1} V_x,

so each step maximises the second term and then folds the winner into M^{-1}
with a rank-n update. The two strategies differ only in the mask: top-k
parameters by pool Fisher diagonal over the whole network, or exactly the
last layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from ._validation import check_batch_size, check_positive_real
from .exceptions import ConfigError, ContractError, NumericError
from .fisher import (
    DEFAULT_SPARSITY,
    FisherMask,
    build_mask,
    fisher_diag_pool,
    grad_factors,
    pool_fisher_masked,
    segment_mask,
)
from .model import ModelState, penultimate_embedding, predict_proba

STRATEGIES = ("fishermask", "bait", "entropy", "margin", "kcenter", "random")
DEFAULT_LAMBDA = 1.0
JITTER = 1e-6
REFRESH_EVERY = 256


class Selection(NamedTuple):
    """Chosen sample ids in pick order with the score each had when picked."""

    ids: np.ndarray
    scores: np.ndarray
    mask: FisherMask | None = None


def _spd_inverse(M):
    try:
        c = scipy.linalg.cho_factor(M, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"matrix is not numerically positive definite: {exc}") from None
    inv = scipy.linalg.cho_solve(c, np.eye(M.shape[0]))
    return 0.5 * (inv + inv.T)


@dataclass(eq=False)
class SelectionState:
    """Labeled-set Fisher ``M``, its maintained inverse, and the pool Fisher."""

    M: np.ndarray
    M_inv: np.ndarray
    F_theta: np.ndarray
    mask: FisherMask | None = None
    lam: float = DEFAULT_LAMBDA
    jitter: float = JITTER
    chosen: list = field(default_factory=list)
    n_updates: int = 0

    @classmethod
    def from_matrices(cls, M, F_theta, mask=None, lam=DEFAULT_LAMBDA, jitter=0.0):
        """Build directly from a symmetric positive definite ``M``."""
        M = np.array(M, dtype=np.float64)
        F_theta = np.array(F_theta, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or F_theta.shape != M.shape:
            raise ContractError(f"M {M.shape} and F_theta {F_theta.shape} must be equal square matrices")
        if jitter:
            M = M + jitter * np.eye(M.shape[0])
        return cls(M, _spd_inverse(M), F_theta, mask, lam, jitter)

    @property
    def k(self):
        return self.M.shape[0]

    def objective(self):
        """Current trace objective tr(M^{-1} F)."""
        return float(np.einsum("ij,ji->", self.M_inv, self.F_theta))


def init_selection_state(
    m: ModelState, pool, labeled, mask: FisherMask, lam=DEFAULT_LAMBDA, jitter=JITTER, F_theta=None
) -> SelectionState:
    """M = lam * F + mean_{x in labeled} V_x V_x^T + jitter * I, inverted once."""
    lam = check_positive_real(lam, "lambda")
    if len(labeled) == 0:
        raise ContractError("the labeled set must hold at least one sample")
    if F_theta is None:
        F_theta = pool_fisher_masked(m, pool, mask)
    V = grad_factors(m, labeled.features, mask)
    flat = V.transpose(1, 0, 2).reshape(mask.k, -1)
    labeled_fisher = flat @ flat.T / len(labeled)
    M = lam * F_theta + 0.5 * (labeled_fisher + labeled_fisher.T) + jitter * np.eye(mask.k)
    return SelectionState(M, _spd_inverse(M), F_theta, mask, lam, jitter)


def _check_factor(st, V):
    V = np.asarray(V, dtype=np.float64)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[-2] != st.k:
        raise ContractError(f"gradient factor has {V.shape[-2]} rows, state has k={st.k}")
    return V


def candidate_scores(st: SelectionState, Vs) -> np.ndarray:
    """Vectorised :func:`score_candidate` over a stack of shape (T, k, n)."""
    Vs = _check_factor(st, Vs)
    if Vs.ndim == 2:
        Vs = Vs[None]
    n = Vs.shape[2]
    MV = np.einsum("ij,tjn->tin", st.M_inv, Vs)
    A = np.eye(n) + np.einsum("tin,tim->tnm", Vs, MV)
    FMV = np.einsum("ij,tjn->tin", st.F_theta, MV)
    W = np.einsum("tin,tim->tnm", MV, FMV)
    try:
        sol = np.linalg.solve(A, W)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"A = I + V^T M^-1 V is singular: {exc}") from None
    return np.trace(sol, axis1=1, axis2=2)


def score_candidate(st: SelectionState, V) -> float:
    """tr(V^T M^{-1} F M^{-1} V A^{-1}) with A = I + V^T M^{-1} V."""
    return float(candidate_scores(st, _check_factor(st, V))[0])


def woodbury_update(st: SelectionState, V) -> SelectionState:
    """Fold V V^T into M and update M^{-1} with the Woodbury identity.

    Every ``REFRESH_EVERY`` updates M^{-1} is recomputed from M to bound
    floating-point drift. Mutates and returns ``st``.
    """
    V = _check_factor(st, V)
    MV = st.M_inv @ V
    A = np.eye(V.shape[1]) + V.T @ MV
    try:
        correction = MV @ np.linalg.solve(A, MV.T)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"A = I + V^T M^-1 V is singular: {exc}") from None
    new_inv = st.M_inv - correction
    new_M = st.M + V @ V.T
    st.n_updates += 1
    if st.n_updates % REFRESH_EVERY == 0:
        new_inv = _spd_inverse(new_M)
    st.M, st.M_inv = new_M, 0.5 * (new_inv + new_inv.T)
    return st


def _pick(scores, ids, available, largest=True):
    """Best available position; exact ties go to the lowest sample id."""
    vals = np.where(available, scores, -np.inf if largest else np.inf)
    best = vals.max() if largest else vals.min()
    tied = np.flatnonzero((vals == best) & available)
    return tied[np.argmin(ids[tied])]


def greedy_select(st: SelectionState, Vs, ids, N) -> Selection:
    """N greedy picks over candidate factors ``Vs`` (T, k, n) labelled by ``ids``."""
    Vs = _check_factor(st, Vs)
    ids = np.asarray(ids, dtype=np.int64)
    if Vs.ndim != 3 or Vs.shape[0] != ids.shape[0]:
        raise ContractError("need one (k, n) factor per candidate id")
    N = check_batch_size(N, ids.size)
    available = np.ones(ids.size, dtype=bool)
    picked, picked_scores = [], []
    for _ in range(N):
        scores = candidate_scores(st, Vs)
        pos = _pick(scores, ids, available)
        available[pos] = False
        woodbury_update(st, Vs[pos])
        st.chosen.append(int(ids[pos]))
        picked.append(ids[pos])
        picked_scores.append(scores[pos])
    return Selection(np.array(picked, dtype=np.int64), np.array(picked_scores), st.mask)


def select_batch_fishermask(st: SelectionState, pool, m: ModelState, N) -> Selection:
    Vs = grad_factors(m, pool.features, st.mask) if len(pool) else np.zeros((0, st.k, m.spec.n_classes))
    return greedy_select(st, Vs, pool.ids, N)


def fishermask_query(m: ModelState, pool, labeled, N, sparsity=DEFAULT_SPARSITY, lam=DEFAULT_LAMBDA) -> Selection:
    """Full per-round pipeline: pool Fisher diagonal, top-k mask, greedy batch."""
    check_batch_size(N, len(pool))
    mask = build_mask(fisher_diag_pool(m, pool), sparsity)
    st = init_selection_state(m, pool, labeled, mask, lam)
    return select_batch_fishermask(st, pool, m, N)


def select_bait(m: ModelState, pool, labeled, N, lam=DEFAULT_LAMBDA) -> Selection:
    """Same greedy machinery restricted to the last layer's parameters."""
    check_batch_size(N, len(pool))
    mask = segment_mask(m.layout, m.spec.last_layer())
    st = init_selection_state(m, pool, labeled, mask, lam)
    return select_batch_fishermask(st, pool, m, N)


def entropy_bits(P) -> np.ndarray:
    """Shannon entropy in bits along the last axis, with 0 log 0 = 0."""
    P = np.asarray(P, dtype=np.float64)
    logs = np.log2(P, out=np.zeros_like(P), where=P > 0)
    return -np.sum(P * logs, axis=-1)


def margin(P) -> np.ndarray:
    """Gap between the two largest probabilities along the last axis."""
    top2 = np.sort(np.asarray(P, dtype=np.float64), axis=-1)[..., -2:]
    return np.abs(top2[..., 1] - top2[..., 0])


def _rank(scores, ids, N, descending):
    order = np.lexsort((ids, -scores if descending else scores))[:N]
    return Selection(ids[order], scores[order])


def select_entropy(m: ModelState, pool, N) -> Selection:
    N = check_batch_size(N, len(pool))
    if N == 0:
        return Selection(np.zeros(0, dtype=np.int64), np.zeros(0))
    return _rank(entropy_bits(predict_proba(m, pool.features)), pool.ids, N, descending=True)


def select_margin(m: ModelState, pool, N) -> Selection:
    N = check_batch_size(N, len(pool))
    if N == 0:
        return Selection(np.zeros(0, dtype=np.int64), np.zeros(0))
    return _rank(margin(predict_proba(m, pool.features)), pool.ids, N, descending=False)


def kcenter_greedy(pool_embedding, center_embedding, ids, N) -> Selection:
    """Farthest-first traversal: repeatedly take the point farthest from its
    nearest centre, then make it a centre. Scores are those distances."""
    E = np.asarray(pool_embedding, dtype=np.float64)
    if E.ndim == 1:
        E = E[:, None]
    ids = np.asarray(ids, dtype=np.int64)
    N = check_batch_size(N, E.shape[0])
    C = np.asarray(center_embedding, dtype=np.float64).reshape(-1, E.shape[1])
    nearest = cdist(E, C).min(axis=1) if C.shape[0] else np.full(E.shape[0], np.inf)
    available = np.ones(E.shape[0], dtype=bool)
    picked, dists = [], []
    for _ in range(N):
        pos = _pick(nearest, ids, available)
        picked.append(ids[pos])
        dists.append(nearest[pos])
        available[pos] = False
        nearest = np.minimum(nearest, cdist(E, E[pos : pos + 1])[:, 0])
    return Selection(np.array(picked, dtype=np.int64), np.array(dists))


def select_kcenter(m: ModelState, pool, labeled, N) -> Selection:
    if len(pool) == 0:
        check_batch_size(N, 0)
        return Selection(np.zeros(0, dtype=np.int64), np.zeros(0))
    centers = penultimate_embedding(m, labeled.features) if len(labeled) else np.zeros((0, 1))
    return kcenter_greedy(penultimate_embedding(m, pool.features), centers, pool.ids, N)


def select_random(pool, N, seed) -> Selection:
    N = check_batch_size(N, len(pool))
    rng = np.random.default_rng(seed)
    pos = rng.choice(len(pool), size=N, replace=False)
    return Selection(pool.ids[pos], np.full(N, np.nan))


def select(strategy, m: ModelState, pool, labeled, N, *, sparsity=DEFAULT_SPARSITY, lam=DEFAULT_LAMBDA, seed=0):
    """Dispatch on a strategy name from :data:`STRATEGIES`."""
    if strategy == "fishermask":
        return fishermask_query(m, pool, labeled, N, sparsity, lam)
    if strategy == "bait":
        return select_bait(m, pool, labeled, N, lam)
    if strategy == "entropy":
        return select_entropy(m, pool, N)
    if strategy == "margin":
        return select_margin(m, pool, N)
    if strategy == "kcenter":
        return select_kcenter(m, pool, labeled, N)
    if strategy == "random":
        return select_random(pool, N, seed)
    raise ConfigError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
