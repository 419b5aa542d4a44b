"""scikit-learn compatible wrappers around the functional core.

:class:`FisherNetClassifier` fits the small analytic-gradient networks,
:class:`FisherMaskTransformer` exposes the Fisher mask and masked gradient
embeddings as a transformer, and the ``*Sampler`` classes implement
``query(clf, X_pool, X_labeled, batch_size)`` for each query strategy,
returning positions into ``X_pool``.
"""

from numbers import Integral, Real

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin, _fit_context
from sklearn.utils._param_validation import Interval, StrOptions
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .data import Dataset
from .fisher import DEFAULT_SPARSITY, build_mask, fisher_diag_pool, grad_factors, layer_profile
from .model import KINDS, ModelSpec, TrainConfig, init_params, penultimate_embedding, predict_proba, train
from .selector import (
    DEFAULT_LAMBDA,
    fishermask_query,
    select_bait,
    select_entropy,
    select_kcenter,
    select_margin,
    select_random,
)


class FisherNetClassifier(ClassifierMixin, BaseEstimator):
    """Softmax regression or one-hidden-layer ReLU network trained with Adam.

    Parameters
    ----------
    kind : {'softmax_linear', 'mlp1'}, default='mlp1'
        Architecture.
    hidden : int, default=16
        Hidden width; ignored for ``softmax_linear``.
    init_scale : float, default=0.1
        Weights start uniform in ``[-init_scale, init_scale]``; biases at zero.
    learning_rate : float, default=0.001
    epochs : int, default=300
    batch_size : int, default=16
    warm_start : bool, default=False
        Continue from the current parameters on refit instead of
        re-initialising.
    random_state : int, default=0
        Seeds both initialisation and mini-batch shuffling.

    Attributes
    ----------
    state_ : ModelState
        Fitted parameters.
    classes_ : ndarray of shape (n_classes,)
    n_features_in_ : int
    loss_curve_ : list of float
        Mean training loss of each epoch.
    """

    _parameter_constraints = {
        "kind": [StrOptions(set(KINDS))],
        "hidden": [Interval(Integral, 1, None, closed="left")],
        "init_scale": [Interval(Real, 0, None, closed="left")],
        "learning_rate": [Interval(Real, 0, None, closed="neither")],
        "epochs": [Interval(Integral, 1, None, closed="left")],
        "batch_size": [Interval(Integral, 1, None, closed="left")],
        "warm_start": ["boolean"],
        "random_state": [Interval(Integral, 0, None, closed="left")],
    }

    def __init__(
        self,
        kind="mlp1",
        hidden=16,
        init_scale=0.1,
        learning_rate=0.001,
        epochs=300,
        batch_size=16,
        warm_start=False,
        random_state=0,
    ):
        self.kind = kind
        self.hidden = hidden
        self.init_scale = init_scale
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.warm_start = warm_start
        self.random_state = random_state

    @_fit_context(prefer_skip_nested_validation=True)
    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError(f"need samples of at least 2 classes, got {self.classes_.size} class")
        d = max(X.shape[1], 2)
        if d != X.shape[1]:
            # a lone feature is padded with a zero column to meet the d >= 2 model contract
            X = np.hstack([X, np.zeros((X.shape[0], 1))])
        spec = ModelSpec(
            self.kind, d, self.classes_.size,
            self.hidden if self.kind == "mlp1" else None, self.init_scale, self.random_state,
        )
        reuse = self.warm_start and getattr(self, "state_", None) is not None and self.state_.spec == spec
        start = self.state_ if reuse else init_params(spec)
        cfg = TrainConfig(
            learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
            seed=self.random_state, warm_start=reuse,
        )
        self.loss_curve_ = []
        self.state_ = train(start, Dataset(X, y_enc, spec.n_classes), cfg, history=self.loss_curve_)
        return self

    def _inputs(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        if X.shape[1] < self.state_.spec.d:
            X = np.hstack([X, np.zeros((X.shape[0], self.state_.spec.d - X.shape[1]))])
        return X

    def predict_proba(self, X):
        X = self._inputs(X)
        return predict_proba(self.state_, X)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def embed(self, X):
        """Penultimate-layer representation used by k-center selection."""
        X = self._inputs(X)
        return penultimate_embedding(self.state_, X)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.allow_nan = False
        return tags


def _pool_dataset(clf, X):
    X = clf._inputs(X)
    return Dataset(X, None, clf.state_.spec.n_classes)


class FisherMaskTransformer(TransformerMixin, BaseEstimator):
    """Fisher-importance mask of a fitted :class:`FisherNetClassifier`.

    ``fit`` computes the pool Fisher diagonal on ``X`` and keeps the top
    ``sparsity`` fraction of parameters; ``transform`` returns each row's
    masked gradient factor flattened to ``k * n_classes`` columns.

    Attributes
    ----------
    fisher_diag_ : ndarray of shape (n_params,)
    mask_ : FisherMask
    layer_profile_ : list of LayerShare
    """

    def __init__(self, estimator=None, sparsity=DEFAULT_SPARSITY):
        self.estimator = estimator
        self.sparsity = sparsity

    def fit(self, X, y=None):
        check_is_fitted(self.estimator)
        diag = fisher_diag_pool(self.estimator.state_, _pool_dataset(self.estimator, X))
        self.fisher_diag_ = diag.values
        self.mask_ = build_mask(diag, self.sparsity)
        self.layer_profile_ = layer_profile(self.mask_)
        self.n_features_in_ = self.estimator.n_features_in_
        return self

    def transform(self, X):
        check_is_fitted(self, "mask_")
        V = grad_factors(self.estimator.state_, self.estimator._inputs(X), self.mask_)
        return V.reshape(V.shape[0], -1)


class _Sampler(BaseEstimator):
    def _datasets(self, clf, X_pool, X_labeled):
        pool = _pool_dataset(clf, X_pool)
        labeled = _pool_dataset(clf, X_labeled) if X_labeled is not None and len(X_labeled) else None
        return pool, labeled

    def query(self, clf, X_pool, X_labeled=None, batch_size=1):
        """Positions into ``X_pool`` of the next ``batch_size`` samples to label."""
        raise NotImplementedError


class FisherMaskSampler(_Sampler):
    """Greedy Fisher trace selection over the top-``sparsity`` parameters."""

    def __init__(self, sparsity=DEFAULT_SPARSITY, lam=DEFAULT_LAMBDA):
        self.sparsity = sparsity
        self.lam = lam

    def query(self, clf, X_pool, X_labeled=None, batch_size=1):
        pool, labeled = self._datasets(clf, X_pool, X_labeled)
        if labeled is None:
            raise ValueError("FisherMaskSampler needs at least one labeled sample")
        return fishermask_query(clf.state_, pool, labeled, batch_size, self.sparsity, self.lam).ids


class BaitSampler(_Sampler):
    """Greedy Fisher trace selection over the last layer's parameters."""

    def __init__(self, lam=DEFAULT_LAMBDA):
        self.lam = lam

    def query(self, clf, X_pool, X_labeled=None, batch_size=1):
        pool, labeled = self._datasets(clf, X_pool, X_labeled)
        if labeled is None:
            raise ValueError("BaitSampler needs at least one labeled sample")
        return select_bait(clf.state_, pool, labeled, batch_size, self.lam).ids


class EntropySampler(_Sampler):
    def query(self, clf, X_pool, X_labeled=None, batch_size=1):
        return select_entropy(clf.state_, self._datasets(clf, X_pool, None)[0], batch_size).ids


class MarginSampler(_Sampler):
    def query(self, clf, X_pool, X_labeled=None, batch_size=1):
        return select_margin(clf.state_, self._datasets(clf, X_pool, None)[0], batch_size).ids


class KCenterSampler(_Sampler):
    def query(self, clf, X_pool, X_labeled=None, batch_size=1):
        pool, labeled = self._datasets(clf, X_pool, X_labeled)
        if labeled is None:
            labeled = Dataset(np.zeros((0, pool.n_features)), None, pool.n_classes)
        return select_kcenter(clf.state_, pool, labeled, batch_size).ids


class RandomSampler(_Sampler):
    def __init__(self, random_state=0):
        self.random_state = random_state

    def query(self, clf, X_pool, X_labeled=None, batch_size=1):
        n = np.asarray(X_pool).shape[0]
        return select_random(Dataset(np.zeros((n, 1)), None, 1), batch_size, self.random_state).ids
