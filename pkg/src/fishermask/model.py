"""Small differentiable classifiers with analytic gradients.

Two architectures are supported, both stored as one flat float64 parameter
vector plus a :class:`ParamLayout` describing its segments:

``softmax_linear``
    logits = W x + b, with W of shape (n_classes, d).
``mlp1``
    logits = W2 relu(W1 x + b1) + b2, with W1 of shape (hidden, d) and W2 of
    shape (n_classes, hidden). The ReLU subgradient at 0 is taken to be 0.

Weight matrices are flattened row-major. All batched routines work on
arrays of shape (B, d); the per-sample functions accept a single vector.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from ._validation import check_features, check_labels, check_positive_int, check_positive_real, check_vector
from .exceptions import ConfigError, ContractError, FormatError

KINDS = ("softmax_linear", "mlp1")
CHECKPOINT_FORMAT = "fishermask-checkpoint"
CHECKPOINT_VERSION = 1


class Segment(NamedTuple):
    name: str
    offset: int
    length: int
    shape: tuple


@dataclass(frozen=True)
class ParamLayout:
    segments: tuple
    total: int

    def __post_init__(self):
        names = [s.name for s in self.segments]
        if len(set(names)) != len(names):
            raise ContractError(f"duplicate segment names in {names}")
        offset = 0
        for s in self.segments:
            if s.offset != offset or s.length != int(np.prod(s.shape)):
                raise ContractError(f"segment {s.name} is not contiguous with its predecessor")
            offset += s.length
        if offset != self.total:
            raise ContractError(f"segments cover {offset} parameters, layout total is {self.total}")

    @classmethod
    def from_shapes(cls, named_shapes):
        segments, offset = [], 0
        for name, shape in named_shapes:
            length = int(np.prod(shape))
            segments.append(Segment(name, offset, length, tuple(shape)))
            offset += length
        return cls(tuple(segments), offset)

    def names(self):
        return [s.name for s in self.segments]

    def segment(self, name) -> Segment:
        for s in self.segments:
            if s.name == name:
                return s
        raise KeyError(name)

    def indices(self, name) -> np.ndarray:
        s = self.segment(name)
        return np.arange(s.offset, s.offset + s.length)

    def segment_of(self, flat_indices) -> np.ndarray:
        """Segment position (into ``segments``) owning each flat index."""
        starts = np.array([s.offset for s in self.segments])
        return np.searchsorted(starts, np.asarray(flat_indices), side="right") - 1


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    d: int
    n_classes: int
    hidden: int | None = None
    init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        check_positive_int(self.d, "d", minimum=2)
        check_positive_int(self.n_classes, "n_classes", minimum=2)
        if self.kind == "mlp1":
            check_positive_int(self.hidden, "hidden")
        if not self.init_scale >= 0:
            raise ConfigError(f"init_scale must be >= 0, got {self.init_scale}")

    def layout(self) -> ParamLayout:
        if self.kind == "softmax_linear":
            shapes = [("W", (self.n_classes, self.d)), ("b", (self.n_classes,))]
        else:
            shapes = [
                ("W1", (self.hidden, self.d)),
                ("b1", (self.hidden,)),
                ("W2", (self.n_classes, self.hidden)),
                ("b2", (self.n_classes,)),
            ]
        return ParamLayout.from_shapes(shapes)

    def last_layer(self):
        return ("W", "b") if self.kind == "softmax_linear" else ("W2", "b2")


@dataclass(frozen=True, eq=False)
class ModelState:
    spec: ModelSpec
    theta: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64)
        if theta.shape != (self.layout.total,):
            raise ContractError(f"theta has shape {theta.shape}, layout needs ({self.layout.total},)")
        if not np.all(np.isfinite(theta)):
            raise ContractError("theta contains NaN or Inf")
        if self.layout != self.spec.layout():
            raise ContractError("layout does not match the model spec")
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    def params(self) -> dict:
        """Read-only views of each segment in its natural shape."""
        return {s.name: self.theta[s.offset : s.offset + s.length].reshape(s.shape) for s in self.layout.segments}

    def with_theta(self, theta) -> ModelState:
        return ModelState(self.spec, theta, self.layout)

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.theta, dtype="<f8").tobytes()).hexdigest()


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 300
    batch_size: int = 16
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    warm_start: bool = False

    def __post_init__(self):
        check_positive_real(self.learning_rate, "learning_rate")
        check_positive_int(self.epochs, "epochs")
        check_positive_int(self.batch_size, "batch_size")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError(f"adam_betas must lie in [0, 1), got {self.adam_betas}")
        object.__setattr__(self, "adam_betas", (float(b1), float(b2)))


def init_params(spec: ModelSpec) -> ModelState:
    """Weights i.i.d. uniform in [-init_scale, init_scale]; biases zero."""
    layout = spec.layout()
    rng = np.random.default_rng(spec.seed)
    theta = np.zeros(layout.total)
    for s in layout.segments:
        if len(s.shape) == 2:
            theta[s.offset : s.offset + s.length] = rng.uniform(-spec.init_scale, spec.init_scale, s.length)
    return ModelState(spec, theta, layout)


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(m: ModelState, X):
    """Return (logits, pre-activations, hidden activations) for a batch."""
    p = m.params()
    if m.spec.kind == "softmax_linear":
        return X @ p["W"].T + p["b"], None, X
    a = X @ p["W1"].T + p["b1"]
    h = np.maximum(a, 0.0)
    return h @ p["W2"].T + p["b2"], a, h


def _as_batch(m, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return check_vector(x, m.spec.d)[None, :], True
    return check_features(x, d=m.spec.d), False


def logits(m: ModelState, x) -> np.ndarray:
    X, single = _as_batch(m, x)
    z = _forward(m, X)[0]
    return z[0] if single else z


def predict_proba(m: ModelState, x) -> np.ndarray:
    """Class probabilities for one vector (1-D) or a batch of rows (2-D)."""
    X, single = _as_batch(m, x)
    P = _softmax(_forward(m, X)[0])
    return P[0] if single else P


def penultimate_embedding(m: ModelState, x) -> np.ndarray:
    """Input to the last layer: ``x`` itself for softmax_linear, ReLU
    activations for mlp1."""
    X, single = _as_batch(m, x)
    H = _forward(m, X)[2]
    return H[0] if single else H


def _backprop(m: ModelState, X, a, h, upstream):
    """Parameter gradients for upstream d(out)/d(logits).

    ``upstream`` has shape (B, R, n_classes): R independent output
    directions per sample. Returns shape (B, |theta|, R).
    """
    B, R, n = upstream.shape
    if m.spec.kind == "softmax_linear":
        gW = np.einsum("brc,bj->bcjr", upstream, X).reshape(B, n * X.shape[1], R)
        return np.concatenate([gW, upstream.transpose(0, 2, 1)], axis=1)
    W2 = m.params()["W2"]
    hidden = W2.shape[1]
    gW2 = np.einsum("brc,bj->bcjr", upstream, h).reshape(B, n * hidden, R)
    delta = (upstream @ W2) * (a > 0)[:, None, :]
    gW1 = np.einsum("bri,bj->bijr", delta, X).reshape(B, hidden * X.shape[1], R)
    return np.concatenate(
        [gW1, delta.transpose(0, 2, 1), gW2, upstream.transpose(0, 2, 1)], axis=1
    )


def grad_logp_batch(m: ModelState, X):
    """Scores for every class at every row.

    Returns ``(G, P)`` with ``G[b, :, y] = d log p(y | X[b]) / d theta`` of
    shape (B, |theta|, n_classes) and ``P`` the (B, n_classes) probabilities.
    """
    X = check_features(X, d=m.spec.d)
    z, a, h = _forward(m, X)
    P = _softmax(z)
    n = m.spec.n_classes
    upstream = np.eye(n)[None, :, :] - P[:, None, :]
    return _backprop(m, X, a, h, upstream), P


def grad_logp_all_classes(m: ModelState, x) -> np.ndarray:
    """Matrix of shape (|theta|, n_classes); column y is grad log p(y|x)."""
    x = check_vector(x, m.spec.d)
    return grad_logp_batch(m, x[None, :])[0][0]


def loss_and_grad(m: ModelState, batch):
    """Mean natural-log cross-entropy over ``batch = (X, y)`` and its gradient."""
    X, y = batch
    X = check_features(X, d=m.spec.d)
    y = check_labels(y, m.spec.n_classes, X.shape[0])
    z, a, h = _forward(m, X)
    zmax = z.max(axis=1, keepdims=True)
    log_norm = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    B = X.shape[0]
    loss = float(np.mean(log_norm - z[np.arange(B), y]))
    upstream = _softmax(z)
    upstream[np.arange(B), y] -= 1.0
    upstream /= B
    grad = _backprop(m, X, a, h, upstream[:, None, :]).sum(axis=0)[:, 0]
    return loss, grad


def train(m: ModelState, labeled, cfg: TrainConfig, history=None) -> ModelState:
    """Fit with Adam over shuffled mini-batches.

    Unless ``cfg.warm_start`` is set, training restarts from
    ``init_params(m.spec)``. If ``history`` is a list, the size-weighted mean
    mini-batch loss of each epoch is appended to it.
    """
    if labeled.labels is None:
        raise ContractError("training data must be labeled")
    if len(labeled) == 0:
        raise ContractError("cannot train on an empty labeled set")
    X, y = labeled.features, labeled.labels
    state = m if cfg.warm_start else init_params(m.spec)
    theta = state.theta.copy()
    mom = np.zeros_like(theta)
    vel = np.zeros_like(theta)
    beta1, beta2 = cfg.adam_betas
    rng = np.random.default_rng(cfg.seed)
    n = len(labeled)
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, g = loss_and_grad(state.with_theta(theta), (X[idx], y[idx]))
            epoch_loss += loss * idx.size
            step += 1
            mom = beta1 * mom + (1 - beta1) * g
            vel = beta2 * vel + (1 - beta2) * g * g
            mhat = mom / (1 - beta1**step)
            vhat = vel / (1 - beta2**step)
            theta = theta - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        if history is not None:
            history.append(epoch_loss / n)
    return state.with_theta(theta)


def save_checkpoint(m: ModelState, path):
    """Plain-JSON checkpoint: spec, layout manifest, and the flat theta array."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": asdict(m.spec),
        "layout": [
            {"name": s.name, "offset": s.offset, "length": s.length, "shape": list(s.shape)}
            for s in m.layout.segments
        ],
        "total": m.layout.total,
        "sha256": m.checksum(),
        "theta": [float(v) for v in m.theta],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> ModelState:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
    spec = ModelSpec(**doc["spec"])
    layout = ParamLayout(
        tuple(Segment(s["name"], s["offset"], s["length"], tuple(s["shape"])) for s in doc["layout"]),
        doc["total"],
    )
    state = ModelState(spec, np.array(doc["theta"], dtype=np.float64), layout)
    if state.checksum() != doc["sha256"]:
        raise FormatError(f"{path}: theta checksum mismatch")
    return state
