"""Pool-based active-learning experiments: seeded initial labeling, per-round
selection, simulated oracle labeling, retraining, and evaluation."""

from __future__ import annotations

import dataclasses
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_positive_int, check_positive_real, check_sparsity
from .data import (
    Dataset,
    filter_classes,
    load_csv,
    load_idx_pair,
    subset_by_class_counts,
    synth_gaussian_imbalanced,
)
from .exceptions import ConfigError, ContractError, FisherMaskError
from .fisher import DEFAULT_SPARSITY, layer_profile
from .model import ModelSpec, TrainConfig, init_params, predict_proba, train
from .selector import DEFAULT_LAMBDA, JITTER, STRATEGIES, select

SCHEMA_VERSION = 1
SOURCES = ("synthetic", "idx", "csv")
# synthetic test split: this many times the largest class count, spread evenly
TEST_MULTIPLIER = 5


def _strict(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be an object, got {type(raw).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class DatasetConfig:
    """Where the pool and test split come from.

    ``synthetic`` draws Gaussian classes; ``idx`` and ``csv`` read files,
    optionally keeping a subset of ``classes`` and then ``counts`` samples
    of each for the pool. The test split is used in full.
    """

    source: str = "synthetic"
    n_classes: int = 4
    d: int = 10
    counts: list | None = (25, 500, 25, 25)
    separation: float = 3.0
    seed: int = 0
    images: str | None = None
    labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    path: str | None = None
    test_path: str | None = None
    label_column: str | None = None
    classes: list | None = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigError(f"dataset.source must be one of {SOURCES}, got {self.source!r}")
        if self.counts is not None:
            object.__setattr__(self, "counts", [int(c) for c in self.counts])
        if self.classes is not None:
            object.__setattr__(self, "classes", [int(c) for c in self.classes])
        required = {"idx": ("images", "labels", "test_images", "test_labels"), "csv": ("path", "test_path", "label_column")}
        missing = [k for k in required.get(self.source, ()) if getattr(self, k) is None]
        if missing:
            raise ConfigError(f"dataset.source={self.source} needs {', '.join(missing)}")
        if self.source == "synthetic" and self.counts is None:
            raise ConfigError("synthetic datasets need counts")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "mlp1"
    hidden: int | None = 16
    init_scale: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    strategy: str = "fishermask"
    n_initial: int = 25
    batch_per_round: int = 8
    budget: int = 57
    lam: float = DEFAULT_LAMBDA
    sparsity: float = DEFAULT_SPARSITY
    trials: int = 5
    base_seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        check_positive_int(self.n_initial, "n_initial")
        check_positive_int(self.batch_per_round, "batch_per_round")
        check_positive_int(self.trials, "trials")
        check_positive_int(self.base_seed, "base_seed", minimum=0)
        if self.budget < self.n_initial:
            raise ConfigError(f"budget {self.budget} is below n_initial {self.n_initial}")
        check_positive_real(self.lam, "lambda")
        check_sparsity(self.sparsity)

    @property
    def rounds(self):
        return (self.budget - self.n_initial) // self.batch_per_round

    @classmethod
    def from_dict(cls, raw) -> ExperimentConfig:
        raw = dict(raw)
        if "lambda" in raw:
            if "lam" in raw:
                raise ConfigError("give either lambda or lam, not both")
            raw["lam"] = raw.pop("lambda")
        nested = {
            "dataset": DatasetConfig,
            "model": ModelConfig,
            "train": TrainConfig,
        }
        for key, sub in nested.items():
            if key in raw:
                value = dict(raw[key]) if isinstance(raw[key], dict) else raw[key]
                if sub is TrainConfig and isinstance(value, dict) and "adam_betas" in value:
                    value["adam_betas"] = tuple(value["adam_betas"])
                raw[key] = _strict(sub, value, key)
        return _strict(cls, raw, "config")

    def to_dict(self):
        return _jsonable(asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def derive_seed(seed, *tags):
    """Independent 63-bit seed for a named sub-stream of ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(t) for t in tags))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


# sub-stream tags
_INIT_LABELS, _MODEL_INIT, _TRAIN, _QUERY = 1, 2, 3, 4


def load_datasets(dcfg: DatasetConfig, base_dir=".") -> tuple[Dataset, Dataset]:
    """Resolve a dataset config into (pool, test)."""

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    if dcfg.source == "synthetic":
        pool = synth_gaussian_imbalanced(dcfg.n_classes, dcfg.d, dcfg.counts, dcfg.separation, dcfg.seed)
        per_class = math.ceil(TEST_MULTIPLIER * max(dcfg.counts) / dcfg.n_classes)
        test = synth_gaussian_imbalanced(
            dcfg.n_classes, dcfg.d, [per_class] * dcfg.n_classes, dcfg.separation, derive_seed(dcfg.seed, 0)
        )
        return pool, test
    if dcfg.source == "idx":
        pool = load_idx_pair(resolve(dcfg.images), resolve(dcfg.labels))
        test = load_idx_pair(resolve(dcfg.test_images), resolve(dcfg.test_labels))
    else:
        pool = load_csv(resolve(dcfg.path), dcfg.label_column)
        test = load_csv(resolve(dcfg.test_path), dcfg.label_column)
    n_classes = max(pool.n_classes, test.n_classes)
    pool = Dataset(pool.features, pool.labels, n_classes, pool.ids)
    test = Dataset(test.features, test.labels, n_classes, test.ids)
    if dcfg.classes is not None:
        pool, test = filter_classes(pool, dcfg.classes), filter_classes(test, dcfg.classes)
    if dcfg.counts is not None:
        pool = subset_by_class_counts(pool, dcfg.counts, dcfg.seed)
    return pool, test


def evaluate_accuracy(m, test: Dataset) -> float:
    """Fraction of rows whose argmax prediction (lowest class on ties) is right."""
    if len(test) == 0:
        raise ContractError("cannot evaluate on an empty test set")
    if test.labels is None:
        raise ContractError("test set has no labels")
    pred = np.argmax(predict_proba(m, test.features), axis=1)
    return float(np.mean(pred == test.labels))


@dataclass
class RoundEntry:
    round: int
    n_labeled: int
    accuracy: float
    wall_time: float
    chosen: list


@dataclass
class RunRecord:
    config: dict
    trial_seed: int
    rounds: list
    layer_profiles: dict
    selections: list
    final_checksum: str
    jitter: float = JITTER
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        return _jsonable(asdict(self))

    @classmethod
    def from_dict(cls, raw) -> RunRecord:
        if raw.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported RunRecord schema {raw.get('schema_version')!r}")
        raw = dict(raw)
        raw["rounds"] = [RoundEntry(**e) for e in raw["rounds"]]
        raw["layer_profiles"] = {int(k): v for k, v in raw["layer_profiles"].items()}
        return cls(**raw)

    def deterministic_view(self):
        """Everything except wall-clock timings, for reproducibility checks."""
        doc = self.to_dict()
        for entry in doc["rounds"]:
            entry.pop("wall_time")
        doc["layer_profiles"] = {str(k): v for k, v in doc["layer_profiles"].items()}
        return doc

    def labeled_counts(self):
        return [e.n_labeled for e in self.rounds]

    def accuracies(self):
        return [e.accuracy for e in self.rounds]


def _fit_round(cfg, trial_seed, model, pool, labeled_pos, r):
    round_cfg = dataclasses.replace(cfg.train, seed=derive_seed(trial_seed, _TRAIN, r))
    return train(model, pool.take(np.sort(labeled_pos)), round_cfg)


def initial_round(cfg: ExperimentConfig, trial_seed, pool: Dataset):
    """Draw the ``n_initial`` seed labels and fit the round-0 model.

    Depends only on ``trial_seed`` (never on the strategy), so every strategy
    starts a trial from the same labeled set and the same model.
    Returns ``(model, labeled_positions)``.
    """
    spec = ModelSpec(
        cfg.model.kind,
        pool.n_features,
        pool.n_classes,
        cfg.model.hidden if cfg.model.kind == "mlp1" else None,
        cfg.model.init_scale,
        derive_seed(trial_seed, _MODEL_INIT),
    )
    init_rng = np.random.default_rng(derive_seed(trial_seed, _INIT_LABELS))
    labeled_pos = np.sort(init_rng.choice(len(pool), size=cfg.n_initial, replace=False))
    return _fit_round(cfg, trial_seed, init_params(spec), pool, labeled_pos, 0), labeled_pos


def run_experiment(cfg: ExperimentConfig, trial_seed, datasets=None, base_dir=".") -> RunRecord:
    """One active-learning trial; a pure function of ``(cfg, trial_seed)``.

    ``datasets`` may pass a pre-loaded ``(pool, test)`` pair to skip loading.
    """
    pool, test = datasets if datasets is not None else load_datasets(cfg.dataset, base_dir)
    if pool.labels is None:
        raise ConfigError("the pool needs withheld labels to simulate the oracle")
    if cfg.budget > len(pool):
        raise ConfigError(f"budget {cfg.budget} exceeds the pool of {len(pool)} samples")

    t0 = time.perf_counter()
    model, labeled_pos = initial_round(cfg, trial_seed, pool)
    entries = [
        RoundEntry(0, int(labeled_pos.size), evaluate_accuracy(model, test), time.perf_counter() - t0,
                   pool.ids[labeled_pos].tolist())
    ]
    profiles, selections = {}, []
    is_labeled = np.zeros(len(pool), dtype=bool)
    is_labeled[labeled_pos] = True

    for r in range(1, cfg.rounds + 1):
        t0 = time.perf_counter()
        remaining = pool.take(np.flatnonzero(~is_labeled))
        labeled = pool.take(labeled_pos)
        try:
            sel = select(
                cfg.strategy, model, remaining, labeled, cfg.batch_per_round,
                sparsity=cfg.sparsity, lam=cfg.lam, seed=derive_seed(trial_seed, _QUERY, r),
            )
        except FisherMaskError as exc:
            raise type(exc)(f"round {r}, strategy {cfg.strategy}: {exc}") from exc
        new_pos = pool.positions_of(sel.ids)
        if is_labeled[new_pos].any() or np.unique(new_pos).size != new_pos.size:
            raise ContractError(f"round {r}: strategy {cfg.strategy} re-selected a labeled sample")
        is_labeled[new_pos] = True
        labeled_pos = np.flatnonzero(is_labeled)
        model = _fit_round(cfg, trial_seed, model, pool, labeled_pos, r)
        entries.append(
            RoundEntry(r, int(labeled_pos.size), evaluate_accuracy(model, test), time.perf_counter() - t0,
                       sel.ids.tolist())
        )
        selections.extend(
            (r, step, int(i), float(s)) for step, (i, s) in enumerate(zip(sel.ids, sel.scores))
        )
        if cfg.strategy == "fishermask" and sel.mask is not None:
            profiles[r] = [list(share) for share in layer_profile(sel.mask)]

    return RunRecord(cfg.to_dict(), int(trial_seed), entries, profiles, selections, model.checksum())


@dataclass(frozen=True)
class LearningCurve:
    labels: np.ndarray
    mean_acc: np.ndarray
    std_acc: np.ndarray

    def rows(self):
        return list(zip(self.labels.tolist(), self.mean_acc.tolist(), self.std_acc.tolist()))


def aggregate_trials(records) -> LearningCurve:
    """Pointwise mean and population standard deviation of accuracy."""
    records = list(records)
    if not records:
        raise ContractError("need at least one RunRecord")
    x = records[0].labeled_counts()
    for rec in records[1:]:
        if rec.labeled_counts() != x:
            raise ContractError("records have different round structures")
        if rec.config != records[0].config:
            raise ContractError("records come from different configurations")
    acc = np.array([rec.accuracies() for rec in records])
    return LearningCurve(np.array(x), acc.mean(axis=0), acc.std(axis=0))
