"""Dataset containers, file loaders, and imbalanced-subset construction."""

from __future__ import annotations

import csv
import gzip
import io
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, ContractError, FormatError

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with optional integer labels and stable sample ids.

    ``ids`` default to row positions at construction time and survive every
    subsetting operation, so a sample can be traced back to its source row.
    """

    features: np.ndarray
    labels: np.ndarray | None
    n_classes: int
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise ContractError(f"features must be 2-D, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ContractError("features contain NaN or Inf")
        if isinstance(self.n_classes, bool) or int(self.n_classes) < 1:
            raise ContractError(f"n_classes must be a positive integer, got {self.n_classes!r}")
        y = self.labels
        if y is not None:
            y = np.asarray(y, dtype=np.int64)
            if y.shape != (X.shape[0],):
                raise ContractError(f"{y.shape[0] if y.ndim else 0} labels for {X.shape[0]} feature rows")
            if y.size and (y.min() < 0 or y.max() >= self.n_classes):
                raise ContractError(f"labels must lie in [0, {self.n_classes})")
        ids = np.arange(X.shape[0], dtype=np.int64) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (X.shape[0],):
            raise ContractError("ids must have one entry per feature row")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "n_classes", int(self.n_classes))
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def take(self, positions) -> Dataset:
        """Rows at the given positions (not ids), keeping their ids."""
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(
            self.features[positions],
            None if self.labels is None else self.labels[positions],
            self.n_classes,
            self.ids[positions],
        )

    def positions_of(self, ids) -> np.ndarray:
        """Row positions of the given sample ids; unknown ids raise."""
        lookup = {int(i): p for p, i in enumerate(self.ids)}
        try:
            return np.array([lookup[int(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise ContractError(f"sample id {exc.args[0]} is not in this dataset") from None

    def class_counts(self) -> np.ndarray:
        if self.labels is None:
            raise ContractError("dataset has no labels")
        return np.bincount(self.labels, minlength=self.n_classes)


def _open_maybe_gzip(path):
    path = os.fspath(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, expected_magic, kind):
    with _open_maybe_gzip(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError(f"{kind} file {path}: truncated header (magic/item count)")
    (magic,) = struct.unpack(">i", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{kind} file {path}: magic number {magic}, expected {expected_magic}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise FormatError(f"{kind} file {path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}i", raw[4:header_len])
    if any(n < 0 for n in dims):
        raise FormatError(f"{kind} file {path}: negative dimension size {dims}")
    expected = int(np.prod(dims, dtype=np.int64))
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header_len)
    if payload.size != expected:
        raise FormatError(
            f"{kind} file {path}: dimension sizes {dims} declare {expected} bytes, found {payload.size}"
        )
    return payload.reshape(dims)


def load_idx_pair(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair (MNIST / FashionMNIST layout).

    Pixels are flattened row-major and scaled by 1/255. Files ending in
    ``.gz`` are decompressed transparently.
    """
    images = _read_idx(images_path, IDX_IMAGE_MAGIC, "images")
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"item count mismatch: images header declares {images.shape[0]}, "
            f"labels header declares {labels.shape[0]}"
        )
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    n_classes = int(y.max()) + 1 if y.size else 1
    return Dataset(X, y, n_classes)


def write_idx_pair(ds: Dataset, images_path, labels_path, image_shape):
    """Write ``ds`` back out as IDX files; features must be multiples of 1/255."""
    rows, cols = image_shape
    pixels = np.rint(ds.features * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, len(ds), rows, cols))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABEL_MAGIC, len(ds)))
        fh.write(ds.labels.astype(np.uint8).tobytes())


def load_csv(path, label_column=None, n_classes=None) -> Dataset:
    """Read a numeric CSV with a header row.

    Non-label columns become features in header order. Row numbers in error
    messages count data rows from 1 (the header is row 0).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, header row required") from None
        if label_column is not None and label_column not in header:
            raise ConfigError(f"{path}: label column {label_column!r} not in header {header}")
        label_pos = header.index(label_column) if label_column is not None else None
        rows = []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}: row {row_no} has {len(row)} cells, header has {len(header)}")
            values = []
            for name, cell in zip(header, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise FormatError(
                        f"{path}: non-numeric cell {cell!r} at row {row_no}, column {name!r}"
                    ) from None
            rows.append(values)
    table = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    if not np.all(np.isfinite(table)):
        raise FormatError(f"{path}: NaN or Inf cell")
    if label_pos is None:
        return Dataset(table, None, n_classes or 1)
    raw = table[:, label_pos]
    if np.any(raw != np.round(raw)) or np.any(raw < 0):
        raise FormatError(f"{path}: label column {label_column!r} must hold non-negative integers")
    y = raw.astype(np.int64)
    X = np.delete(table, label_pos, axis=1)
    if n_classes is None:
        n_classes = int(y.max()) + 1 if y.size else 1
    return Dataset(X, y, n_classes)


def save_csv(ds: Dataset, path, label_column="label", feature_names=None):
    """Write ``ds`` so that :func:`load_csv` reproduces it exactly."""
    names = list(feature_names) if feature_names else [f"x{j}" for j in range(ds.n_features)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names + ([label_column] if ds.labels is not None else []))
    for i in range(len(ds)):
        row = [repr(float(v)) for v in ds.features[i]]
        if ds.labels is not None:
            row.append(str(int(ds.labels[i])))
        writer.writerow(row)
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def _check_counts(counts, n_classes):
    counts = np.asarray(counts)
    if counts.ndim != 1 or counts.shape[0] != n_classes:
        raise ConfigError(f"need one count per class ({n_classes}), got {counts.tolist()}")
    if np.any(counts < 0) or np.any(counts != np.round(counts)):
        raise ConfigError(f"class counts must be non-negative integers, got {counts.tolist()}")
    return counts.astype(np.int64)


def class_means(n_classes, d, separation):
    """Class centres: ``separation`` times unit vectors spread evenly on a
    circle in the first two coordinates."""
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    means = np.zeros((n_classes, d))
    means[:, 0] = np.cos(angles)
    means[:, 1] = np.sin(angles)
    return separation * means


def synth_gaussian_imbalanced(n_classes, d, counts, separation, seed) -> Dataset:
    if n_classes < 2:
        raise ConfigError(f"n_classes must be >= 2, got {n_classes}")
    if d < 2:
        raise ConfigError(f"d must be >= 2, got {d}")
    if not separation > 0:
        raise ConfigError(f"separation must be > 0, got {separation}")
    counts = _check_counts(counts, n_classes)
    rng = np.random.default_rng(seed)
    means = class_means(n_classes, d, separation)
    X = np.concatenate([means[c] + rng.standard_normal((counts[c], d)) for c in range(n_classes)])
    y = np.repeat(np.arange(n_classes), counts)
    return Dataset(X.reshape(-1, d), y, n_classes)


def filter_classes(ds: Dataset, classes) -> Dataset:
    """Keep only samples of ``classes`` and relabel them ``0..len(classes)-1``."""
    if ds.labels is None:
        raise ContractError("cannot filter an unlabeled dataset by class")
    classes = [int(c) for c in classes]
    if len(set(classes)) != len(classes) or any(not 0 <= c < ds.n_classes for c in classes):
        raise ConfigError(f"classes {classes} must be distinct labels in [0, {ds.n_classes})")
    remap = np.full(ds.n_classes, -1, dtype=np.int64)
    remap[classes] = np.arange(len(classes))
    keep = np.flatnonzero(remap[ds.labels] >= 0)
    return Dataset(ds.features[keep], remap[ds.labels[keep]], len(classes), ds.ids[keep])


def subset_by_class_counts(ds: Dataset, counts, seed) -> Dataset:
    """Draw ``counts[c]`` samples of each class uniformly without replacement.

    Selected rows keep their original relative order and ids.
    """
    if ds.labels is None:
        raise ContractError("class subsetting needs a labeled dataset")
    counts = _check_counts(counts, ds.n_classes)
    available = ds.class_counts()
    rng = np.random.default_rng(seed)
    picked = []
    for c in range(ds.n_classes):
        if counts[c] > available[c]:
            raise ConfigError(f"class {c}: requested {counts[c]} samples, only {available[c]} available")
        members = np.flatnonzero(ds.labels == c)
        picked.append(rng.choice(members, size=counts[c], replace=False))
    return ds.take(np.sort(np.concatenate(picked)))
