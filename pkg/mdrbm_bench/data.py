"""Dataset ingestion, Z-score standardization, subsampling and AWGN injection."""

import csv
import gzip
import hashlib
import io
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core_math import FloatArray, RngStream
from .errors import ConfigurationError, DataFormatError, UsageError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR10_RECORD_BYTES = 3073
CIFAR10_PLANE = 1024
# ITU-R BT.601 luma coefficients
BT601 = (0.299, 0.587, 0.114)
STD_FLOOR = 1e-8


def one_hot(labels: ArrayLike, n_classes: int) -> FloatArray:
    """Encode integer labels as 1-of-K rows."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise UsageError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    out = np.zeros((labels.shape[0], n_classes), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


@dataclass(frozen=True)
class Dataset:
    """Inputs ``X`` (N x n) with 1-of-K targets ``T`` (N x K)."""

    X: FloatArray
    T: FloatArray
    name: str = "dataset"

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=np.float64)
        T = np.asarray(self.T, dtype=np.float64)
        if X.ndim != 2 or T.ndim != 2:
            raise UsageError(f"X and T must be matrices, got shapes {X.shape} and {T.shape}")
        if X.shape[0] != T.shape[0]:
            raise UsageError(f"X has {X.shape[0]} rows but T has {T.shape[0]}")
        if not np.all(np.isfinite(X)):
            raise UsageError(f"dataset '{self.name}' has non-finite inputs")
        if T.size and not (np.all((T == 0.0) | (T == 1.0)) and np.all(T.sum(axis=1) == 1.0)):
            raise UsageError(f"dataset '{self.name}' targets are not one-hot")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "T", T)

    @property
    def N(self) -> int:
        return int(self.X.shape[0])

    @property
    def n(self) -> int:
        return int(self.X.shape[1])

    @property
    def K(self) -> int:
        return int(self.T.shape[1])

    @property
    def labels(self) -> NDArray[np.int64]:
        return np.argmax(self.T, axis=1).astype(np.int64)

    @classmethod
    def from_labels(cls, X: ArrayLike, labels: ArrayLike, n_classes: int, name: str = "dataset") -> "Dataset":
        return cls(X=np.asarray(X, dtype=np.float64), T=one_hot(labels, n_classes), name=name)

    def subset(self, indices: ArrayLike) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(X=self.X[idx], T=self.T[idx], name=self.name)

    def with_inputs(self, X: ArrayLike) -> "Dataset":
        """Same targets, replaced inputs (e.g. a transformed or noisy copy)."""
        return Dataset(X=np.asarray(X, dtype=np.float64), T=self.T, name=self.name)

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.X).tobytes())
        digest.update(np.ascontiguousarray(self.T).tobytes())
        return digest.hexdigest()


@dataclass(frozen=True)
class StandardizationStats:
    """Per-feature mean and (floored) standard deviation of the training inputs."""

    mean: FloatArray
    std: FloatArray

    @classmethod
    def fit(cls, X: FloatArray) -> "StandardizationStats":
        if X.shape[0] == 0:
            raise UsageError("cannot standardize an empty training set")
        return cls(mean=X.mean(axis=0), std=np.maximum(X.std(axis=0), STD_FLOOR))

    def apply(self, X: FloatArray) -> FloatArray:
        if X.shape[1] != self.mean.shape[0]:
            raise UsageError(f"inputs have {X.shape[1]} features, statistics have {self.mean.shape[0]}")
        return (X - self.mean) / self.std


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e
    if raw[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as e:
            raise DataFormatError(f"{path}: corrupt gzip stream: {e}") from e
    return raw


def _read_text(path: PathLike) -> str:
    path = Path(path)
    try:
        return path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise DataFormatError(f"{path}: not valid UTF-8 text at byte {e.start}: {e.reason}") from e
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e


def _parse_idx(raw: bytes, expected_magic: int, what: str) -> NDArray[np.uint8]:
    if len(raw) < 4:
        raise DataFormatError(f"{what}: file too short for the magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataFormatError(f"{what}: bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise DataFormatError(f"{what}: truncated dimension sizes")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    expected = int(np.prod(dims))
    payload = raw[header_len:]
    if len(payload) != expected:
        raise DataFormatError(f"{what}: payload has {len(payload)} bytes, dimensions {dims} require {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(
    images_path: PathLike, labels_path: PathLike, n_classes: Optional[int] = None, name: str = "idx"
) -> Dataset:
    """Load an IDX image/label pair (MNIST layout), optionally gzip-compressed.

    Pixels are scaled to [0, 1]; images are flattened to rows.
    """
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, "images")
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"item count mismatch: {images.shape[0]} images but {labels.shape[0]} labels")
    K = max(n_classes or 0, int(labels.max()) + 1 if labels.size else 0)
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    logger.info(f"Loaded {name}: {X.shape[0]} items, {X.shape[1]} features, {K} classes")
    return Dataset.from_labels(X, labels.astype(np.int64), K, name=name)


def load_cifar10(batch_paths: Sequence[PathLike], name: str = "CIFAR-10") -> Dataset:
    """Load CIFAR-10 binary batches as BT.601 grayscale images scaled to [0, 1]."""
    if not batch_paths:
        raise UsageError("at least one CIFAR-10 batch file is required")
    images: List[FloatArray] = []
    labels: List[NDArray[np.uint8]] = []
    for path in batch_paths:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR10_RECORD_BYTES != 0:
            raise DataFormatError(
                f"{path}: size {len(raw)} is not a multiple of the {CIFAR10_RECORD_BYTES}-byte record"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR10_RECORD_BYTES)
        if records[:, 0].max() > 9:
            raise DataFormatError(f"{path}: label byte {records[:, 0].max()} outside 0..9")
        planes = records[:, 1:].reshape(-1, 3, CIFAR10_PLANE).astype(np.float64)
        luma = BT601[0] * planes[:, 0] + BT601[1] * planes[:, 1] + BT601[2] * planes[:, 2]
        images.append(luma / 255.0)
        labels.append(records[:, 0])
    X = np.concatenate(images, axis=0)
    logger.info(f"Loaded {name}: {X.shape[0]} items from {len(batch_paths)} batch files")
    return Dataset.from_labels(X, np.concatenate(labels).astype(np.int64), 10, name=name)


def load_csv(
    paths: Union[PathLike, Sequence[PathLike]],
    label_column: str,
    delimiter: str = ",",
    name: str = "csv",
) -> Dataset:
    """Load a headed CSV file (or several with identical headers, pooled in order).

    Labels are mapped to class indices in order of first appearance.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    header: Optional[List[str]] = None
    rows: List[List[float]] = []
    labels: List[int] = []
    classes: Dict[str, int] = {}
    for path in paths:
        with io.StringIO(_read_text(path), newline="") as f:
            reader = csv.reader(f, delimiter=delimiter)
            try:
                file_header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise DataFormatError(f"{path}: missing header row")
            if header is None:
                header = file_header
                if label_column not in header:
                    raise ConfigurationError(f"{path}: label column '{label_column}' not in header")
            elif file_header != header:
                raise DataFormatError(f"{path}: header differs from the first file")
            label_at = header.index(label_column)
            for row_number, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise DataFormatError(f"{path}: row {row_number} has {len(row)} fields, expected {len(header)}")
                label = row[label_at].strip()
                features: List[float] = []
                for col, cell in enumerate(row):
                    if col == label_at:
                        continue
                    try:
                        features.append(float(cell))
                    except ValueError:
                        raise DataFormatError(
                            f"{path}: row {row_number}, column '{header[col]}': non-numeric value {cell!r}"
                        )
                rows.append(features)
                labels.append(classes.setdefault(label, len(classes)))
    if not rows:
        raise DataFormatError(f"no data rows in {', '.join(str(p) for p in paths)}")
    logger.info(f"Loaded {name}: {len(rows)} rows, {len(rows[0])} features, {len(classes)} classes")
    return Dataset.from_labels(np.array(rows, dtype=np.float64), labels, len(classes), name=name)


def standardize(train: Dataset, others: Sequence[Dataset] = ()) -> Tuple[StandardizationStats, Dataset, List[Dataset]]:
    """Z-score every dataset with statistics computed from ``train`` only."""
    stats = StandardizationStats.fit(train.X)
    return stats, train.with_inputs(stats.apply(train.X)), [d.with_inputs(stats.apply(d.X)) for d in others]


def subsample(data: Dataset, N: int, rng: RngStream, stratified: bool = False) -> Dataset:
    """Draw ``N`` items without replacement, uniformly or with per-class quotas."""
    if N < 1 or N > data.N:
        raise UsageError(f"cannot draw {N} items from a dataset of {data.N}")
    gen = rng.generator()
    if not stratified:
        return data.subset(gen.permutation(data.N)[:N])

    quotas = np.full(data.K, N // data.K)
    quotas[: N % data.K] += 1
    labels = data.labels
    chosen: List[NDArray[np.int64]] = []
    for k in range(data.K):
        members = np.flatnonzero(labels == k)
        if members.size < quotas[k]:
            raise UsageError(f"class {k} has {members.size} items, stratified draw needs {quotas[k]}")
        chosen.append(gen.permutation(members)[: quotas[k]])
    return data.subset(gen.permutation(np.concatenate(chosen)))


def split_pool(data: Dataset, n_train: int, n_test: int, rng: RngStream) -> Tuple[Dataset, Dataset]:
    """Seeded disjoint train/test split of a pooled dataset."""
    if n_train < 1 or n_test < 1 or n_train + n_test > data.N:
        raise UsageError(f"cannot split {data.N} items into {n_train} train and {n_test} test")
    order = rng.generator().permutation(data.N)
    return data.subset(order[:n_train]), data.subset(order[n_train : n_train + n_test])


def add_awgn(X: FloatArray, sigma: float, rng: RngStream) -> FloatArray:
    """Return ``X + eta`` with ``eta`` i.i.d. Gaussian(0, sigma^2); ``X`` is not modified."""
    if not sigma >= 0:
        raise UsageError(f"noise level must be nonnegative, got {sigma}")
    X = np.asarray(X, dtype=np.float64)
    if sigma == 0:
        return X.copy()
    return X + rng.generator().normal(0.0, sigma, size=X.shape)
