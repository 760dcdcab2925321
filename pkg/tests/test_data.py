"""Tests for dataset loading and transforms."""

import gzip
import struct
import tempfile
from pathlib import Path

import numpy as np
import pytest

from mdrbm_bench.core_math import RngStream
from mdrbm_bench.data import (
    Dataset,
    StandardizationStats,
    add_awgn,
    load_cifar10,
    load_csv,
    load_idx,
    one_hot,
    split_pool,
    standardize,
    subsample,
)
from mdrbm_bench.errors import ConfigurationError, DataFormatError, UsageError


def idx_bytes(magic: int, array: np.ndarray) -> bytes:
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + array.astype(np.uint8).tobytes()


def write_idx_pair(directory: Path, images: np.ndarray, labels: np.ndarray, compress: bool = False):
    image_path = directory / "images.idx"
    label_path = directory / "labels.idx"
    image_raw, label_raw = idx_bytes(0x803, images), idx_bytes(0x801, labels)
    if compress:
        image_raw, label_raw = gzip.compress(image_raw), gzip.compress(label_raw)
    image_path.write_bytes(image_raw)
    label_path.write_bytes(label_raw)
    return image_path, label_path


def toy_dataset(N: int = 20, n: int = 3, K: int = 2, seed: int = 0) -> Dataset:
    gen = np.random.default_rng(seed)
    return Dataset.from_labels(gen.normal(size=(N, n)), np.arange(N) % K, K, name="toy")


class TestDataset:
    """Tests for Dataset."""

    def test_one_hot(self):
        """Test label 7 maps to a one at index 7."""
        row = one_hot([7], 10)[0]
        assert row[7] == 1.0 and row.sum() == 1.0

    def test_rejects_bad_targets(self):
        """Test non one-hot targets."""
        with pytest.raises(UsageError, match="one-hot"):
            Dataset(X=np.zeros((1, 2)), T=np.array([[1.0, 1.0]]))

    def test_rejects_non_finite(self):
        """Test NaN inputs."""
        with pytest.raises(UsageError, match="non-finite"):
            Dataset.from_labels(np.array([[np.nan]]), [0], 2)

    def test_content_hash_stable(self):
        """Test identical content hashes identically."""
        assert toy_dataset().content_hash() == toy_dataset().content_hash()
        assert toy_dataset().content_hash() != toy_dataset(seed=1).content_hash()


class TestLoadIdx:
    """Tests for the IDX loader."""

    def test_roundtrip(self):
        """Test shapes, scaling and labels of a small IDX pair."""
        images = np.arange(2 * 2 * 3).reshape(2, 2, 3) * 10
        labels = np.array([7, 2])
        with tempfile.TemporaryDirectory() as temp_dir:
            data = load_idx(*write_idx_pair(Path(temp_dir), images, labels), n_classes=10)
        assert (data.N, data.n, data.K) == (2, 6, 10)
        np.testing.assert_allclose(data.X[1], images[1].reshape(-1) / 255.0)
        assert list(data.labels) == [7, 2]

    def test_gzip(self):
        """Test gzip-compressed files are read transparently."""
        images = np.full((3, 2, 2), 255)
        with tempfile.TemporaryDirectory() as temp_dir:
            data = load_idx(*write_idx_pair(Path(temp_dir), images, np.array([0, 1, 2]), compress=True))
        np.testing.assert_array_equal(data.X, np.ones((3, 4)))
        assert data.K == 3

    def test_bad_magic(self):
        """Test a wrong magic number names the offending file."""
        with tempfile.TemporaryDirectory() as temp_dir:
            images, labels = write_idx_pair(Path(temp_dir), np.zeros((1, 2, 2)), np.zeros(1))
            with pytest.raises(DataFormatError, match="images: bad magic"):
                load_idx(labels, labels)

    def test_truncated(self):
        """Test a truncated payload."""
        with tempfile.TemporaryDirectory() as temp_dir:
            images, labels = write_idx_pair(Path(temp_dir), np.zeros((2, 2, 2)), np.zeros(2))
            images.write_bytes(images.read_bytes()[:-1])
            with pytest.raises(DataFormatError, match="payload"):
                load_idx(images, labels)

    def test_count_mismatch(self):
        """Test image and label counts must agree."""
        with tempfile.TemporaryDirectory() as temp_dir:
            images, labels = write_idx_pair(Path(temp_dir), np.zeros((2, 2, 2)), np.zeros(3))
            with pytest.raises(DataFormatError, match="count mismatch"):
                load_idx(images, labels)


class TestLoadCifar10:
    """Tests for the CIFAR-10 loader."""

    def record(self, label: int, rgb) -> bytes:
        planes = [np.full(1024, c, dtype=np.uint8) for c in rgb]
        return bytes([label]) + b"".join(p.tobytes() for p in planes)

    def test_luma(self):
        """Test BT.601 conversion of white and pure red."""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "batch.bin"
            path.write_bytes(self.record(3, (255, 255, 255)) + self.record(5, (255, 0, 0)))
            data = load_cifar10([path])
        assert (data.N, data.n, data.K) == (2, 1024, 10)
        np.testing.assert_allclose(data.X[0], 1.0)
        np.testing.assert_allclose(data.X[1], 0.299)
        assert list(data.labels) == [3, 5]

    def test_record_size(self):
        """Test a file that is not a whole number of records."""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "batch.bin"
            path.write_bytes(self.record(0, (1, 2, 3))[:-5])
            with pytest.raises(DataFormatError, match="3073"):
                load_cifar10([path])


class TestLoadCsv:
    """Tests for the CSV loader."""

    def test_labels_first_appearance(self):
        """Test a two-row file with labels {a, b}."""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "toy.csv"
            path.write_text("x1,class,x2\n1.5,b,2\n3,a,4\n")
            data = load_csv(path, label_column="class")
        assert data.K == 2
        assert list(data.labels) == [0, 1]
        np.testing.assert_array_equal(data.X, [[1.5, 2.0], [3.0, 4.0]])

    def test_missing_label_column(self):
        """Test a missing label column is a configuration error."""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "toy.csv"
            path.write_text("x1,x2\n1,2\n")
            with pytest.raises(ConfigurationError, match="label column"):
                load_csv(path, label_column="class")

    def test_non_numeric(self):
        """Test a non-numeric cell names its row."""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "toy.csv"
            path.write_text("x1,class\n1,a\nfoo,b\n")
            with pytest.raises(DataFormatError, match="row 3"):
                load_csv(path, label_column="class")

    def test_ragged(self):
        """Test a ragged row."""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "toy.csv"
            path.write_text("x1,class\n1,a,3\n")
            with pytest.raises(DataFormatError, match="row 2 has 3 fields"):
                load_csv(path, label_column="class")

    def test_invalid_utf8(self):
        """Test undecodable bytes are a data format error naming the file."""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "toy.csv"
            path.write_bytes(b"a,class\n1,\xff\xfe\n2,b\n")
            with pytest.raises(DataFormatError, match=r"toy\.csv: not valid UTF-8 text at byte 10"):
                load_csv(path, label_column="class")

    def test_unreadable_path(self):
        """Test a directory in place of a file."""
        with tempfile.TemporaryDirectory() as temp_dir:
            with pytest.raises(DataFormatError, match="cannot read"):
                load_csv(temp_dir, label_column="class")

    def test_delimiter_and_pooling(self):
        """Test several files with a custom delimiter are pooled in order."""
        with tempfile.TemporaryDirectory() as temp_dir:
            first, second = Path(temp_dir) / "a.csv", Path(temp_dir) / "b.csv"
            first.write_text("class;v\nx;1\n")
            second.write_text("class;v\ny;2\nx;3\n")
            data = load_csv([first, second], label_column="class", delimiter=";")
        assert data.N == 3
        assert list(data.labels) == [0, 1, 0]


class TestStandardize:
    """Tests for Z-score standardization."""

    def test_train_moments(self):
        """Test transformed training columns have zero mean and unit std."""
        _, train, _ = standardize(toy_dataset(N=200))
        assert np.abs(train.X.mean(axis=0)).max() < 1e-10
        np.testing.assert_allclose(train.X.std(axis=0), 1.0, atol=1e-10)

    def test_constant_feature(self):
        """Test a constant column becomes all zeros."""
        X = np.column_stack([np.full(5, 3.0), np.arange(5.0)])
        _, train, _ = standardize(Dataset.from_labels(X, [0, 1, 0, 1, 0], 2))
        np.testing.assert_array_equal(train.X[:, 0], 0.0)

    def test_uses_train_statistics(self):
        """Test other sets use the training statistics, not their own."""
        train = Dataset.from_labels(np.array([[0.0], [2.0]]), [0, 1], 2)
        test = Dataset.from_labels(np.array([[10.0], [12.0]]), [0, 1], 2)
        stats, _, (test_t,) = standardize(train, [test])
        np.testing.assert_allclose(test_t.X[:, 0], [9.0, 11.0])
        assert stats.mean[0] == 1.0

    def test_restandardize_identity(self):
        """Test re-standardizing transformed training data is the identity."""
        _, train, _ = standardize(toy_dataset(N=100))
        again = StandardizationStats.fit(train.X).apply(train.X)
        np.testing.assert_allclose(again, train.X, atol=1e-10)


class TestSubsample:
    """Tests for subsampling and splitting."""

    def test_full_permutation(self):
        """Test N = data.N gives a permutation."""
        data = toy_dataset(N=10)
        sub = subsample(data, 10, RngStream(0))
        assert sorted(map(tuple, sub.X)) == sorted(map(tuple, data.X))

    def test_stratified_quotas(self):
        """Test equal per-class counts."""
        data = toy_dataset(N=100, K=10)
        sub = subsample(data, 30, RngStream(0), stratified=True)
        np.testing.assert_array_equal(np.bincount(sub.labels, minlength=10), np.full(10, 3))

    def test_deterministic(self):
        """Test seed determinism."""
        data = toy_dataset(N=50)
        assert subsample(data, 5, RngStream(4)).content_hash() == subsample(data, 5, RngStream(4)).content_hash()

    def test_too_many(self):
        """Test drawing more than available."""
        with pytest.raises(UsageError, match="cannot draw"):
            subsample(toy_dataset(N=5), 6, RngStream(0))

    def test_split_pool_disjoint(self):
        """Test train and test parts are disjoint."""
        data = toy_dataset(N=30)
        train, test = split_pool(data, 20, 10, RngStream(0))
        assert (train.N, test.N) == (20, 10)
        rows = {tuple(r) for r in train.X}
        assert not rows & {tuple(r) for r in test.X}


class TestAwgn:
    """Tests for additive white Gaussian noise."""

    def test_zero_sigma(self):
        """Test sigma = 0 gives a bit-identical copy."""
        X = np.random.default_rng(0).normal(size=(4, 3))
        out = add_awgn(X, 0.0, RngStream(0))
        np.testing.assert_array_equal(out, X)
        assert out is not X

    def test_variance(self):
        """Test the per-entry noise variance at 10^6 entries."""
        X = np.zeros((1000, 1000))
        noise = add_awgn(X, 0.5, RngStream(1)) - X
        assert noise.var() == pytest.approx(0.25, rel=0.05)
        np.testing.assert_array_equal(X, 0.0)

    def test_independent_entries(self):
        """Test adjacent entries are uncorrelated."""
        noise = add_awgn(np.zeros((1000, 1000)), 1.0, RngStream(2)).reshape(-1)
        assert abs(np.corrcoef(noise[:-1], noise[1:])[0, 1]) < 0.01

    def test_deterministic(self):
        """Test seed determinism."""
        X = np.zeros((3, 3))
        np.testing.assert_array_equal(add_awgn(X, 1.0, RngStream(3)), add_awgn(X, 1.0, RngStream(3)))

    def test_negative_sigma(self):
        """Test negative sigma."""
        with pytest.raises(UsageError, match="nonnegative"):
            add_awgn(np.zeros((1, 1)), -0.1, RngStream(0))
