"""Tests for experiment orchestration."""

import json
import tempfile
from pathlib import Path

import numpy as np
import pytest

from mdrbm_bench import bench
from mdrbm_bench.baselines import ElmDrbmModel, MlpParams
from mdrbm_bench.config import (
    DATA_DIR_ENV,
    DatasetSpec,
    ExperimentConfig,
    GbrbmConfig,
    ModelSpec,
    NoiseConfig,
    SampleConfig,
    TrainConfig,
)
from mdrbm_bench.core_math import RngStream
from mdrbm_bench.data import Dataset, StandardizationStats
from mdrbm_bench.drbm import DrbmParams
from mdrbm_bench.errors import ConfigurationError, DataFormatError, UsageError
from mdrbm_bench.mdrbm import MdrbmModel
from mdrbm_bench.pelm import PelmParams
from mdrbm_bench.report import NoiseSweepReport


def write_toy_csv(path: Path, N: int = 60, seed: int = 0) -> None:
    gen = np.random.default_rng(seed)
    lines = ["x1,x2,x3,class"]
    for i in range(N):
        label = "left" if i % 2 == 0 else "right"
        centre = -1.5 if label == "left" else 1.5
        values = centre + gen.normal(0, 1.0, 3)
        lines.append(",".join(f"{v:.6f}" for v in values) + f",{label}")
    path.write_text("\n".join(lines) + "\n")


def toy_config(**kwargs) -> ExperimentConfig:
    settings = dict(
        name="toy",
        dataset=DatasetSpec(name="toy", format="csv", train_paths=["toy.csv"], n_train=40, n_test=20),
        hidden_pelm=6,
        hidden=4,
        training=TrainConfig(epochs=2, batch_size=10),
        gbrbm=GbrbmConfig(epochs=2),
        sampling=SampleConfig(s_train=2, s_infer=3),
        noise=NoiseConfig(grid=[0.0, 0.5, 1.0], repeats=2),
        repeats=2,
    )
    settings.update(kwargs)
    return ExperimentConfig(**settings)


@pytest.fixture
def data_dir(monkeypatch):
    with tempfile.TemporaryDirectory() as temp_dir:
        monkeypatch.setenv(DATA_DIR_ENV, temp_dir)
        write_toy_csv(Path(temp_dir) / "toy.csv")
        yield Path(temp_dir)


def five_items() -> Dataset:
    return Dataset.from_labels(np.zeros((5, 2)), [1, 1, 0, 1, 0], 2)


class TestMetrics:
    """Tests for accuracy and the accuracy-degradation rate."""

    def test_adr_examples(self):
        """Test published accuracy pairs."""
        assert bench.adr({0.0: 0.902, 1.0: 0.816}) == pytest.approx(9.53, abs=0.01)
        assert bench.adr({0.0: 0.924, 1.0: 0.850}) == pytest.approx(8.0, abs=0.01)
        assert bench.adr({0.0: 0.7, 1.0: 0.7}) == 0.0

    def test_adr_negative(self):
        """Test an accuracy that improves under noise gives a negative rate."""
        assert bench.adr({0.0: 0.5, 1.0: 0.6}) < 0

    def test_adr_missing_endpoint(self):
        """Test ADR without sigma = 1."""
        with pytest.raises(UsageError, match="sigma = 0 and sigma = 1"):
            bench.adr({0.0: 0.9, 0.5: 0.8})

    def test_adr_zero_clean_accuracy(self):
        """Test ADR with zero clean accuracy."""
        with pytest.raises(UsageError, match="undefined"):
            bench.adr({0.0: 0.0, 1.0: 0.0})

    def test_accuracy(self):
        """Test a constant classifier on a five-item fixture."""
        params = DrbmParams(b1=np.zeros(1), b2=np.array([0.0, 1.0]), w1=np.zeros((1, 2)), w2=np.zeros((2, 1)))
        assert bench.accuracy(params, five_items(), 1, RngStream(0)) == pytest.approx(0.6)

    def test_accuracy_empty(self):
        """Test accuracy of an empty dataset."""
        empty = Dataset(X=np.zeros((0, 2)), T=np.zeros((0, 2)))
        with pytest.raises(UsageError, match="empty"):
            bench.accuracy(DrbmParams.zeros(2, 1, 2), empty, 1, RngStream(0))


class TestNoiseSweep:
    """Tests for noise_sweep."""

    def make_model(self) -> MdrbmModel:
        gen = np.random.default_rng(0)
        theta0 = PelmParams(b0=np.zeros(4), w0=gen.normal(size=(4, 3)), provenance="random")
        return MdrbmModel.initialize(theta0, H=3, K=2, rng=RngStream(1))

    def make_test(self) -> Dataset:
        gen = np.random.default_rng(2)
        return Dataset.from_labels(gen.normal(size=(30, 3)), np.arange(30) % 2, 2)

    def test_clean_level_equals_accuracy(self):
        """Test sigma = 0 reproduces the clean accuracy with the same inference stream."""
        model, test = self.make_model(), self.make_test()
        rng = RngStream(3)
        row = bench.noise_sweep(model, test, [0.0, 0.5], 2, 5, rng, label="MDRBM(R)")
        for r in range(2):
            clean = bench.accuracy(model, test, 5, rng.substream(1, 0, r))
            assert row.entries[0].accuracies[r] == clean
        assert [e.sigma for e in row.entries] == [0.0, 0.5]
        assert row.model == "MDRBM(R)"

    def test_deterministic(self):
        """Test identical streams give identical curves."""
        model, test = self.make_model(), self.make_test()
        a = bench.noise_sweep(model, test, [0.0, 1.0], 2, 5, RngStream(4))
        b = bench.noise_sweep(model, test, [0.0, 1.0], 2, 5, RngStream(4))
        assert a == b

    def test_identity_statistics_match_default_path(self):
        """Test noise before an identity standardization equals noise after it."""
        model, test = self.make_model(), self.make_test()
        identity = StandardizationStats(mean=np.zeros(3), std=np.ones(3))
        a = bench.noise_sweep(model, test, [0.0, 1.0], 2, 5, RngStream(5))
        b = bench.noise_sweep(model, test, [0.0, 1.0], 2, 5, RngStream(5), stats=identity, raw_test=test)
        assert a == b

    def test_grid_without_zero(self):
        """Test a grid missing sigma = 0."""
        with pytest.raises(UsageError, match="sigma = 0"):
            bench.noise_sweep(self.make_model(), self.make_test(), [0.5], 1, 1, RngStream(0))

    def test_with_adr(self):
        """Test the ADR is attached when both endpoints exist."""
        row = bench.noise_sweep(DrbmParams.zeros(3, 2, 2), self.make_test(), [0.0, 1.0], 1, 1, RngStream(0))
        assert bench.with_adr(row).adr == pytest.approx(0.0)
        partial = bench.noise_sweep(DrbmParams.zeros(3, 2, 2), self.make_test(), [0.0, 0.5], 1, 1, RngStream(0))
        assert bench.with_adr(partial).adr is None


class TestBuildModel:
    """Tests for the model matrix."""

    def make_train(self) -> Dataset:
        gen = np.random.default_rng(0)
        return Dataset.from_labels(gen.normal(size=(20, 3)), np.arange(20) % 2, 2)

    def test_kinds(self):
        """Test every matrix row builds the right type."""
        config = toy_config()
        cache = {}
        built = [
            bench.build_model(config, spec, self.make_train(), RngStream(0).substream(1, 0), theta0_cache=cache)
            for spec in config.models
        ]
        assert [type(m) for m in built] == [DrbmParams, ElmDrbmModel, ElmDrbmModel, MdrbmModel, MdrbmModel, MlpParams]

    def test_shared_layer_and_provenance(self):
        """Test rows of one repeat share the layer of each source."""
        config = toy_config()
        cache = {}
        rng = RngStream(0).substream(1, 0)
        elm = bench.build_model(config, ModelSpec(kind="drbm+elm", theta0="random"), self.make_train(), rng, cache)
        mixed = bench.build_model(config, ModelSpec(kind="mdrbm", theta0="random"), self.make_train(), rng, cache)
        assert elm.pelm is mixed.pelm
        assert mixed.pelm.provenance == "random"
        assert config.config_hash()[:12] in mixed.pelm.source
        assert mixed.pelm.width == 6

    def test_pretrained_layer(self):
        """Test the (G) setting exports a GBRBM layer."""
        config = toy_config()
        model = bench.build_model(config, ModelSpec(kind="mdrbm", theta0="gbrbm"), self.make_train(), RngStream(0))
        assert model.pelm.provenance == "gbrbm"
        assert model.pelm.source.startswith("gbrbm:")


class TestStage:
    """Tests for stage labelling."""

    def test_labels_error(self):
        """Test the error is prefixed and keeps its type."""
        with pytest.raises(DataFormatError, match=r"^\[load\] broken") as info:
            with bench.stage("load"):
                raise DataFormatError("broken")
        assert info.value.stage == "load"
        assert info.value.exit_code == 3

    def test_inner_stage_wins(self):
        """Test nested stages keep the innermost label."""
        with pytest.raises(UsageError, match=r"^\[pretrain\] bad$"):
            with bench.stage("build"):
                with bench.stage("pretrain"):
                    raise UsageError("bad")

    def test_slug(self):
        """Test file-name forms of model labels."""
        assert bench.slug("MDRBM(G)") == "mdrbm_g"
        assert bench.slug("DRBM+ELM(R)") == "drbm_elm_r"
        assert bench.slug("4NN") == "4nn"


class TestPrepareData:
    """Tests for data preparation."""

    def test_pooled_split(self, data_dir):
        """Test a pooled CSV is split and standardized on its training part."""
        data = bench.prepare_data(toy_config())
        assert (data.train.N, data.test.N) == (40, 20)
        assert (data.train.n, data.train.K) == (3, 2)
        assert np.abs(data.train.X.mean(axis=0)).max() < 1e-10
        np.testing.assert_allclose(data.stats.apply(data.raw_test.X), data.test.X)

    def test_deterministic(self, data_dir):
        """Test the subsets depend only on the data seed."""
        a = bench.prepare_data(toy_config(seed=1))
        b = bench.prepare_data(toy_config(seed=2))
        assert a.train.content_hash() == b.train.content_hash()
        c = bench.prepare_data(toy_config(data_seed=3))
        assert a.train.content_hash() != c.train.content_hash()

    def test_separate_test_file(self, data_dir):
        """Test train and test files share one label mapping."""
        (data_dir / "test.csv").write_text("x1,x2,x3,class\n1,2,3,right\n4,5,6,left\n")
        dataset = DatasetSpec(
            name="toy", format="csv", train_paths=["toy.csv"], test_paths=["test.csv"], n_train=10, n_test=2
        )
        data = bench.prepare_data(toy_config(dataset=dataset))
        assert sorted(data.test.labels.tolist()) == [0, 1]
        assert data.raw_test.X[data.raw_test.labels == 1][0].tolist() == [1.0, 2.0, 3.0]

    def test_missing_file_stage(self, data_dir):
        """Test a missing file fails in the load stage."""
        dataset = DatasetSpec(name="toy", format="csv", train_paths=["absent.csv"], n_train=4, n_test=2)
        with pytest.raises(ConfigurationError, match=r"^\[load\]"):
            bench.prepare_data(toy_config(dataset=dataset))


class TestRunExperiment:
    """End-to-end runs on a tiny CSV dataset."""

    def test_complete_report(self, data_dir):
        """Test a full run writes the report, models and histories."""
        with tempfile.TemporaryDirectory() as out_dir:
            report = bench.run_experiment(toy_config(), out_dir)
            out = Path(out_dir)
            assert report.status == "complete"
            assert [r.model for r in report.rows] == [m.label for m in toy_config().models]
            for row in report.rows:
                assert [len(e.accuracies) for e in row.entries] == [4, 4, 4]
                assert len(row.best_epochs) == 2
                assert row.adr is not None or row.accuracy_map()[0.0] == 0.0
            assert (out / "report.tsv").exists()
            assert NoiseSweepReport.read(out / "report.json").content_hash() == report.content_hash()
            assert (out / "models" / "mdrbm_g_r1.bin").exists()
            history = json.loads((out / "history" / "drbm_r0.json").read_text())
            assert history["model"] == "DRBM" and len(history["history"]) == 2

    def test_reproducible_hash(self, data_dir):
        """Test two runs with the same configuration give the same content hash."""
        config = toy_config(models=[ModelSpec(kind="mdrbm", theta0="random"), ModelSpec(kind="drbm")], repeats=1)
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            a = bench.run_experiment(config, first)
            b = bench.run_experiment(config, second)
        assert a.content_hash() == b.content_hash()
        c_config = config.with_overrides(seed=5)
        with tempfile.TemporaryDirectory() as third:
            c = bench.run_experiment(c_config, third)
        assert c.content_hash() != a.content_hash()

    def test_incomplete_report_on_failure(self, data_dir):
        """Test a failing stage leaves an incomplete report naming the stage."""
        dataset = DatasetSpec(name="toy", format="csv", train_paths=["absent.csv"], n_train=4, n_test=2)
        with tempfile.TemporaryDirectory() as out_dir:
            with pytest.raises(ConfigurationError):
                bench.run_experiment(toy_config(dataset=dataset), out_dir)
            report = NoiseSweepReport.read(Path(out_dir) / "report.json")
        assert report.status == "incomplete"
        assert report.failed_stage == "load"
        assert report.error is not None and report.error.startswith("[load]")
        assert report.rows == []
