"""Experiment orchestration: data preparation, the model matrix, training, noise sweeps and reports."""

import json
import logging
import re
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import __version__, baselines, drbm, gbrbm, mdrbm, serialization
from .baselines import ElmDrbmModel, MlpParams
from .config import ExperimentConfig, ModelSpec, Theta0Source
from .core_math import FloatArray, RngStream, init_gaussian_scaled
from .data import Dataset, StandardizationStats, add_awgn, load_cifar10, load_csv, load_idx, split_pool, subsample
from .drbm import DrbmParams
from .errors import ConfigurationError, MdrbmBenchError, UsageError
from .gbrbm import GbrbmParams, GbrbmTrainResult
from .mdrbm import MdrbmModel
from .pelm import PelmParams
from .report import ModelRow, NoiseSweepReport, ReportMetadata, SweepEntry
from .training import EpochRecord

logger = logging.getLogger(__name__)

Classifier = Union[DrbmParams, ElmDrbmModel, MdrbmModel, MlpParams]
CLASSIFIER_TYPES = (DrbmParams, ElmDrbmModel, MdrbmModel, MlpParams)

# Stream ids below the root seed of an experiment.
DATA_STREAM = 0
TRAIN_STREAM = 1
SWEEP_STREAM = 2


@contextmanager
def stage(label: str) -> Iterator[None]:
    """Prefix errors raised inside the block with ``[label]`` and record the stage on them."""
    try:
        yield
    except MdrbmBenchError as e:
        if e.stage is not None:
            raise
        logger.error(f"Stage '{label}' failed: {e}")
        labeled = type(e)(f"[{label}] {e}")
        labeled.stage = label
        raise labeled from e


@dataclass
class PreparedData:
    """Standardized train and test subsets, plus the raw test inputs for pre-standardization noise."""

    train: Dataset
    test: Dataset
    raw_test: Dataset
    stats: StandardizationStats


def load_pools(config: ExperimentConfig) -> Tuple[Dataset, Optional[Dataset]]:
    """Load the full training pool and the test pool (``None`` when the files are one pooled set)."""
    spec = config.dataset
    train_paths, test_paths = spec.resolved_train_paths(), spec.resolved_test_paths()
    if spec.format == "idx":
        train = load_idx(train_paths[0], train_paths[1], n_classes=spec.n_classes, name=spec.name)
        test = load_idx(test_paths[0], test_paths[1], n_classes=train.K, name=spec.name)
        return train, test
    if spec.format == "cifar10":
        return load_cifar10(train_paths, name=spec.name), load_cifar10(test_paths, name=spec.name)
    pool = load_csv(
        train_paths + test_paths, label_column=spec.label_column, delimiter=spec.delimiter, name=spec.name
    )
    if test_paths:
        # One pass over every file keeps the label-to-class mapping shared by train and test.
        n_train_rows = load_csv(train_paths, label_column=spec.label_column, delimiter=spec.delimiter).N
        return pool.subset(np.arange(n_train_rows)), pool.subset(np.arange(n_train_rows, pool.N))
    return pool, None


def prepare_data(config: ExperimentConfig) -> PreparedData:
    """load -> standardize (train-pool statistics) -> subsample, all seeded by ``data_seed``.

    A pooled dataset is split first and standardized with the statistics of its training part.
    """
    rng = RngStream(config.data_seed).substream(DATA_STREAM)
    spec = config.dataset
    with stage("load"):
        config.validate_config()
        train_pool, test_pool = load_pools(config)
        logger.info(f"Loaded {spec.name}: {train_pool.N} training items, n={train_pool.n}, K={train_pool.K}")

    if test_pool is None:
        with stage("subsample"):
            train_raw, test_raw = split_pool(train_pool, spec.n_train, spec.n_test, rng.substream(0))
        with stage("standardize"):
            stats = StandardizationStats.fit(train_raw.X)
    else:
        with stage("standardize"):
            if test_pool.n != train_pool.n or test_pool.K != train_pool.K:
                raise UsageError(f"test files have n={test_pool.n}, K={test_pool.K}; training files n={train_pool.n}")
            stats = StandardizationStats.fit(train_pool.X)
        with stage("subsample"):
            train_raw = subsample(train_pool, spec.n_train, rng.substream(0), stratified=spec.stratified)
            test_raw = subsample(test_pool, spec.n_test, rng.substream(1), stratified=spec.stratified)

    with stage("standardize"):
        train = train_raw.with_inputs(stats.apply(train_raw.X))
        test = test_raw.with_inputs(stats.apply(test_raw.X))
    return PreparedData(train=train, test=test, raw_test=test_raw, stats=stats)


def log_probs(model: Classifier, X: FloatArray, S: int, rng: RngStream) -> FloatArray:
    """Row-wise class log-probabilities of any classifier; ``S`` only matters for the MDRBM."""
    if isinstance(model, MdrbmModel):
        return mdrbm.class_log_probs_batch(model, X, S, rng)
    if isinstance(model, ElmDrbmModel):
        return baselines.elm_drbm_infer_batch(model, X)
    if isinstance(model, MlpParams):
        return baselines.mlp_forward_batch(model, X)
    return drbm.class_log_probs_batch(model, X)


def accuracy(model: Classifier, data: Dataset, S: int, rng: RngStream) -> float:
    """Fraction of argmax predictions equal to the true class."""
    if data.N == 0:
        raise UsageError("accuracy of an empty dataset is undefined")
    predictions = np.argmax(log_probs(model, data.X, S, rng), axis=1)
    return float(np.mean(predictions == data.labels))


def adr(row: Mapping[float, float]) -> float:
    """Accuracy-degradation rate ``(acc(0) - acc(1)) / acc(0) * 100``."""
    if 0.0 not in row or 1.0 not in row:
        raise UsageError("ADR needs accuracies at sigma = 0 and sigma = 1")
    clean = row[0.0]
    if clean <= 0:
        raise UsageError("ADR is undefined when the clean accuracy is zero")
    return (clean - row[1.0]) / clean * 100.0


def random_theta0(config: ExperimentConfig, n: int, rng: RngStream, source: str = "") -> PelmParams:
    """(R) setting: Gaussian weights with standard deviation ``1 / sqrt(n)`` and zero biases."""
    return PelmParams(
        b0=np.zeros(config.hidden_pelm),
        w0=init_gaussian_scaled(config.hidden_pelm, n, rng),
        provenance="random",
        source=source,
    )


def pretrain(
    config: ExperimentConfig, inputs: FloatArray, rng: RngStream, run_id: str = ""
) -> Tuple[GbrbmTrainResult, PelmParams]:
    """(G) setting: unsupervised GBRBM training on the training inputs, then export of the hidden layer."""
    params = GbrbmParams.initialize(inputs.shape[1], config.hidden_pelm, rng.substream(0))
    result = gbrbm.train(
        params, inputs, config.gbrbm, rng.substream(1), batch_size=config.gbrbm_batch_size(), label="GBRBM"
    )
    return result, gbrbm.export_pelm(result.params, source=run_id)


def build_model(
    config: ExperimentConfig,
    spec: ModelSpec,
    train: Dataset,
    rng: RngStream,
    theta0_cache: Optional[Dict[Theta0Source, PelmParams]] = None,
) -> Classifier:
    """Construct the untrained model of one matrix row.

    ``theta0_cache`` shares the (R) and (G) layers between the DRBM+ELM and MDRBM rows of a repeat.
    """
    cache = theta0_cache if theta0_cache is not None else {}
    n, K = train.n, train.K
    init_stream = rng.substream(2)
    if spec.kind == "drbm":
        return DrbmParams.initialize(n, config.hidden, K, init_stream)
    if spec.kind == "4nn":
        return MlpParams.initialize(n, config.hidden_pelm, config.hidden, K, init_stream)
    if spec.theta0 is None:
        raise ConfigurationError(f"model kind '{spec.kind}' requires a theta0 source")

    if spec.theta0 not in cache:
        run_id = f"{spec.theta0}:{config.config_hash()[:12]}:seed={config.seed}:stream={rng.stream_id}"
        if spec.theta0 == "random":
            cache["random"] = random_theta0(config, n, rng.substream(0), source=run_id)
        else:
            with stage("pretrain"):
                _, cache["gbrbm"] = pretrain(config, train.X, rng.substream(1), run_id=run_id)
    theta0 = cache[spec.theta0]
    if theta0.n != n:
        raise ConfigurationError(f"theta0 expects {theta0.n} inputs, dataset has {n}")
    logger.info(f"Built {spec.label} on a '{theta0.provenance}' layer ({theta0.source})")
    if spec.kind == "mdrbm":
        return MdrbmModel.initialize(theta0, config.hidden, K, init_stream)
    return ElmDrbmModel.initialize(theta0, config.hidden, K, init_stream)


@dataclass
class TrainOutcome:
    model: Classifier
    best_model: Classifier
    best_epoch: int
    history: List[EpochRecord] = field(default_factory=list)

    def history_dicts(self) -> List[Dict[str, Optional[float]]]:
        return [
            {"epoch": r.epoch, "objective": r.objective, "held_out_accuracy": r.held_out_accuracy}
            for r in self.history
        ]


def train_model(
    config: ExperimentConfig,
    model: Classifier,
    train: Dataset,
    rng: RngStream,
    held_out: Optional[Dataset] = None,
    label: str = "model",
) -> TrainOutcome:
    """Dispatch to the trainer of the model's family."""
    if isinstance(model, MdrbmModel):
        m = mdrbm.train(model, train, config.training, rng, sampling=config.sampling, held_out=held_out, label=label)
        return TrainOutcome(m.model, m.best_model, m.best_epoch, m.history)
    if isinstance(model, ElmDrbmModel):
        e = baselines.elm_drbm_train(model, train, config.training, rng, held_out=held_out, label=label)
        return TrainOutcome(e.model, e.best_model, e.best_epoch, e.history)
    if isinstance(model, MlpParams):
        p = baselines.mlp_train(model, train, config.training, rng, held_out=held_out, label=label)
        return TrainOutcome(p.params, p.best_params, p.best_epoch, p.history)
    d = drbm.train(model, train, config.training, rng, held_out=held_out, label=label)
    return TrainOutcome(d.params, d.best_params, d.best_epoch, d.history)


def noise_sweep(
    model: Classifier,
    test: Dataset,
    grid: Sequence[float],
    repeats: int,
    S: int,
    rng: RngStream,
    label: str = "model",
    stats: Optional[StandardizationStats] = None,
    raw_test: Optional[Dataset] = None,
) -> ModelRow:
    """Accuracy on noisy copies of the test set for every noise level.

    Noise for level ``i`` and draw ``r`` comes from ``rng.substream(0, i, r)`` and inference from
    ``rng.substream(1, i, r)``, so models swept with the same ``rng`` see identical noise.
    With ``stats`` and ``raw_test`` the noise is added to the raw inputs before standardization.
    """
    if not grid:
        raise UsageError("noise grid must not be empty")
    if 0.0 not in grid:
        raise UsageError("noise grid must include sigma = 0")
    if repeats < 1:
        raise UsageError(f"repeats must be at least 1, got {repeats}")

    entries = []
    for i, sigma in enumerate(grid):
        accuracies = []
        for r in range(repeats):
            if sigma == 0:
                noisy = test
            elif stats is not None and raw_test is not None:
                noisy = test.with_inputs(stats.apply(add_awgn(raw_test.X, sigma, rng.substream(0, i, r))))
            else:
                noisy = test.with_inputs(add_awgn(test.X, sigma, rng.substream(0, i, r)))
            accuracies.append(accuracy(model, noisy, S, rng.substream(1, i, r)))
        entry = SweepEntry.from_accuracies(sigma, accuracies)
        logger.info(f"{label} sigma={sigma:g}: accuracy {entry.mean:.4f} +/- {entry.std:.4f}")
        entries.append(entry)
    return ModelRow(model=label, entries=entries)


def with_adr(row: ModelRow) -> ModelRow:
    """Attach the ADR when both endpoints were swept."""
    accuracies = row.accuracy_map()
    if 0.0 not in accuracies or 1.0 not in accuracies or accuracies[0.0] <= 0:
        logger.warning(f"{row.model}: ADR needs accuracies at sigma 0 and 1, leaving it empty")
        return row
    return row.model_copy(update={"adr": adr(accuracies)})


def slug(label: str) -> str:
    """File-name form of a model label, e.g. ``MDRBM(G)`` -> ``mdrbm_g``."""
    return re.sub(r"[^a-z0-9]+", "_", label.lower()).strip("_")


def _write_history(path: Path, label: str, repeat: int, outcome: TrainOutcome) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"model": label, "repeat": repeat, "best_epoch": outcome.best_epoch, "history": outcome.history_dicts()}
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def run_experiment(config: ExperimentConfig, out_dir: Union[str, Path]) -> NoiseSweepReport:
    """Run the whole model matrix and write the report, trained models and histories under ``out_dir``.

    Every repeat re-seeds initialization, pretraining, sampling and noise from ``(seed, repeat)``;
    the train/test subsets stay fixed by ``data_seed``. On a stage failure the report written so
    far is flagged incomplete and the labeled error is re-raised.
    """
    out_dir = Path(out_dir)
    started = time.perf_counter()
    config_hash = config.config_hash()
    report = NoiseSweepReport(
        metadata=ReportMetadata(
            config_hash=config_hash,
            seed=config.seed,
            data_seed=config.data_seed,
            repeats=config.repeats,
            noise_repeats=config.noise.repeats,
            dataset=config.dataset.name,
            n_train=config.dataset.n_train,
            n_test=config.dataset.n_test,
            s_infer=config.sampling.s_infer,
            noise_before_standardize=config.noise.before_standardize,
            version=__version__,
        ),
        config=config.model_dump(mode="json"),
    )
    rows: Dict[str, ModelRow] = {}
    logger.info(f"Running experiment '{config.name}' (config {config_hash[:12]}) into {out_dir}")

    try:
        data = prepare_data(config)
        root = RngStream(config.seed)
        for repeat in range(config.repeats):
            cache: Dict[Theta0Source, PelmParams] = {}
            sweep_rng = root.substream(SWEEP_STREAM, repeat)
            for spec in config.models:
                run_rng = root.substream(TRAIN_STREAM, repeat)
                label = spec.label
                with stage("build"):
                    model = build_model(config, spec, data.train, run_rng, theta0_cache=cache)
                with stage("train"):
                    outcome = train_model(config, model, data.train, run_rng.substream(3), data.test, label=label)
                meta = {"config_hash": config_hash, "seed": config.seed, "repeat": repeat, "model": label}
                serialization.save_model(out_dir / "models" / f"{slug(label)}_r{repeat}.bin", outcome.best_model, meta)
                _write_history(out_dir / "history" / f"{slug(label)}_r{repeat}.json", label, repeat, outcome)
                with stage("sweep"):
                    row = noise_sweep(
                        outcome.best_model,
                        data.test,
                        config.noise.grid,
                        config.noise.repeats,
                        config.sampling.s_infer,
                        sweep_rng,
                        label=label,
                        stats=data.stats if config.noise.before_standardize else None,
                        raw_test=data.raw_test if config.noise.before_standardize else None,
                    )
                row = row.model_copy(update={"best_epochs": [outcome.best_epoch]})
                rows[label] = rows[label].merged(row) if label in rows else row
        report.status = "complete"
    except MdrbmBenchError as e:
        report.failed_stage = e.stage
        report.error = str(e)
        logger.warning(f"Experiment '{config.name}' stopped early; writing an incomplete report")
        raise
    finally:
        report.rows = [with_adr(r) for r in rows.values()]
        report.metadata.wall_time_seconds = round(time.perf_counter() - started, 3)
        with stage("report"):
            report.write(out_dir)
    return report
