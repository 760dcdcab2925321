"""Multi-layered discriminative RBM: a trainable DRBM stacked on a frozen PELM layer.

``P(t | x) = sum_z P(t | z) B(z | x)`` is estimated with ``S`` samples of ``z`` per input.
Training follows the self-normalized estimator of the log-likelihood gradient: the ``S``
samples drawn for a datum are weighted by ``P(t | z) / sum_v P(t | z_v)``.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import drbm, pelm
from .config import SampleConfig, TrainConfig
from .core_math import FloatArray, ParamSet, RngStream, log_sum_exp, spin_configurations
from .data import Dataset
from .drbm import ClassDistribution, DrbmParams
from .errors import NumericError, UsageError
from .pelm import PelmParams
from .training import EpochRecord, EvaluateFn, fit

logger = logging.getLogger(__name__)

# Upper bound on sampled rows (inputs x S) pushed through the DRBM at once.
CHUNK_ROWS = 20_000


@dataclass(frozen=True)
class MdrbmModel:
    """A frozen PELM layer feeding a DRBM whose input width equals the layer width."""

    pelm: PelmParams
    drbm: DrbmParams

    def __post_init__(self) -> None:
        if self.drbm.n != self.pelm.width:
            raise UsageError(f"DRBM input width {self.drbm.n} does not match PELM width {self.pelm.width}")
        if not self.pelm.frozen:
            raise UsageError("PELM parameters must be frozen")

    @classmethod
    def initialize(cls, theta0: PelmParams, H: int, K: int, rng: RngStream) -> "MdrbmModel":
        return cls(pelm=theta0, drbm=DrbmParams.initialize(theta0.width, H, K, rng))

    def with_drbm(self, params: DrbmParams) -> "MdrbmModel":
        return MdrbmModel(pelm=self.pelm, drbm=params)


def _check_samples(S: int) -> None:
    if S < 1:
        raise UsageError(f"number of samples must be at least 1, got {S}")


def class_probs(model: MdrbmModel, x: ArrayLike, S: int, rng: RngStream) -> ClassDistribution:
    """Monte-Carlo class distribution: the mean of ``S`` sampled DRBM distributions."""
    _check_samples(S)
    z = pelm.sample(model.pelm, x, S, rng).samples
    lp = drbm.class_log_probs_batch(model.drbm, z)
    return ClassDistribution.from_log_probs(log_sum_exp(lp, axis=0) - math.log(S))


def class_log_probs_batch(
    model: MdrbmModel, X: ArrayLike, S: int, rng: RngStream, row_ids: Optional[Sequence[int]] = None
) -> FloatArray:
    """Row-wise Monte-Carlo class log-probabilities; row ``r`` samples from ``rng.substream(row_ids[r])``."""
    _check_samples(S)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    ids = np.arange(X.shape[0]) if row_ids is None else np.asarray(row_ids)
    out = np.empty((X.shape[0], model.drbm.K))
    chunk = max(1, CHUNK_ROWS // S)
    for start in range(0, X.shape[0], chunk):
        stop = start + chunk
        z = pelm.sample_rows(model.pelm, X[start:stop], S, rng, ids[start:stop])
        lp = drbm.class_log_probs_batch(model.drbm, z.reshape(-1, model.pelm.width)).reshape(z.shape[0], S, -1)
        mixed = log_sum_exp(lp, axis=1) - math.log(S)
        out[start:stop] = mixed - log_sum_exp(mixed, axis=1)[:, None]
    return out


def exact_class_probs(model: MdrbmModel, x: ArrayLike) -> ClassDistribution:
    """Exact mixture over every configuration of the layer (width <= 12)."""
    z = spin_configurations(model.pelm.width)
    log_layer = pelm.log_layer_probability(model.pelm, x, z)
    lp = drbm.class_log_probs_batch(model.drbm, z)
    return ClassDistribution.from_log_probs(log_sum_exp(log_layer[:, None] + lp, axis=0))


def predict(model: MdrbmModel, x: ArrayLike, S: int, rng: RngStream) -> int:
    """Most probable class under the sampled estimate; ties go to the lowest index."""
    return class_probs(model, x, S, rng).argmax()


def importance_weights(
    model: MdrbmModel, batch: Dataset, S: int, rng: RngStream, row_ids: Optional[Sequence[int]] = None
) -> Tuple[FloatArray, FloatArray]:
    """Sample ``S`` layer configurations per datum and their self-normalized weights.

    Returns:
        ``(z, weights)`` with shapes (B, S, width) and (B, S); each row of weights sums to 1.
    """
    _check_samples(S)
    if batch.N == 0:
        raise UsageError("gradient of an empty batch is undefined")
    ids = np.arange(batch.N) if row_ids is None else np.asarray(row_ids)
    z = pelm.sample_rows(model.pelm, batch.X, S, rng, ids)
    lp = drbm.class_log_probs_batch(model.drbm, z.reshape(-1, model.pelm.width)).reshape(batch.N, S, -1)
    log_true = np.einsum("bsk,bk->bs", lp, batch.T)
    log_w = log_true - log_sum_exp(log_true, axis=1)[:, None]
    weights = np.exp(log_w)
    return z, weights / weights.sum(axis=1, keepdims=True)


def sampled_gradients(
    model: MdrbmModel, batch: Dataset, S: int, rng: RngStream, row_ids: Optional[Sequence[int]] = None
) -> DrbmParams:
    """Self-normalized Monte-Carlo estimate of the batch-mean log-likelihood gradient."""
    z, weights = importance_weights(model, batch, S, rng, row_ids)
    if logger.isEnabledFor(logging.DEBUG):
        ess = 1.0 / np.sum(weights**2, axis=1)
        logger.debug(f"sampled gradient: mean effective sample size {ess.mean():.2f} of {S}")
    rows = z.reshape(-1, model.pelm.width)
    targets = np.repeat(batch.T, S, axis=0)
    grads = drbm.weighted_gradients(model.drbm, rows, targets, weights.reshape(-1) / batch.N)
    return DrbmParams.from_dict(grads)


def _posterior_rows(model: MdrbmModel, data: Dataset) -> Tuple[FloatArray, FloatArray]:
    """Enumerated layer configurations and per-datum log-weights ``ln P(t | z) + ln B(z | x)``."""
    z = spin_configurations(model.pelm.width)
    lp_true = drbm.class_log_probs_batch(model.drbm, z) @ data.T.T
    log_layer = np.stack([pelm.log_layer_probability(model.pelm, x, z) for x in data.X], axis=1)
    return z, lp_true + log_layer


def exact_log_likelihood(model: MdrbmModel, data: Dataset) -> float:
    """Mean exact ``ln P(t | x)`` by enumeration of the layer (width <= 12)."""
    if data.N == 0:
        raise UsageError("log-likelihood of an empty dataset is undefined")
    _, log_joint = _posterior_rows(model, data)
    return float(np.mean(log_sum_exp(log_joint, axis=0)))


def exact_gradients(model: MdrbmModel, batch: Dataset) -> DrbmParams:
    """Batch-mean gradient with the posterior ``P(z | t, x)`` summed exactly (width <= 12)."""
    if batch.N == 0:
        raise UsageError("gradient of an empty batch is undefined")
    z, log_joint = _posterior_rows(model, batch)
    posterior = np.exp(log_joint - log_sum_exp(log_joint, axis=0)[None, :])
    rows = np.tile(z, (batch.N, 1))
    targets = np.repeat(batch.T, z.shape[0], axis=0)
    weights = posterior.T.reshape(-1) / batch.N
    return DrbmParams.from_dict(drbm.weighted_gradients(model.drbm, rows, targets, weights))


def sampled_log_likelihood(model: MdrbmModel, data: Dataset, S: int, rng: RngStream) -> float:
    """Monte-Carlo estimate of the mean log-likelihood."""
    lp = class_log_probs_batch(model, data.X, S, rng)
    return float(np.mean(np.sum(lp * data.T, axis=1)))


def accuracy(model: MdrbmModel, data: Dataset, S: int, rng: RngStream) -> float:
    lp = class_log_probs_batch(model, data.X, S, rng)
    return float(np.mean(np.argmax(lp, axis=1) == data.labels))


@dataclass
class TrainResult:
    """Outcome of a training run."""

    model: MdrbmModel
    best_model: MdrbmModel
    best_epoch: int
    history: List[EpochRecord] = field(default_factory=list)


def train(
    model: MdrbmModel,
    data: Dataset,
    config: TrainConfig,
    rng: RngStream,
    sampling: Optional[SampleConfig] = None,
    held_out: Optional[Dataset] = None,
    label: str = "MDRBM",
) -> TrainResult:
    """Ascend the log-likelihood with fresh layer samples for every datum in every epoch.

    Gradients use ``sampling.s_train`` samples per datum; held-out accuracy uses ``s_infer``.
    The frozen layer is checksummed before and after training.
    """
    sampling = sampling or SampleConfig()
    if data.N == 0:
        raise UsageError("cannot train on an empty dataset")
    if data.n != model.pelm.n or data.K != model.drbm.K:
        raise UsageError(
            f"dataset shape (n={data.n}, K={data.K}) does not match model (n={model.pelm.n}, K={model.drbm.K})"
        )
    checksum = model.pelm.checksum()

    def gradient(current: ParamSet, batch: NDArray[np.int64], epoch_stream: RngStream) -> ParamSet:
        m = model.with_drbm(DrbmParams.from_dict(current))
        return sampled_gradients(m, data.subset(batch), sampling.s_train, epoch_stream, row_ids=batch).as_dict()

    objective_stream = rng.substream(0, 3)

    def objective(current: ParamSet) -> float:
        m = model.with_drbm(DrbmParams.from_dict(current))
        return sampled_log_likelihood(m, data, sampling.s_train, objective_stream)

    evaluate: Optional[EvaluateFn] = None
    if held_out is not None:
        evaluate = _held_out_accuracy(model, held_out, sampling.s_infer)

    result = fit(
        model.drbm.as_dict(), gradient, data.N, config, rng, objective=objective, evaluate=evaluate, label=label
    )
    if model.pelm.checksum() != checksum:
        raise NumericError("frozen PELM parameters changed during training")
    return TrainResult(
        model=model.with_drbm(DrbmParams.from_dict(result.params)),
        best_model=model.with_drbm(DrbmParams.from_dict(result.best_params)),
        best_epoch=result.best_epoch,
        history=result.history,
    )


def _held_out_accuracy(model: MdrbmModel, held_out: Dataset, S: int) -> EvaluateFn:
    def evaluate(current: ParamSet, stream: RngStream) -> float:
        return accuracy(model.with_drbm(DrbmParams.from_dict(current)), held_out, S, stream)

    return evaluate
