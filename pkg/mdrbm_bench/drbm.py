"""Discriminative RBM with {-1, +1} hidden units: exact inference, likelihood, gradients and training.

Marginalizing the hidden layer turns the class probability into a softmax over per-class free
energies ``F_k(x) = b2_k + sum_j log(2 cosh(lambda_kj(x)))`` with
``lambda_kj(x) = b1_j + w2_kj + (w1 x)_j``.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .config import TrainConfig
from .core_math import (
    FloatArray,
    ParamSet,
    RngStream,
    init_xavier,
    log_2cosh,
    log_sum_exp,
    spin_configurations,
)
from .data import Dataset
from .errors import NumericError, UsageError
from .training import EpochRecord, EvaluateFn, fit

logger = logging.getLogger(__name__)

# Upper bound on rows * K * H elements materialized at once during batched inference.
CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class DrbmParams:
    """Trainable parameters: hidden biases ``b1`` (H), output biases ``b2`` (K),
    input-hidden weights ``w1`` (H x n) and hidden-output weights ``w2`` (K x H)."""

    b1: FloatArray
    b2: FloatArray
    w1: FloatArray
    w2: FloatArray

    def __post_init__(self) -> None:
        for name in ("b1", "b2", "w1", "w2"):
            value = np.array(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(value)):
                raise NumericError(f"DRBM parameter '{name}' contains non-finite values")
            object.__setattr__(self, name, value)
        H, K = self.b1.shape[0], self.b2.shape[0]
        if self.b1.ndim != 1 or self.b2.ndim != 1 or self.w1.ndim != 2 or self.w2.shape != (K, H):
            raise UsageError(f"inconsistent DRBM shapes: b1 {self.b1.shape}, b2 {self.b2.shape}, w2 {self.w2.shape}")
        if self.w1.shape[0] != H:
            raise UsageError(f"w1 has {self.w1.shape[0]} rows, expected H = {H}")

    @property
    def n(self) -> int:
        return int(self.w1.shape[1])

    @property
    def H(self) -> int:
        return int(self.b1.shape[0])

    @property
    def K(self) -> int:
        return int(self.b2.shape[0])

    def as_dict(self) -> ParamSet:
        return {"b1": self.b1, "b2": self.b2, "w1": self.w1, "w2": self.w2}

    @classmethod
    def from_dict(cls, params: ParamSet) -> "DrbmParams":
        return cls(b1=params["b1"], b2=params["b2"], w1=params["w1"], w2=params["w2"])

    @classmethod
    def zeros(cls, n: int, H: int, K: int) -> "DrbmParams":
        return cls(b1=np.zeros(H), b2=np.zeros(K), w1=np.zeros((H, n)), w2=np.zeros((K, H)))

    @classmethod
    def initialize(cls, n: int, H: int, K: int, rng: RngStream) -> "DrbmParams":
        """Xavier weights (fans (n, H) and (H, K)) with zero biases."""
        return cls(
            b1=np.zeros(H),
            b2=np.zeros(K),
            w1=init_xavier(n, H, rng.substream(0)),
            w2=init_xavier(H, K, rng.substream(1)),
        )


@dataclass(frozen=True)
class ClassDistribution:
    """A distribution over K classes held both as log-probabilities and probabilities."""

    log_probs: FloatArray
    probs: FloatArray

    @classmethod
    def from_log_probs(cls, log_probs: ArrayLike) -> "ClassDistribution":
        lp = np.asarray(log_probs, dtype=np.float64)
        lp = lp - log_sum_exp(lp)
        return cls(log_probs=lp, probs=np.exp(lp))

    def argmax(self) -> int:
        return int(np.argmax(self.log_probs))


def _as_matrix(params: DrbmParams, X: ArrayLike) -> FloatArray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.n:
        raise UsageError(f"inputs have shape {X.shape}, expected (*, {params.n})")
    return X


def _potentials(params: DrbmParams, X: FloatArray) -> FloatArray:
    """``lambda[mu, k, j]`` for a batch; ``w1 X`` is computed once per row, not K times."""
    hidden_input = X @ params.w1.T + params.b1
    return hidden_input[:, None, :] + params.w2[None, :, :]


def _log_probs_from_potentials(params: DrbmParams, lam: FloatArray) -> FloatArray:
    free_energy = params.b2[None, :] + np.sum(log_2cosh(lam), axis=2)
    return free_energy - log_sum_exp(free_energy, axis=1)[:, None]


def class_potentials(params: DrbmParams, x: ArrayLike) -> FloatArray:
    """Return the K x H matrix of hidden-unit potentials for input ``x``."""
    return _potentials(params, _as_matrix(params, x))[0]


def class_log_probs(params: DrbmParams, x: ArrayLike) -> ClassDistribution:
    """Exact class distribution ``P(t | x)`` for one input."""
    X = _as_matrix(params, x)
    lp = _log_probs_from_potentials(params, _potentials(params, X))[0]
    return ClassDistribution(log_probs=lp, probs=np.exp(lp))


def class_log_probs_batch(params: DrbmParams, X: ArrayLike) -> FloatArray:
    """Row-wise class log-probabilities for a batch of inputs, computed in bounded-memory chunks."""
    X = _as_matrix(params, X)
    chunk = max(1, CHUNK_ELEMENTS // (params.K * params.H))
    out = np.empty((X.shape[0], params.K))
    for start in range(0, X.shape[0], chunk):
        rows = X[start : start + chunk]
        out[start : start + chunk] = _log_probs_from_potentials(params, _potentials(params, rows))
    return out


def predict(params: DrbmParams, x: ArrayLike) -> int:
    """Most probable class; ties go to the lowest index."""
    return class_log_probs(params, x).argmax()


def log_likelihood(params: DrbmParams, data: Dataset) -> float:
    """Mean log-probability of the true class over ``data``."""
    if data.N == 0:
        raise UsageError("log-likelihood of an empty dataset is undefined")
    lp = class_log_probs_batch(params, data.X)
    return float(np.mean(np.sum(lp * data.T, axis=1)))


def weighted_gradients(params: DrbmParams, X: FloatArray, T: FloatArray, weights: FloatArray) -> ParamSet:
    """Gradient of ``sum_r weights[r] * ln P(t_r | x_r)`` with respect to every parameter block.

    With ``r = T - P`` the responsibilities, ``d/d lambda_kj = r_k tanh(lambda_kj)``; the
    hidden-side statistics fold the K classes before touching ``w1``.
    """
    lam = _potentials(params, X)
    lp = _log_probs_from_potentials(params, lam)
    resp = (T - np.exp(lp)) * weights[:, None]
    tanh_lam = np.tanh(lam)
    hidden = np.einsum("rk,rkj->rj", resp, tanh_lam)
    return {
        "b1": hidden.sum(axis=0),
        "b2": resp.sum(axis=0),
        "w1": hidden.T @ X,
        "w2": np.einsum("rk,rkj->kj", resp, tanh_lam),
    }


def gradients(params: DrbmParams, batch: Dataset) -> DrbmParams:
    """Batch-mean gradient of the log-likelihood, shaped like the parameters."""
    if batch.N == 0:
        raise UsageError("gradient of an empty batch is undefined")
    X = _as_matrix(params, batch.X)
    weights = np.full(batch.N, 1.0 / batch.N)
    return DrbmParams.from_dict(weighted_gradients(params, X, batch.T, weights))


def brute_force_log_probs(params: DrbmParams, x: ArrayLike) -> FloatArray:
    """Class log-probabilities by explicit enumeration of every hidden configuration (H <= 12)."""
    X = _as_matrix(params, x)
    h = spin_configurations(params.H)
    hidden_field = h @ (params.b1 + params.w1 @ X[0])
    # -E(1_k, h) for every (k, h)
    neg_energy = params.b2[:, None] + hidden_field[None, :] + params.w2 @ h.T
    joint = log_sum_exp(neg_energy, axis=1)
    return np.asarray(joint - log_sum_exp(joint), dtype=np.float64)


def _held_out_accuracy(held_out: Dataset) -> EvaluateFn:
    def evaluate(current: ParamSet, _: RngStream) -> float:
        lp = class_log_probs_batch(DrbmParams.from_dict(current), held_out.X)
        return float(np.mean(np.argmax(lp, axis=1) == held_out.labels))

    return evaluate


@dataclass
class TrainResult:
    """Outcome of a training run."""

    params: DrbmParams
    best_params: DrbmParams
    best_epoch: int
    history: List[EpochRecord] = field(default_factory=list)


def train(
    params: DrbmParams,
    data: Dataset,
    config: TrainConfig,
    rng: RngStream,
    held_out: Optional[Dataset] = None,
    label: str = "DRBM",
) -> TrainResult:
    """Shuffled mini-batch Adam ascent on the log-likelihood.

    Args:
        params: Initial parameters.
        data: Training set.
        config: Training settings.
        rng: Run stream; batches are reshuffled every epoch.
        held_out: Optional set whose accuracy selects the best parameters.
        label: Name used in log messages.
    """
    if data.N == 0:
        raise UsageError("cannot train on an empty dataset")
    if data.n != params.n or data.K != params.K:
        raise UsageError(f"dataset shape (n={data.n}, K={data.K}) does not match model (n={params.n}, K={params.K})")

    def gradient(current: ParamSet, batch: NDArray[np.int64], _: RngStream) -> ParamSet:
        p = DrbmParams.from_dict(current)
        return weighted_gradients(p, data.X[batch], data.T[batch], np.full(batch.shape[0], 1.0 / batch.shape[0]))

    def objective(current: ParamSet) -> float:
        return log_likelihood(DrbmParams.from_dict(current), data)

    evaluate: Optional[EvaluateFn] = None
    if held_out is not None:
        evaluate = _held_out_accuracy(held_out)

    result = fit(params.as_dict(), gradient, data.N, config, rng, objective=objective, evaluate=evaluate, label=label)
    return TrainResult(
        params=DrbmParams.from_dict(result.params),
        best_params=DrbmParams.from_dict(result.best_params),
        best_epoch=result.best_epoch,
        history=result.history,
    )
