"""Comparison models: the deterministic DRBM+ELM composition and the four-layered feed-forward network (4NN)."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import drbm, pelm
from .config import TrainConfig
from .core_math import FloatArray, ParamSet, RngStream, init_he, log_sum_exp
from .data import Dataset
from .drbm import ClassDistribution, DrbmParams
from .errors import NumericError, UsageError
from .pelm import PelmParams
from .training import EpochRecord, EvaluateFn, fit

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ElmDrbmModel:
    """DRBM fed by the deterministic output ``tanh(u(x))`` of a frozen layer."""

    pelm: PelmParams
    drbm: DrbmParams

    def __post_init__(self) -> None:
        if self.drbm.n != self.pelm.width:
            raise UsageError(f"DRBM input width {self.drbm.n} does not match ELM width {self.pelm.width}")
        if not self.pelm.frozen:
            raise UsageError("ELM parameters must be frozen")

    @classmethod
    def initialize(cls, theta0: PelmParams, H: int, K: int, rng: RngStream) -> "ElmDrbmModel":
        return cls(pelm=theta0, drbm=DrbmParams.initialize(theta0.width, H, K, rng))

    def with_drbm(self, params: DrbmParams) -> "ElmDrbmModel":
        return ElmDrbmModel(pelm=self.pelm, drbm=params)

    def transform(self, data: Dataset) -> Dataset:
        """Replace the inputs of ``data`` by their deterministic layer outputs."""
        return data.with_inputs(pelm.deterministic(self.pelm, data.X))


def elm_drbm_infer(model: ElmDrbmModel, x: ArrayLike) -> ClassDistribution:
    """Class distribution of the DRBM evaluated at ``z = tanh(u(x))``."""
    z = pelm.deterministic(model.pelm, np.asarray(x, dtype=np.float64).reshape(-1))
    return drbm.class_log_probs(model.drbm, z)


def elm_drbm_infer_batch(model: ElmDrbmModel, X: ArrayLike) -> FloatArray:
    return drbm.class_log_probs_batch(model.drbm, pelm.deterministic(model.pelm, np.atleast_2d(X)))


@dataclass
class ElmDrbmTrainResult:
    model: ElmDrbmModel
    best_model: ElmDrbmModel
    best_epoch: int
    history: List[EpochRecord] = field(default_factory=list)


def elm_drbm_train(
    model: ElmDrbmModel,
    data: Dataset,
    config: TrainConfig,
    rng: RngStream,
    held_out: Optional[Dataset] = None,
    label: str = "DRBM+ELM",
) -> ElmDrbmTrainResult:
    """Train the DRBM on layer outputs computed once per dataset; the layer itself is never touched."""
    if data.N == 0:
        raise UsageError("cannot train on an empty dataset")
    if data.n != model.pelm.n:
        raise UsageError(f"dataset has {data.n} features, ELM layer expects {model.pelm.n}")
    checksum = model.pelm.checksum()
    transformed = model.transform(data)
    held_out_transformed = model.transform(held_out) if held_out is not None else None
    result = drbm.train(model.drbm, transformed, config, rng, held_out=held_out_transformed, label=label)
    if model.pelm.checksum() != checksum:
        raise NumericError("frozen ELM parameters changed during training")
    return ElmDrbmTrainResult(
        model=model.with_drbm(result.params),
        best_model=model.with_drbm(result.best_params),
        best_epoch=result.best_epoch,
        history=result.history,
    )


@dataclass(frozen=True)
class MlpParams:
    """Weights and biases of an ``n -> h1 -> h2 -> K`` rectifier network with a softmax head."""

    w1: FloatArray
    b1: FloatArray
    w2: FloatArray
    b2: FloatArray
    w3: FloatArray
    b3: FloatArray

    def __post_init__(self) -> None:
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            value = np.array(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(value)):
                raise NumericError(f"4NN parameter '{name}' contains non-finite values")
            object.__setattr__(self, name, value)
        chain = [
            (self.w1, self.b1, None),
            (self.w2, self.b2, self.w1.shape[0]),
            (self.w3, self.b3, self.w2.shape[0]),
        ]
        for i, (w, b, fan_in) in enumerate(chain, start=1):
            if w.ndim != 2 or b.shape != (w.shape[0],) or (fan_in is not None and w.shape[1] != fan_in):
                raise UsageError(f"4NN layer {i} has inconsistent shapes: w{i} {w.shape}, b{i} {b.shape}")

    @property
    def n(self) -> int:
        return int(self.w1.shape[1])

    @property
    def K(self) -> int:
        return int(self.w3.shape[0])

    def as_dict(self) -> ParamSet:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2, "w3": self.w3, "b3": self.b3}

    @classmethod
    def from_dict(cls, params: ParamSet) -> "MlpParams":
        return cls(**{name: params[name] for name in ("w1", "b1", "w2", "b2", "w3", "b3")})

    @classmethod
    def initialize(cls, n: int, h1: int, h2: int, K: int, rng: RngStream) -> "MlpParams":
        """He-initialized weights with zero biases."""
        return cls(
            w1=init_he(n, h1, rng.substream(0)),
            b1=np.zeros(h1),
            w2=init_he(h1, h2, rng.substream(1)),
            b2=np.zeros(h2),
            w3=init_he(h2, K, rng.substream(2)),
            b3=np.zeros(K),
        )


def _mlp_inputs(params: MlpParams, X: ArrayLike) -> FloatArray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.ndim != 2 or X.shape[1] != params.n:
        raise UsageError(f"inputs have shape {X.shape}, expected (*, {params.n})")
    return X


def _mlp_pass(params: MlpParams, X: FloatArray) -> List[FloatArray]:
    """Pre-activations of both hidden layers and the output log-probabilities."""
    a1 = X @ params.w1.T + params.b1
    a2 = np.maximum(a1, 0.0) @ params.w2.T + params.b2
    logits = np.maximum(a2, 0.0) @ params.w3.T + params.b3
    return [a1, a2, logits - log_sum_exp(logits, axis=1)[:, None]]


def mlp_forward(params: MlpParams, x: ArrayLike) -> ClassDistribution:
    """Class distribution for a single input."""
    lp = _mlp_pass(params, _mlp_inputs(params, x))[2][0]
    return ClassDistribution(log_probs=lp, probs=np.exp(lp))


def mlp_forward_batch(params: MlpParams, X: ArrayLike) -> FloatArray:
    return _mlp_pass(params, _mlp_inputs(params, X))[2]


def mlp_log_likelihood(params: MlpParams, data: Dataset) -> float:
    if data.N == 0:
        raise UsageError("log-likelihood of an empty dataset is undefined")
    return float(np.mean(np.sum(mlp_forward_batch(params, data.X) * data.T, axis=1)))


def mlp_gradients(params: MlpParams, batch: Dataset) -> MlpParams:
    """Backpropagated gradient of the batch-mean log-likelihood (negated cross-entropy)."""
    if batch.N == 0:
        raise UsageError("gradient of an empty batch is undefined")
    X = _mlp_inputs(params, batch.X)
    a1, a2, lp = _mlp_pass(params, X)
    h1, h2 = np.maximum(a1, 0.0), np.maximum(a2, 0.0)
    d3 = (batch.T - np.exp(lp)) / batch.N
    d2 = (d3 @ params.w3) * (a2 > 0)
    d1 = (d2 @ params.w2) * (a1 > 0)
    return MlpParams(
        w1=d1.T @ X,
        b1=d1.sum(axis=0),
        w2=d2.T @ h1,
        b2=d2.sum(axis=0),
        w3=d3.T @ h2,
        b3=d3.sum(axis=0),
    )


@dataclass
class MlpTrainResult:
    params: MlpParams
    best_params: MlpParams
    best_epoch: int
    history: List[EpochRecord] = field(default_factory=list)


def mlp_train(
    params: MlpParams,
    data: Dataset,
    config: TrainConfig,
    rng: RngStream,
    held_out: Optional[Dataset] = None,
    label: str = "4NN",
) -> MlpTrainResult:
    """Mini-batch Adam on the mean cross-entropy, through the shared ascent loop."""
    if data.N == 0:
        raise UsageError("cannot train on an empty dataset")
    if data.n != params.n or data.K != params.K:
        raise UsageError(f"dataset shape (n={data.n}, K={data.K}) does not match model (n={params.n}, K={params.K})")

    def gradient(current: ParamSet, batch: NDArray[np.int64], _: RngStream) -> ParamSet:
        return mlp_gradients(MlpParams.from_dict(current), data.subset(batch)).as_dict()

    def objective(current: ParamSet) -> float:
        return mlp_log_likelihood(MlpParams.from_dict(current), data)

    evaluate: Optional[EvaluateFn] = None
    if held_out is not None:
        evaluate = _mlp_held_out_accuracy(held_out)

    result = fit(params.as_dict(), gradient, data.N, config, rng, objective=objective, evaluate=evaluate, label=label)
    return MlpTrainResult(
        params=MlpParams.from_dict(result.params),
        best_params=MlpParams.from_dict(result.best_params),
        best_epoch=result.best_epoch,
        history=result.history,
    )


def _mlp_held_out_accuracy(held_out: Dataset) -> EvaluateFn:
    def evaluate(current: ParamSet, _: RngStream) -> float:
        lp = mlp_forward_batch(MlpParams.from_dict(current), held_out.X)
        return float(np.mean(np.argmax(lp, axis=1) == held_out.labels))

    return evaluate
