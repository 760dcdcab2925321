"""Gaussian-Bernoulli RBM used to pretrain the untrained layer.

Energy (weights are not divided by the visible variances)::

    E(z, x) = sum_i x_i^2 / (2 sigma_i^2) - c.x - b0.z - z.(w0 x),   sigma_i^2 = exp(s_i)

so ``z | x`` is the PELM Bernoulli law and ``x_i | z ~ N(sigma_i^2 (c_i + (w0^T z)_i), sigma_i^2)``.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import special

from .config import GbrbmConfig, TrainConfig
from .core_math import (
    MAX_ENUMERATION_UNITS,
    FloatArray,
    ParamSet,
    RngStream,
    init_xavier,
    log_2cosh,
    log_sum_exp,
    spin_configurations,
)
from .errors import CapabilityError, NumericError, UsageError
from .pelm import PelmParams, plus_probability
from .training import EpochRecord, fit

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GbrbmParams:
    """Hidden biases ``b0``, weights ``w0`` (width x n), visible biases ``c`` and log-variances ``s``."""

    b0: FloatArray
    w0: FloatArray
    c: FloatArray
    s: FloatArray

    def __post_init__(self) -> None:
        for name in ("b0", "w0", "c", "s"):
            value = np.array(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(value)):
                raise NumericError(f"GBRBM parameter '{name}' contains non-finite values")
            object.__setattr__(self, name, value)
        if self.w0.shape != (self.b0.shape[0], self.c.shape[0]) or self.s.shape != self.c.shape:
            raise UsageError(
                f"inconsistent GBRBM shapes: b0 {self.b0.shape}, w0 {self.w0.shape}, c {self.c.shape}, s {self.s.shape}"
            )

    @property
    def width(self) -> int:
        return int(self.b0.shape[0])

    @property
    def n(self) -> int:
        return int(self.c.shape[0])

    @property
    def variance(self) -> FloatArray:
        return np.exp(self.s)

    def as_dict(self) -> ParamSet:
        return {"b0": self.b0, "w0": self.w0, "c": self.c, "s": self.s}

    @classmethod
    def from_dict(cls, params: ParamSet) -> "GbrbmParams":
        return cls(b0=params["b0"], w0=params["w0"], c=params["c"], s=params["s"])

    @classmethod
    def initialize(cls, n: int, width: int, rng: RngStream) -> "GbrbmParams":
        """Xavier weights, zero biases and unit variances (matching Z-scored inputs)."""
        return cls(b0=np.zeros(width), w0=init_xavier(n, width, rng), c=np.zeros(n), s=np.zeros(n))


def _check_inputs(params: GbrbmParams, X: ArrayLike) -> FloatArray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.n:
        raise UsageError(f"inputs have {X.shape[1]} features, GBRBM expects {params.n}")
    if not np.all(np.isfinite(X)):
        raise UsageError("GBRBM inputs must be finite")
    return X


def _hidden_potentials(params: GbrbmParams, X: FloatArray) -> FloatArray:
    return X @ params.w0.T + params.b0


def hidden_conditional(params: GbrbmParams, x: ArrayLike) -> FloatArray:
    """``P(z_j = +1 | x)``; independent of ``c`` and ``s``."""
    X = _check_inputs(params, x)
    p = plus_probability(_hidden_potentials(params, X))
    return p[0] if np.ndim(x) == 1 else p


def visible_conditional(params: GbrbmParams, z: ArrayLike) -> Tuple[FloatArray, FloatArray]:
    """Mean and variance vectors of the Gaussian ``x | z``."""
    Z = np.asarray(z, dtype=np.float64)
    if Z.shape[-1] != params.width:
        raise UsageError(f"z has {Z.shape[-1]} units, GBRBM has {params.width}")
    if not np.all((Z == 1.0) | (Z == -1.0)):
        raise UsageError("hidden configurations must contain only -1 and +1")
    variance = params.variance
    mean = variance * (params.c + Z @ params.w0)
    return mean, np.broadcast_to(variance, mean.shape).copy()


def _sufficient_statistics(params: GbrbmParams, X: FloatArray) -> ParamSet:
    """Batch means of ``-dE/d(param)`` with the hidden units Rao-Blackwellized to ``tanh(u)``."""
    h = np.tanh(_hidden_potentials(params, X))
    B = X.shape[0]
    return {
        "b0": h.mean(axis=0),
        "w0": h.T @ X / B,
        "c": X.mean(axis=0),
        # d(-E)/ds_i = x_i^2 exp(-s_i) / 2 through sigma_i^2 = exp(s_i)
        "s": 0.5 * np.mean(X * X, axis=0) * np.exp(-params.s),
    }


def gibbs_sweep(params: GbrbmParams, X: FloatArray, gen: np.random.Generator) -> FloatArray:
    """One sweep: sample ``z | x`` then ``x | z``."""
    p_plus = plus_probability(_hidden_potentials(params, X))
    z = np.where(gen.random(p_plus.shape) < p_plus, 1.0, -1.0)
    mean, variance = visible_conditional(params, z)
    return mean + np.sqrt(variance) * gen.standard_normal(mean.shape)


def cd_update(params: GbrbmParams, batch: ArrayLike, k: int, rng: RngStream) -> GbrbmParams:
    """CD-k estimate of the log-likelihood gradient, shaped like the parameters.

    Chains restart at the data (non-persistent) and run ``k`` full sweeps.
    """
    if k < 1:
        raise UsageError(f"CD needs at least one Gibbs step, got k={k}")
    X = _check_inputs(params, batch)
    if X.shape[0] == 0:
        raise UsageError("CD update on an empty batch")
    gen = rng.generator()
    chain = X
    for _ in range(k):
        chain = gibbs_sweep(params, chain, gen)
    positive = _sufficient_statistics(params, X)
    negative = _sufficient_statistics(params, chain)
    return GbrbmParams.from_dict({name: positive[name] - negative[name] for name in positive})


def _configuration_log_weights(params: GbrbmParams) -> Tuple[FloatArray, FloatArray]:
    """Hidden configurations and their unnormalized log marginal weights (x integrated out)."""
    if params.width > MAX_ENUMERATION_UNITS:
        raise CapabilityError(f"exact GBRBM enumeration needs width <= {MAX_ENUMERATION_UNITS}, got {params.width}")
    z = spin_configurations(params.width)
    variance = params.variance
    field_ = params.c + z @ params.w0
    log_weights = z @ params.b0 + np.sum(0.5 * (LOG_2PI + params.s) + 0.5 * variance * field_**2, axis=1)
    return z, log_weights


def log_partition(params: GbrbmParams) -> float:
    """``ln Z_G`` by enumeration of the hidden layer."""
    _, log_weights = _configuration_log_weights(params)
    return float(log_sum_exp(log_weights))


def exact_log_likelihood(params: GbrbmParams, inputs: ArrayLike) -> float:
    """Mean exact marginal log-likelihood ``ln G(x)`` over ``inputs`` (width <= 12)."""
    X = _check_inputs(params, inputs)
    log_z = log_partition(params)
    u = _hidden_potentials(params, X)
    log_unnormalized = (
        -0.5 * np.sum(X * X * np.exp(-params.s), axis=1) + X @ params.c + np.sum(log_2cosh(u), axis=1)
    )
    return float(np.mean(log_unnormalized) - log_z)


def sample_model(params: GbrbmParams, N: int, rng: RngStream) -> FloatArray:
    """Exact ancestral samples of ``x``: draw ``z`` from its enumerated marginal, then ``x | z``."""
    if N < 1:
        raise UsageError(f"number of samples must be at least 1, got {N}")
    z, log_weights = _configuration_log_weights(params)
    probs = special.softmax(log_weights)
    gen = rng.generator()
    picks = gen.choice(z.shape[0], size=N, p=probs)
    mean, variance = visible_conditional(params, z[picks])
    return mean + np.sqrt(variance) * gen.standard_normal(mean.shape)


def reconstruction_error(params: GbrbmParams, inputs: ArrayLike) -> float:
    """Mean squared error of the mean-field reconstruction ``E[x | z = tanh(u(x))]``."""
    X = _check_inputs(params, inputs)
    h = np.tanh(_hidden_potentials(params, X))
    recon = params.variance * (params.c + h @ params.w0)
    return float(np.mean((X - recon) ** 2))


@dataclass
class GbrbmTrainResult:
    """Trained parameters plus per-epoch objective and reconstruction error."""

    params: GbrbmParams
    history: List[EpochRecord] = field(default_factory=list)
    reconstruction_errors: List[float] = field(default_factory=list)
    objective_name: str = "log_likelihood"


def train(
    params: GbrbmParams,
    inputs: ArrayLike,
    config: GbrbmConfig,
    rng: RngStream,
    batch_size: Optional[int] = None,
    label: str = "GBRBM",
) -> GbrbmTrainResult:
    """Unsupervised mini-batch Adam ascent driven by CD-k estimates.

    The per-epoch objective is the exact log-likelihood when the hidden layer is small enough
    to enumerate, otherwise the negated reconstruction error.
    """
    X = _check_inputs(params, inputs)
    if X.shape[0] == 0:
        raise UsageError("cannot pretrain on an empty input set")
    train_config = TrainConfig(
        epochs=config.epochs,
        batch_size=config.batch_size or batch_size or 100,
        optimizer=config.optimizer,
    )
    exact = params.width <= MAX_ENUMERATION_UNITS
    errors: List[float] = []

    def gradient(current: ParamSet, batch: NDArray[np.int64], epoch_stream: RngStream) -> ParamSet:
        stream = epoch_stream.substream(int(batch[0]))
        return cd_update(GbrbmParams.from_dict(current), X[batch], config.k, stream).as_dict()

    def objective(current: ParamSet) -> float:
        p = GbrbmParams.from_dict(current)
        errors.append(reconstruction_error(p, X))
        return exact_log_likelihood(p, X) if exact else -errors[-1]

    result = fit(params.as_dict(), gradient, X.shape[0], train_config, rng, objective=objective, label=label)
    return GbrbmTrainResult(
        params=GbrbmParams.from_dict(result.params),
        history=result.history,
        reconstruction_errors=errors,
        objective_name="log_likelihood" if exact else "negative_reconstruction_error",
    )


def export_pelm(params: GbrbmParams, source: str = "") -> PelmParams:
    """Seal ``b0`` and ``w0`` into a frozen PELM layer tagged ``gbrbm``; ``c`` and ``s`` are dropped."""
    logger.info(f"Exporting GBRBM hidden layer ({params.width} x {params.n}) as PELM parameters, run '{source}'")
    return PelmParams(b0=params.b0, w0=params.w0, provenance="gbrbm", source=source)
