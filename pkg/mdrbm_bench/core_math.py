"""Numeric primitives shared by every model: stable reductions, initializers, seeded streams and Adam."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, Union, overload

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import special

from .errors import CapabilityError, NumericError, UsageError

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
ParamSet = Dict[str, FloatArray]

# Largest number of binary units any enumeration oracle will expand.
MAX_ENUMERATION_UNITS = 12


@overload
def log_sum_exp(v: ArrayLike, axis: None = None) -> float: ...


@overload
def log_sum_exp(v: ArrayLike, axis: int) -> FloatArray: ...


def log_sum_exp(v: ArrayLike, axis: Optional[int] = None) -> Union[float, FloatArray]:
    """Return ``ln sum(exp(v))`` computed with a max shift.

    Args:
        v: Values to reduce. Must be nonempty and finite.
        axis: Axis to reduce over; ``None`` reduces everything to a float.

    Returns:
        The reduced value (a float when ``axis`` is None).
    """
    values = np.asarray(v, dtype=np.float64)
    if values.size == 0:
        raise UsageError("log_sum_exp requires a nonempty vector")
    if not np.all(np.isfinite(values)):
        raise NumericError("log_sum_exp received non-finite entries")
    result = special.logsumexp(values, axis=axis)
    if axis is None:
        return float(result)
    return np.asarray(result, dtype=np.float64)


def log_2cosh(lam: ArrayLike) -> Union[float, FloatArray]:
    """Return ``ln(2 cosh(lam))`` elementwise as ``|lam| + ln(1 + exp(-2|lam|))``."""
    a = np.abs(np.asarray(lam, dtype=np.float64))
    out = a + np.log1p(np.exp(-2.0 * a))
    if out.ndim == 0:
        return float(out)
    return out


def spin_configurations(units: int) -> FloatArray:
    """Return every configuration of ``units`` spins in {-1, +1} as rows of a ``2**units x units`` matrix."""
    if units < 0:
        raise UsageError(f"units must be nonnegative, got {units}")
    if units > MAX_ENUMERATION_UNITS:
        raise CapabilityError(f"enumeration over {units} binary units exceeds the limit of {MAX_ENUMERATION_UNITS}")
    codes = np.arange(2**units)[:, None] >> np.arange(units)[None, :]
    return ((codes & 1) * 2 - 1).astype(np.float64)


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream addressed by a seed and a path of stream ids.

    Identical ``(seed, stream_id)`` pairs always produce the same sequence; distinct paths
    map to statistically independent ``SeedSequence`` children, so per-datum work can run
    in any order and still be deterministic.
    """

    seed: int
    stream_id: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.seed < 0 or any(i < 0 for i in self.stream_id):
            raise UsageError("seed and stream ids must be nonnegative")

    def substream(self, *ids: int) -> "RngStream":
        """Derive an independent child stream."""
        return RngStream(self.seed, self.stream_id + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        """Create a fresh generator positioned at the start of this stream."""
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream_id)
        return np.random.Generator(np.random.PCG64(sequence))


def _check_fans(*fans: int) -> None:
    for fan in fans:
        if fan < 1:
            raise UsageError(f"layer dimensions must be at least 1, got {fan}")


def init_xavier(fan_in: int, fan_out: int, rng: RngStream) -> FloatArray:
    """Uniform Xavier initialization, shaped ``fan_out x fan_in``."""
    _check_fans(fan_in, fan_out)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.generator().uniform(-bound, bound, size=(fan_out, fan_in))


def init_he(fan_in: int, fan_out: int, rng: RngStream) -> FloatArray:
    """Gaussian He initialization (variance ``2 / fan_in``), shaped ``fan_out x fan_in``."""
    _check_fans(fan_in, fan_out)
    return rng.generator().normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))


def init_gaussian_scaled(rows: int, n: int, rng: RngStream) -> FloatArray:
    """Gaussian entries with standard deviation ``1 / sqrt(n)``, shaped ``rows x n``."""
    _check_fans(rows, n)
    return rng.generator().normal(0.0, 1.0 / np.sqrt(n), size=(rows, n))


@dataclass
class AdamState:
    """Moments and hyperparameters of one Adam optimizer instance."""

    rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: ParamSet = field(default_factory=dict)
    second_moment: ParamSet = field(default_factory=dict)


def adam_ascend(state: AdamState, params: ParamSet, grads: ParamSet) -> ParamSet:
    """Apply one bias-corrected Adam step in the ascent direction.

    Args:
        state: Optimizer state; its moments and step count are updated in place.
        params: Current parameters by name. Not modified.
        grads: Gradients of the objective to maximize, keyed like ``params``.

    Returns:
        A new parameter set.
    """
    if set(params) != set(grads):
        raise UsageError(f"gradient blocks {sorted(grads)} do not match parameter blocks {sorted(params)}")
    for name, value in params.items():
        if np.shape(grads[name]) != np.shape(value):
            raise UsageError(f"gradient for '{name}' has shape {np.shape(grads[name])}, expected {np.shape(value)}")
        if not np.all(np.isfinite(grads[name])):
            raise NumericError(f"non-finite gradient for '{name}' at step {state.step_count + 1}")

    state.step_count += 1
    bias1 = 1.0 - state.beta1**state.step_count
    bias2 = 1.0 - state.beta2**state.step_count

    updated: ParamSet = {}
    for name, value in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None or v is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / bias1
        v_hat = v / bias2
        updated[name] = value + state.rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return updated


def check_finite(params: ParamSet, where: str) -> None:
    """Raise NumericError if any block of ``params`` holds NaN or Inf."""
    for name, value in params.items():
        if not np.all(np.isfinite(value)):
            raise NumericError(f"{where}: parameter block '{name}' contains non-finite values")
