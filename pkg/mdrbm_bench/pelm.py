"""Untrained probabilistic-ELM layer: a frozen Bernoulli layer over {-1, +1} units.

Each unit is independent given the input, with ``P(z_j = +1 | x) = 1 / (1 + exp(-2 u_j(x)))``
and ``u(x) = b0 + w0 x``. The deterministic mode returns ``tanh(u(x))``, the mean of that law.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy import special

from .core_math import FloatArray, RngStream, log_2cosh
from .errors import NumericError, UsageError

logger = logging.getLogger(__name__)

Provenance = Literal["random", "gbrbm", "manual"]


@dataclass(frozen=True)
class PelmParams:
    """Sealed parameters ``b0`` (width) and ``w0`` (width x n) of the untrained layer.

    The arrays are copied and marked read-only on construction; ``checksum`` lets callers
    verify that nothing touched them.
    """

    b0: FloatArray
    w0: FloatArray
    provenance: Provenance = "manual"
    source: str = ""

    def __post_init__(self) -> None:
        b0 = np.array(self.b0, dtype=np.float64)
        w0 = np.array(self.w0, dtype=np.float64)
        if b0.ndim != 1 or w0.ndim != 2 or w0.shape[0] != b0.shape[0]:
            raise UsageError(f"inconsistent PELM shapes: b0 {b0.shape}, w0 {w0.shape}")
        if not (np.all(np.isfinite(b0)) and np.all(np.isfinite(w0))):
            raise NumericError("PELM parameters contain non-finite values")
        b0.flags.writeable = False
        w0.flags.writeable = False
        object.__setattr__(self, "b0", b0)
        object.__setattr__(self, "w0", w0)

    @property
    def frozen(self) -> bool:
        return not (self.b0.flags.writeable or self.w0.flags.writeable)

    @property
    def width(self) -> int:
        return int(self.b0.shape[0])

    @property
    def n(self) -> int:
        return int(self.w0.shape[1])

    def checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.b0.tobytes())
        digest.update(self.w0.tobytes())
        return digest.hexdigest()


@dataclass(frozen=True)
class PelmSampleBatch:
    """``S`` sampled configurations (S x width, entries exactly -1 or +1) for one input."""

    samples: FloatArray
    source_id: Optional[int]
    S: int


def _as_inputs(theta0: PelmParams, x: ArrayLike) -> FloatArray:
    X = np.asarray(x, dtype=np.float64)
    if X.shape[-1] != theta0.n or X.ndim > 2:
        raise UsageError(f"inputs have shape {X.shape}, expected (*, {theta0.n})")
    if not np.all(np.isfinite(X)):
        raise UsageError("PELM inputs must be finite")
    return X


def potentials(theta0: PelmParams, x: ArrayLike) -> FloatArray:
    """Feed-forward signal ``u(x) = b0 + w0 x`` (row-wise for a batch)."""
    X = _as_inputs(theta0, x)
    return np.asarray(X @ theta0.w0.T + theta0.b0, dtype=np.float64)


def plus_probability(u: ArrayLike) -> FloatArray:
    """``P(z = +1)`` for potentials ``u``; the factor 2 comes from the {-1, +1} support."""
    return np.asarray(special.expit(2.0 * np.asarray(u, dtype=np.float64)), dtype=np.float64)


def _draw(p_plus: FloatArray, S: int, gen: np.random.Generator) -> FloatArray:
    uniform = gen.random((S, p_plus.shape[-1]))
    return np.where(uniform < p_plus, 1.0, -1.0)


def sample(
    theta0: PelmParams, x: ArrayLike, S: int, rng: RngStream, source_id: Optional[int] = None
) -> PelmSampleBatch:
    """Draw ``S`` independent configurations of the layer for a single input."""
    if S < 1:
        raise UsageError(f"number of samples must be at least 1, got {S}")
    u = potentials(theta0, np.asarray(x, dtype=np.float64).reshape(-1))
    return PelmSampleBatch(samples=_draw(plus_probability(u), S, rng.generator()), source_id=source_id, S=S)


def sample_rows(theta0: PelmParams, X: ArrayLike, S: int, rng: RngStream, row_ids: Sequence[int]) -> FloatArray:
    """Sample ``S`` configurations for every row of ``X``; returns an (N, S, width) array.

    Row ``r`` draws from ``rng.substream(row_ids[r])`` so results do not depend on how
    rows are grouped into batches.
    """
    if S < 1:
        raise UsageError(f"number of samples must be at least 1, got {S}")
    p_plus = plus_probability(potentials(theta0, np.atleast_2d(X)))
    if p_plus.shape[0] != len(row_ids):
        raise UsageError(f"{p_plus.shape[0]} rows but {len(row_ids)} row ids")
    out = np.empty((p_plus.shape[0], S, theta0.width))
    for r, row_id in enumerate(row_ids):
        out[r] = _draw(p_plus[r], S, rng.substream(int(row_id)).generator())
    return out


def deterministic(theta0: PelmParams, x: ArrayLike) -> FloatArray:
    """Non-probabilistic ELM output ``tanh(u(x))``."""
    return np.tanh(potentials(theta0, x))


def log_layer_probability(theta0: PelmParams, x: ArrayLike, z: ArrayLike) -> FloatArray:
    """``ln B(z | x)`` for configurations ``z`` (rows) of a single input."""
    u = potentials(theta0, np.asarray(x, dtype=np.float64).reshape(-1))
    Z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return np.asarray(Z @ u - np.sum(log_2cosh(u)), dtype=np.float64)
