"""Mini-batch Adam ascent loop shared by every trainable model."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional

import numpy as np
from numpy.typing import NDArray

from .config import AdamConfig, TrainConfig
from .core_math import AdamState, ParamSet, RngStream, adam_ascend, check_finite

logger = logging.getLogger(__name__)

GradientFn = Callable[[ParamSet, NDArray[np.int64], RngStream], ParamSet]
ObjectiveFn = Callable[[ParamSet], float]
EvaluateFn = Callable[[ParamSet, RngStream], float]


@dataclass
class EpochRecord:
    """Summary of one training epoch."""

    epoch: int
    objective: Optional[float] = None
    held_out_accuracy: Optional[float] = None


@dataclass
class FitResult:
    """Final and best parameters plus the per-epoch history."""

    params: ParamSet
    best_params: ParamSet
    best_epoch: int
    history: List[EpochRecord] = field(default_factory=list)

    def history_dicts(self) -> List[Dict[str, Optional[float]]]:
        return [
            {"epoch": r.epoch, "objective": r.objective, "held_out_accuracy": r.held_out_accuracy}
            for r in self.history
        ]


def adam_state(config: AdamConfig) -> AdamState:
    """Create a fresh optimizer from its configuration."""
    return AdamState(rate=config.learning_rate, beta1=config.beta1, beta2=config.beta2, epsilon=config.epsilon)


def effective_batch_size(batch_size: int, n_data: int, label: str) -> int:
    """Clamp the batch size to the dataset size, warning when it had to be reduced."""
    if batch_size > n_data:
        logger.warning(f"{label}: batch size {batch_size} exceeds {n_data} training items, clamping")
        return n_data
    return batch_size


def iterate_minibatches(n_data: int, batch_size: int, rng: RngStream) -> Iterator[NDArray[np.int64]]:
    """Yield shuffled index batches covering ``range(n_data)`` once."""
    order = rng.generator().permutation(n_data)
    for start in range(0, n_data, batch_size):
        yield order[start : start + batch_size]


def fit(
    params: ParamSet,
    gradient: GradientFn,
    n_data: int,
    config: TrainConfig,
    rng: RngStream,
    objective: Optional[ObjectiveFn] = None,
    evaluate: Optional[EvaluateFn] = None,
    label: str = "model",
) -> FitResult:
    """Maximize an objective by shuffled mini-batch Adam ascent.

    Args:
        params: Initial parameters. Not modified.
        gradient: Called as ``gradient(params, batch_indices, epoch_stream)``; returns the
            batch-mean gradient of the objective. ``epoch_stream`` is shared by every batch
            of an epoch so per-datum substreams do not depend on the batch partition.
        n_data: Number of training items.
        config: Epochs, batch size and optimizer settings.
        rng: Root stream of this run.
        objective: Optional full-data objective recorded each epoch.
        evaluate: Optional held-out accuracy used for best-model selection.
        label: Name used in log messages.

    Returns:
        Final parameters, the parameters with the best held-out accuracy (the final ones when
        no evaluator is given), and the history.
    """
    current = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    best = {k: v.copy() for k, v in current.items()}
    best_epoch = 0
    best_accuracy = -np.inf
    history: List[EpochRecord] = []

    if config.epochs == 0:
        return FitResult(params=current, best_params=best, best_epoch=0, history=history)

    batch_size = effective_batch_size(config.batch_size, n_data, label)
    state = adam_state(config.optimizer)
    logger.info(f"Training {label}: {config.epochs} epochs, {n_data} items, batch size {batch_size}")

    for epoch in range(1, config.epochs + 1):
        epoch_stream = rng.substream(epoch, 1)
        for batch in iterate_minibatches(n_data, batch_size, rng.substream(epoch, 0)):
            grads = gradient(current, batch, epoch_stream)
            current = adam_ascend(state, current, grads)
        check_finite(current, f"{label} epoch {epoch}")

        record = EpochRecord(epoch=epoch)
        if objective is not None:
            record.objective = float(objective(current))
        if evaluate is not None and (epoch % config.evaluate_every == 0 or epoch == config.epochs):
            record.held_out_accuracy = float(evaluate(current, rng.substream(epoch, 2)))
            if record.held_out_accuracy > best_accuracy:
                best_accuracy = record.held_out_accuracy
                best = {k: v.copy() for k, v in current.items()}
                best_epoch = epoch
        history.append(record)
        logger.debug(
            f"{label} epoch {epoch}: objective={record.objective} held_out_accuracy={record.held_out_accuracy}"
        )

    if evaluate is None:
        best = {k: v.copy() for k, v in current.items()}
        best_epoch = config.epochs
    logger.info(f"Finished {label}: best epoch {best_epoch}")
    return FitResult(params=current, best_params=best, best_epoch=best_epoch, history=history)
