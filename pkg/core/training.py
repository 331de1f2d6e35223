"""
Mini-batch training loop shared by teacher training and distillation.
"""

import time
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from tqdm import tqdm

from core.arch_dsl import ArchSpec
from core.datasets import LabeledSet
from core.errors import DivergenceError
from core.metrics import RunMetrics, evaluate
from core.optim import ADAM, OptimizerState, apply_step
from core.tensor_engine import NetworkParams

DEFAULT_BATCH_SIZE = 64
DEFAULT_PATIENCE = 5


@dataclass
class RngStreams:
    """Independent generators so toggling one feature never shifts another's draws."""

    init: np.random.Generator
    dropout: np.random.Generator
    shuffle: np.random.Generator
    mask: np.random.Generator
    noise: np.random.Generator
    sigma: np.random.Generator


def make_streams(seed: int) -> RngStreams:
    children = np.random.SeedSequence(seed).spawn(6)
    return RngStreams(*(np.random.default_rng(child) for child in children))


@dataclass
class TrainConfig:
    epochs: int = 15
    patience: int = DEFAULT_PATIENCE
    batch_size: int = DEFAULT_BATCH_SIZE
    optimizer: str = ADAM
    learning_rate: float = 0.001
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0 or self.patience < 1:
            raise ValueError("epochs must be >= 0 and patience >= 1")

    def make_optimizer(self) -> OptimizerState:
        return OptimizerState(kind=self.optimizer, learning_rate=self.learning_rate,
                              weight_decay=self.weight_decay)


BatchStep = Callable[[NetworkParams, np.ndarray], Tuple[float, NetworkParams]]


def fit(spec: ArchSpec, params: NetworkParams, train: LabeledSet, validation: LabeledSet,
        cfg: TrainConfig, streams: RngStreams, batch_step: BatchStep, metrics: RunMetrics,
        progress: bool = True) -> NetworkParams:
    """
    Run epochs of shuffled mini-batches until the epoch budget is spent or the
    validation error has not improved for ``cfg.patience`` epochs.

    ``batch_step(params, indices)`` returns (batch loss, gradients). Returns the
    parameters of the best validation epoch (the last epoch without validation data).
    """
    started = time.perf_counter()
    optimizer = cfg.make_optimizer()
    has_validation = len(validation) > 0
    best = params.copy()
    best_error = evaluate(params, spec, validation) if has_validation else None
    metrics.best_val_error = best_error
    stale = 0

    for epoch in tqdm(range(1, cfg.epochs + 1), desc=metrics.tag, disable=not progress):
        order = streams.shuffle.permutation(len(train))
        total = 0.0
        for batch_no, start in enumerate(range(0, len(train), cfg.batch_size)):
            indices = order[start:start + cfg.batch_size]
            loss, grads = batch_step(params, indices)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"{metrics.tag}: non-finite loss {loss} at epoch {epoch}, batch {batch_no} "
                    f"(learning rate {optimizer.learning_rate})")
            apply_step(params, grads, optimizer)
            total += loss * len(indices)
        train_loss = total / len(train) if len(train) else 0.0

        val_error = evaluate(params, spec, validation) if has_validation else None
        improved = not has_validation or val_error < best_error
        if improved:
            best = params.copy()
            best_error = val_error
            metrics.best_epoch = epoch
            stale = 0
        else:
            stale += 1
        metrics.record_epoch(epoch, train_loss, val_error, improved)
        if stale >= cfg.patience:
            metrics.log_entries[-1]['early_stop'] = True
            break

    metrics.best_val_error = best_error
    metrics.wall_s = time.perf_counter() - started
    return best
