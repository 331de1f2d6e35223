"""
Student training from teacher logits.

The baseline regresses the student's logits onto the teacher's with an L2
loss. The noisy-teacher variant multiplies the logits of randomly selected
samples elementwise by (1 + xi), xi ~ N(0, sigma^2 I), before the loss. The
noise can instead be applied to the student's own logits, and sigma can be
redrawn uniformly for every mini-batch.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from core.arch_dsl import ArchSpec
from core.datasets import LabeledSet
from core.errors import CountMismatchError, ShapeError
from core.metrics import RunMetrics, evaluate
from core.optim import OptimizerState, apply_step
from core.teacher import LogitRecordSet
from core.tensor_engine import TRAIN, NetworkParams, backward, forward, image_shape_to_arch, init_params
from core.training import TrainConfig, fit, make_streams


class NoiseTarget(str, Enum):
    TEACHER = "teacher"
    STUDENT = "student"
    NONE = "none"


class Sharing(str, Enum):
    PER_SAMPLE = "sample"
    PER_BATCH = "batch"


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float = 0.5
    alpha: float = 0.5
    target: NoiseTarget = NoiseTarget.TEACHER
    sharing: Sharing = Sharing.PER_SAMPLE
    sigma_range: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        object.__setattr__(self, 'target', NoiseTarget(self.target))
        object.__setattr__(self, 'sharing', Sharing(self.sharing))
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.sigma_range is not None:
            lo, hi = self.sigma_range
            if lo < 0 or lo > hi:
                raise ValueError(f"random sigma range needs 0 <= lo <= hi, got {self.sigma_range}")

    @property
    def mu(self) -> float:
        return 0.0


@dataclass
class PerturbationEvent:
    mask: np.ndarray
    xi: np.ndarray


@dataclass
class DistillConfig:
    student_spec: ArchSpec
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    @property
    def batch_size(self) -> int:
        return self.train.batch_size


def draw_noise(n_classes: int, sigma: float, sharing: Sharing, batch: int, rng: np.random.Generator) -> np.ndarray:
    """
    Gaussian xi rows, one per batch sample. PER_BATCH reuses a single row for
    the whole batch. The generator advances the same way for any sigma.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    rows = 1 if Sharing(sharing) == Sharing.PER_BATCH else batch
    standard = rng.standard_normal((rows, n_classes))
    if sigma == 0:
        return np.zeros((batch, n_classes))
    xi = sigma * standard
    return np.repeat(xi, batch, axis=0) if rows == 1 else xi


def select_mask(batch: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli(alpha) selection of each sample."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return rng.random(batch) < alpha


def perturb_logits(z: np.ndarray, event: PerturbationEvent) -> np.ndarray:
    """z'_j = (1 + xi_j) * z_j for selected samples; the rest pass through."""
    z = np.asarray(z, dtype=np.float64)
    if event.xi.shape != z.shape or event.mask.shape != (z.shape[0],):
        raise ShapeError(f"noise {event.xi.shape} / mask {event.mask.shape} do not match logits {z.shape}")
    return np.where(event.mask[:, None], (1.0 + event.xi) * z, z)


def logit_l2_loss(g: np.ndarray, targets: np.ndarray, batch_size: Optional[int] = None) -> float:
    """(1 / 2T) * sum_i ||g_i - target_i||^2"""
    if g.shape != targets.shape:
        raise ShapeError(f"student logits {g.shape} and targets {targets.shape} differ")
    t = len(g) if batch_size is None else batch_size
    if t <= 0:
        raise ValueError("batch size must be positive")
    diff = g - targets
    return float(np.sum(diff * diff) / (2.0 * t))


def logit_l2_grad(g: np.ndarray, targets: np.ndarray, batch_size: Optional[int] = None) -> np.ndarray:
    t = len(g) if batch_size is None else batch_size
    return (g - targets) / t


def resolve_sigma(noise: NoiseConfig, rng: np.random.Generator) -> float:
    if noise.sigma_range is None:
        return noise.sigma
    lo, hi = noise.sigma_range
    return float(rng.uniform(lo, hi))


def distill_step(spec: ArchSpec, params: NetworkParams, images: np.ndarray, z: np.ndarray,
                 event: PerturbationEvent, target: NoiseTarget, dropout_rng: np.random.Generator
                 ) -> Tuple[float, NetworkParams]:
    """Loss and gradients of one mini-batch; the optimizer step is left to the caller."""
    g, cache = forward(spec, params, images, TRAIN, dropout_rng)
    t = len(g)
    if target == NoiseTarget.TEACHER:
        z_noisy = perturb_logits(z, event)
        loss = logit_l2_loss(g, z_noisy, t)
        dg = logit_l2_grad(g, z_noisy, t)
    elif target == NoiseTarget.STUDENT:
        g_noisy = perturb_logits(g, event)
        loss = logit_l2_loss(g_noisy, z, t)
        scale = np.where(event.mask[:, None], 1.0 + event.xi, 1.0)
        dg = scale * logit_l2_grad(g_noisy, z, t)
    else:
        loss = logit_l2_loss(g, z, t)
        dg = logit_l2_grad(g, z, t)
    return loss, backward(cache, dg)


def distill_update(spec: ArchSpec, params: NetworkParams, images: np.ndarray, z: np.ndarray,
                   event: PerturbationEvent, target: NoiseTarget, optimizer: OptimizerState,
                   dropout_rng: np.random.Generator) -> float:
    """One full iteration: loss, backpropagation and parameter update."""
    loss, grads = distill_step(spec, params, images, z, event, target, dropout_rng)
    apply_step(params, grads, optimizer)
    return loss


def distill(cfg: DistillConfig, logit_set: LogitRecordSet, train: LabeledSet, validation: LabeledSet,
            test: Optional[LabeledSet] = None, progress: bool = True) -> Tuple[NetworkParams, RunMetrics]:
    """Train a student on teacher logits only; hard labels are used for evaluation alone."""
    spec = cfg.student_spec
    noise = cfg.noise
    streams = make_streams(cfg.seed)
    params = init_params(spec, image_shape_to_arch(train.image_shape), streams.init)
    classes = params.weights[spec.logit_layer_index()].shape[0]
    if classes != logit_set.n_classes:
        raise CountMismatchError(f"student emits {classes} logits, teacher cache holds {logit_set.n_classes}")
    z_all = logit_set.logits_for(train.sample_ids)

    def batch_step(current: NetworkParams, indices: np.ndarray):
        sigma = resolve_sigma(noise, streams.sigma)
        mask = select_mask(len(indices), noise.alpha, streams.mask)
        xi = draw_noise(classes, sigma, noise.sharing, len(indices), streams.noise)
        event = PerturbationEvent(mask, xi)
        return distill_step(spec, current, train.images[indices], z_all[indices], event,
                            noise.target, streams.dropout)

    metrics = RunMetrics(tag="student", seed=cfg.seed)
    best = fit(spec, params, train, validation, cfg.train, streams, batch_step, metrics, progress)
    if test is not None and len(test):
        metrics.test_error = evaluate(best, spec, test)
    return best, metrics


def merge_teachers(first: LogitRecordSet, second: LogitRecordSet, tag: str = "merged") -> LogitRecordSet:
    """
    Per-sample arithmetic mean of two teachers' logits.

    Softmax of the mean equals the normalized geometric mean of the two
    softmax distributions.
    """
    if first.n_classes != second.n_classes:
        raise CountMismatchError(f"teachers emit {first.n_classes} and {second.n_classes} classes")
    if len(first) != len(second) or set(first.sample_ids.tolist()) != set(second.sample_ids.tolist()):
        raise CountMismatchError("teachers cover different sample indices")
    merged = 0.5 * (first.logits + second.logits_for(first.sample_ids))
    return LogitRecordSet(first.n_classes, first.sample_ids.copy(), merged, first.hard_labels.copy(), tag)
