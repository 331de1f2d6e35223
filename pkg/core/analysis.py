"""
Numerical checks of the noisy-teacher loss.

Perturbing the targets turns the clean L2 loss into the clean loss plus a
noise-dependent term:

    ||g - (z + xi*z)||^2 = ||g - z||^2 + ||xi*z||^2 - 2 <g - z, xi*z>

The cross term is an inner product; its expectation over zero-mean xi is 0,
so the regularizer has expected value alpha * sigma^2 / 2T * sum_i ||z_i||^2.
"""

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from core.distill import PerturbationEvent, logit_l2_loss, perturb_logits
from core.errors import ShapeError

IDENTITY_TOLERANCE = 1e-9


@dataclass
class LossBreakdown:
    loss_clean: float
    reg_term: float
    loss_noisy: float

    @property
    def residual(self) -> float:
        return self.loss_noisy - self.loss_clean - self.reg_term


def regularizer_term(g: np.ndarray, z: np.ndarray, xi: np.ndarray, mask: np.ndarray,
                     batch_size: Optional[int] = None) -> float:
    t = len(g) if batch_size is None else batch_size
    scaled = xi * z
    per_sample = np.sum(scaled * scaled, axis=1) - 2.0 * np.sum((g - z) * scaled, axis=1)
    return float(np.sum(per_sample * mask) / (2.0 * t))


def loss_decomposition(g: np.ndarray, z: np.ndarray, xi: np.ndarray, mask: np.ndarray,
                       batch_size: Optional[int] = None, check: bool = True) -> LossBreakdown:
    g, z, xi = (np.asarray(a, dtype=np.float64) for a in (g, z, xi))
    mask = np.asarray(mask, dtype=bool)
    if g.shape != z.shape or xi.shape != z.shape or mask.shape != (z.shape[0],):
        raise ShapeError(f"shapes disagree: g {g.shape}, z {z.shape}, xi {xi.shape}, mask {mask.shape}")
    t = len(g) if batch_size is None else batch_size
    clean = logit_l2_loss(g, z, t)
    noisy = logit_l2_loss(g, perturb_logits(z, PerturbationEvent(mask, xi)), t)
    breakdown = LossBreakdown(clean, regularizer_term(g, z, xi, mask, t), noisy)
    if check and abs(breakdown.residual) > IDENTITY_TOLERANCE * (1.0 + abs(noisy)):
        raise ArithmeticError(f"decomposition residual {breakdown.residual!r} exceeds tolerance")
    return breakdown


def expected_regularizer(z: np.ndarray, sigma: float, alpha: float, batch_size: Optional[int] = None,
                         n_draws: int = 10000, rng: Optional[np.random.Generator] = None,
                         g: Optional[np.ndarray] = None, chunk: int = 100000) -> float:
    """Monte Carlo mean of the regularizer over fresh masks and noise; ``g`` defaults to zeros."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    z = np.asarray(z, dtype=np.float64)
    if sigma == 0:
        return 0.0
    rng = rng or np.random.default_rng(0)
    g = np.zeros_like(z) if g is None else np.asarray(g, dtype=np.float64)
    t = len(z) if batch_size is None else batch_size
    total = 0.0
    done = 0
    while done < n_draws:
        n = min(chunk, n_draws - done)
        xi = sigma * rng.standard_normal((n,) + z.shape)
        mask = rng.random((n, z.shape[0])) < alpha
        scaled = xi * z
        per_sample = np.sum(scaled * scaled, axis=2) - 2.0 * np.sum((g - z) * scaled, axis=2)
        total += float(np.sum(per_sample * mask)) / (2.0 * t)
        done += n
    return total / n_draws


def analytic_expected_regularizer(z: np.ndarray, sigma: float, alpha: float,
                                  batch_size: Optional[int] = None) -> float:
    z = np.asarray(z, dtype=np.float64)
    t = len(z) if batch_size is None else batch_size
    return alpha * sigma ** 2 / (2.0 * t) * float(np.sum(z * z))


def verify_decomposition(trials: int = 1000, seed: int = 0) -> Dict[str, float]:
    """Random (g, z, xi, mask) instances; reports the worst scaled residual."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_abs = 0.0
    for _ in range(trials):
        t = int(rng.integers(1, 65))
        n = int(rng.integers(2, 11))
        scale = 10.0 ** rng.uniform(-2, 2)
        g = scale * rng.standard_normal((t, n))
        z = scale * rng.standard_normal((t, n))
        xi = rng.uniform(0.0, 1.5) * rng.standard_normal((t, n))
        mask = rng.random(t) < rng.uniform(0.0, 1.0)
        b = loss_decomposition(g, z, xi, mask, t, check=False)
        worst_abs = max(worst_abs, abs(b.residual))
        worst = max(worst, abs(b.residual) / (1.0 + abs(b.loss_noisy)))
    return {
        'trials': trials,
        'max_abs_residual': worst_abs,
        'max_scaled_residual': worst,
        'tolerance': IDENTITY_TOLERANCE,
        'passed': worst <= IDENTITY_TOLERANCE,
    }
