"""Gradient-based evasion attacks under an L-infinity budget.

Attacks accept either a single model or an ensemble as the gradient source;
for ensembles the gradient is taken through the combined score, so the attack
optimizes the same cross entropy the defender reports.

Single-step FGSM is implemented as one iteration of the projected loop, which
makes ``fgsm`` and ``pgd`` with one step of size epsilon bit-identical.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import nnet
from .nnet import MlpModel


class AttackKind(str, Enum):
    FGSM = "fgsm"
    PGD = "pgd"


@dataclass(frozen=True)
class AttackConfig:
    """Budget and schedule for one attack.

    ``step_size`` defaults to ``epsilon / 4`` when unset. ``clamp_box`` is an
    optional (low, high) pair applied after every step; synthetic data is
    unbounded so the default is no box.
    """

    kind: AttackKind
    epsilon: float
    steps: int = 20
    step_size: float | None = None
    random_start: bool = False
    clamp_box: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.step_size is not None:
            if self.step_size <= 0:
                raise ValueError("step_size must be positive")
            if self.step_size > self.epsilon:
                warnings.warn("step_size exceeds epsilon; steps will saturate "
                              "the ball immediately", stacklevel=2)
        if self.clamp_box is not None:
            lo, hi = self.clamp_box
            if not lo < hi:
                raise ValueError("clamp_box must be an increasing (low, high) pair")

    def resolved_step(self) -> float:
        return self.epsilon / 4.0 if self.step_size is None else self.step_size


def clip_to_ball(candidate: np.ndarray, anchor: np.ndarray, epsilon: float) -> np.ndarray:
    """Project onto the L-infinity ball of radius epsilon around the anchor."""
    candidate = np.asarray(candidate, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    if candidate.shape != anchor.shape:
        raise ValueError("candidate and anchor shapes differ")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    out = np.minimum(np.maximum(candidate, anchor - epsilon), anchor + epsilon)
    # Rounding in anchor +/- epsilon can overshoot the ball by an ulp; walk
    # offending coordinates back until the recomputed gap fits the budget.
    over = np.abs(out - anchor) > epsilon
    while np.any(over):
        out = np.where(over, np.nextafter(out, anchor), out)
        over = np.abs(out - anchor) > epsilon
    return out


def _input_grads(source, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Cross-entropy input gradients for a model or an ensemble."""
    if isinstance(source, MlpModel):
        return nnet.input_gradient_batch(source, X, labels)
    from .ensemble import Ensemble, ensemble_input_gradients

    if isinstance(source, Ensemble):
        return ensemble_input_gradients(source, X, labels)
    raise TypeError(f"unsupported gradient source {type(source).__name__}")


def source_cross_entropy(source, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-example cross entropy of the source's (combined) scores."""
    if isinstance(source, MlpModel):
        _, _, probs = nnet.forward_batch(source, X)
        return nnet.cross_entropy_batch(probs, np.asarray(labels))
    from .ensemble import Ensemble, ensemble_cross_entropy_batch

    if isinstance(source, Ensemble):
        return ensemble_cross_entropy_batch(source, X, labels)
    raise TypeError(f"unsupported gradient source {type(source).__name__}")


def _as_batch(x, label):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    y = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if y.shape[0] == 1 and X.shape[0] > 1:
        y = np.full(X.shape[0], y[0])
    if y.shape[0] != X.shape[0]:
        raise ValueError("labels do not align with examples")
    return X, y, single


def _attack_batch(source, X, y, epsilon, steps, step_size, clamp_box, start=None):
    x_adv = X if start is None else clip_to_ball(start, X, epsilon)
    if clamp_box is not None:
        x_adv = np.clip(x_adv, *clamp_box)
    for _ in range(steps):
        g = _input_grads(source, x_adv, y)
        x_adv = clip_to_ball(x_adv + step_size * np.sign(g), X, epsilon)
        if clamp_box is not None:
            x_adv = np.clip(x_adv, *clamp_box)
    return clip_to_ball(x_adv, X, epsilon)


def fgsm(source, x, label, epsilon: float, clamp_box=None) -> np.ndarray:
    """x + epsilon * sign(grad), projected back into ball and optional box.

    ``x`` may be one feature vector or a batch of rows; the output matches.
    A zero gradient leaves the input unchanged because sign(0) = 0.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    X, y, single = _as_batch(x, label)
    out = _attack_batch(source, X, y, epsilon, steps=1, step_size=epsilon,
                        clamp_box=clamp_box)
    return out[0] if single else out


def pgd(source, x, label, cfg: AttackConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Projected gradient descent with signed steps inside the epsilon ball."""
    X, y, single = _as_batch(x, label)
    start = None
    if cfg.random_start:
        if rng is None:
            raise ValueError("random_start requires an rng")
        start = X + rng.uniform(-cfg.epsilon, cfg.epsilon, size=X.shape)
    out = _attack_batch(source, X, y, cfg.epsilon, cfg.steps, cfg.resolved_step(),
                        cfg.clamp_box, start=start)
    return out[0] if single else out


def attack_dataset(source, X: np.ndarray, labels: np.ndarray, cfg: AttackConfig,
                   seed: int = 0) -> np.ndarray:
    """Attack every row of X.

    Random starts draw from one stream per example, seeded by (seed, row
    index), so the result does not depend on batching or thread count.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if cfg.kind is AttackKind.FGSM:
        return _attack_batch(source, X, y, cfg.epsilon, steps=1,
                             step_size=cfg.epsilon, clamp_box=cfg.clamp_box)
    start = None
    if cfg.random_start:
        start = np.empty_like(X)
        for i in range(X.shape[0]):
            r = np.random.default_rng((seed, i))
            start[i] = X[i] + r.uniform(-cfg.epsilon, cfg.epsilon, size=X.shape[1])
    return _attack_batch(source, X, y, cfg.epsilon, cfg.steps, cfg.resolved_step(),
                         cfg.clamp_box, start=start)


def estimate_curvature(source, x: np.ndarray, label: int, delta: np.ndarray) -> float:
    """Gradient-variation ratio ||grad(x + delta) - grad(x)||_2 / ||delta||_2.

    A crude local curvature probe: zero for losses that are linear in the
    input over the probed segment.
    """
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    norm = float(np.linalg.norm(delta))
    if norm == 0.0:
        raise ValueError("delta must be non-zero")
    X, y, _ = _as_batch(x, label)
    g0 = _input_grads(source, X, y)[0]
    g1 = _input_grads(source, X + delta[None, :], y)[0]
    return float(np.linalg.norm(g1 - g0) / norm)
