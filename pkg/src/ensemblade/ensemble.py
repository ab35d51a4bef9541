"""Score combiners, ensembles of MLPs, and 0-1 evaluation.

Two combiners are supported. ``average`` takes the element-wise mean of the
member probability vectors and therefore stays on the simplex. ``max`` takes
the element-wise maximum; the result is only used for ranking classes and is
deliberately never renormalized.

The 0-1 loss uses the strict-inequality convention: an example counts as
misclassified only when the true-class score is strictly below the best
competing score, so exact ties count as correct.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import attacks, nnet
from .data import Dataset
from .nnet import EPS_LOG, MlpModel


class CombinerKind(str, Enum):
    AVERAGE = "average"
    MAX = "max"


@dataclass(frozen=True)
class Combiner:
    kind: CombinerKind

    def __post_init__(self):
        object.__setattr__(self, "kind", CombinerKind(self.kind))


@dataclass(frozen=True)
class Ensemble:
    """Members sharing one input dimension and one class count."""

    members: tuple[MlpModel, ...]
    combiner: Combiner

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        d = self.members[0].arch.input_dim
        c = self.members[0].arch.num_classes
        for m in self.members:
            if m.arch.input_dim != d or m.arch.num_classes != c:
                raise ValueError("members disagree on input dimension or class count")

    @property
    def input_dim(self) -> int:
        return self.members[0].arch.input_dim

    @property
    def num_classes(self) -> int:
        return self.members[0].arch.num_classes


def combine(preds, combiner: Combiner) -> np.ndarray:
    """Reduce member score vectors along the member axis.

    ``preds`` is an array-like of shape ``(..., n_members, n_classes)``; any
    leading batch axes pass through unchanged.
    """
    p = np.asarray(preds, dtype=np.float64)
    if p.ndim < 2:
        raise ValueError("preds must stack member score vectors")
    if combiner.kind is CombinerKind.AVERAGE:
        return np.mean(p, axis=-2)
    return np.max(p, axis=-2)


def member_probs_batch(e: Ensemble, X: np.ndarray) -> np.ndarray:
    """Member probabilities for a batch, shape (n, n_members, n_classes)."""
    stacked = [nnet.forward_batch(m, X)[2] for m in e.members]
    return np.stack(stacked, axis=1)


def member_probs(e: Ensemble, x: np.ndarray) -> np.ndarray:
    return member_probs_batch(e, np.asarray(x, dtype=np.float64)[None, :])[0]


def ensemble_probs_batch(e: Ensemble, X: np.ndarray) -> np.ndarray:
    return combine(member_probs_batch(e, X), e.combiner)


def ensemble_scores(e: Ensemble, x: np.ndarray) -> np.ndarray:
    """Combined score vector at one input."""
    return combine(member_probs(e, x), e.combiner)


def ensemble_predict(e: Ensemble, x: np.ndarray) -> int:
    """Argmax of the combined scores; ties resolve to the lowest class index."""
    return int(np.argmax(ensemble_scores(e, x)))


def ensemble_score_fn(e: Ensemble) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: ensemble_scores(e, x)


def misclassified_rows(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Strict 0-1 indicator per row: true-class score < best rival score."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = scores.shape
    rivals = scores.copy()
    rivals[np.arange(n), labels] = -np.inf
    return scores[np.arange(n), labels] < rivals.max(axis=1)


def zero_one_loss(score_fn: Callable[[np.ndarray], np.ndarray], dataset: Dataset) -> float:
    """Fraction of examples whose true-class score strictly loses.

    ``score_fn`` maps one feature vector to a score vector; exact ties at the
    top count as correct.
    """
    if len(dataset) == 0:
        raise ValueError("zero_one_loss needs a non-empty dataset")
    scores = np.stack([np.asarray(score_fn(ex.features), dtype=np.float64)
                       for ex in dataset.examples])
    wrong = misclassified_rows(scores, dataset.labels_array())
    return float(np.mean(wrong))


def accuracy(score_fn: Callable[[np.ndarray], np.ndarray], dataset: Dataset) -> float:
    """Exact complement of :func:`zero_one_loss` under the same tie rule."""
    return 1.0 - zero_one_loss(score_fn, dataset)


def ensemble_cross_entropy_batch(e: Ensemble, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """-log of the combined true-class score, clamped at EPS_LOG."""
    scores = ensemble_probs_batch(e, X)
    picked = scores[np.arange(scores.shape[0]), np.asarray(labels)]
    return -np.log(np.maximum(picked, EPS_LOG))


def ensemble_input_gradients(e: Ensemble, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of the combined cross entropy with respect to the inputs.

    For the average combiner the loss is -log(mean_i h^i_y) and every member
    contributes (h^i_y / (N * hbar_y)) * (h^i - onehot) at its logits. For the
    max combiner the subgradient follows the member that attains the maximum
    true-class score (lowest index on ties), which reduces to that member's
    ordinary cross-entropy gradient.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    n = X.shape[0]
    idx = np.arange(n)
    fwd = [nnet.forward_batch(m, X) for m in e.members]
    probs = np.stack([f[2] for f in fwd], axis=1)  # (n, N, C)
    grad = np.zeros_like(X)
    if e.combiner.kind is CombinerKind.AVERAGE:
        hbar = probs.mean(axis=1)
        hbar_y = hbar[idx, labels]
        live = hbar_y >= EPS_LOG
        for i, m in enumerate(e.members):
            h = probs[:, i, :]
            dz = h.copy()
            dz[idx, labels] -= 1.0
            coeff = np.where(live, h[idx, labels] / (len(e.members) * np.maximum(hbar_y, EPS_LOG)), 0.0)
            dz *= coeff[:, None]
            _, gx = nnet.backprop(m, fwd[i][0], dz, want_param_grads=False,
                                  want_input_grads=True)
            grad += gx
    else:
        true_scores = probs[idx, :, labels]  # (n, N)
        chosen = np.argmax(true_scores, axis=1)
        for i, m in enumerate(e.members):
            rows = idx[chosen == i]
            if rows.size == 0:
                continue
            dz_full = nnet.ce_dlogits(probs[:, i, :], labels)
            dz = np.zeros_like(dz_full)
            dz[rows] = dz_full[rows]
            _, gx = nnet.backprop(m, fwd[i][0], dz, want_param_grads=False,
                                  want_input_grads=True)
            grad += gx
    return grad


def robust_accuracy(e: Ensemble, dataset: Dataset, cfg: "attacks.AttackConfig",
                    seed: int = 0) -> tuple[float, float]:
    """Natural and under-attack accuracy of the combined scores.

    Both use the strict 0-1 tie rule, so with epsilon = 0 the two numbers are
    identical.
    """
    X = dataset.features_matrix()
    y = dataset.labels_array()
    nat_scores = ensemble_probs_batch(e, X)
    natural = 1.0 - float(np.mean(misclassified_rows(nat_scores, y)))
    X_adv = attacks.attack_dataset(e, X, y, cfg, seed=seed)
    adv_scores = ensemble_probs_batch(e, X_adv)
    robust = 1.0 - float(np.mean(misclassified_rows(adv_scores, y)))
    return natural, robust


def save_ensemble(e: Ensemble, out_dir) -> str:
    """Write member models plus a manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for i, m in enumerate(e.members):
        name = f"member_{i}.json"
        nnet.save_model(m, os.path.join(out_dir, name))
        names.append(name)
    manifest = {"combiner": e.combiner.kind.value, "members": names}
    path = os.path.join(out_dir, "ensemble.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def load_ensemble(manifest_path) -> Ensemble:
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(manifest_path))
    members = tuple(nnet.load_model(os.path.join(base, name))
                    for name in manifest["members"])
    return Ensemble(members=members, combiner=Combiner(CombinerKind(manifest["combiner"])))
