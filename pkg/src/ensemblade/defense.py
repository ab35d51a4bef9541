"""Ensemble defenses: diversity-promoting training plus globally generated
adversarials distributed interactively across members.

The base training loss rewards members that are jointly accurate, uncertain on
average, and geometrically diverse in their non-true-class predictions. The
fine-tuning stage then attacks the combined ensemble, hands each adversarial
example to one member chosen by a distribution rule, and adds a confidence
penalty whenever the combined prediction is still wrong.

Gradients are assembled by hand on top of :mod:`ensemblade.nnet`'s reverse
pass: every loss term contributes either d(loss)/dlogits directly or
d(loss)/dprobs rows that are pushed through the softmax backward step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from . import attacks, nnet
from .attacks import AttackConfig, AttackKind
from .data import Dataset
from .ensemble import (
    Combiner,
    CombinerKind,
    Ensemble,
    combine,
    member_probs_batch,
    misclassified_rows,
    robust_accuracy,
)
from .nnet import EPS_LOG, MlpArchitecture, MlpModel

# Tags used to derive independent rng streams from one training seed.
_SEED_INIT = 11
_SEED_SHUFFLE = 12
_SEED_ATTACK = 13
_SEED_DISTRIBUTE = 14


class DistributionRule(str, Enum):
    HARD = "hard"
    SOFT = "soft"
    RANDOM = "random"
    OPPOSITE = "opposite"


@dataclass(frozen=True)
class AdpConfig:
    """Weights for the diversity-promoting base loss.

    The loss per example is sum_i ce_i - entropy_weight * H(mean probs)
    + diversity_weight * log(max(det, det_floor)).
    """

    entropy_weight: float = 2.0
    diversity_weight: float = 0.5
    det_floor: float = 1e-12

    def __post_init__(self):
        if self.det_floor <= 0:
            raise ValueError("det_floor must be positive")


@dataclass(frozen=True)
class IgatConfig:
    """Schedule and weights for global-adversarial fine-tuning."""

    attack: AttackConfig
    seed: int
    alpha: float = 5.0
    beta: float = 10.0
    rule: DistributionRule = DistributionRule.SOFT
    combiner: CombinerKind = CombinerKind.AVERAGE
    epochs_pretrain: int = 20
    epochs_finetune: int = 10
    lr_pretrain: float = 0.05
    lr_finetune: float = 0.02
    momentum: float = 0.0
    batch_size: int = 64
    eval_attack: AttackConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "rule", DistributionRule(self.rule))
        object.__setattr__(self, "combiner", CombinerKind(self.combiner))
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.epochs_pretrain < 0 or self.epochs_finetune < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.lr_pretrain <= 0 or self.lr_finetune <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")

    def resolved_eval_attack(self) -> AttackConfig:
        if self.eval_attack is not None:
            return self.eval_attack
        return replace(self.attack, steps=20, random_start=False)


@dataclass(frozen=True)
class DistributedBatch:
    """Adversarial batch plus a partition of its rows across members."""

    features: np.ndarray
    labels: np.ndarray
    groups: tuple[np.ndarray, ...]

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int64)
        groups = tuple(np.asarray(g, dtype=np.int64) for g in self.groups)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)
        object.__setattr__(self, "groups", groups)
        assigned = np.sort(np.concatenate(groups)) if groups else np.array([], dtype=np.int64)
        if not np.array_equal(assigned, np.arange(feats.shape[0])):
            raise ValueError("groups must partition the adversarial batch exactly once")

    @property
    def n_members(self) -> int:
        return len(self.groups)

    def member_examples(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        g = self.groups[i]
        return self.features[g], self.labels[g]


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    phase: str
    natural_acc: float
    robust_acc: float
    loss_total: float
    loss_ce: float
    loss_entropy: float
    loss_diversity: float
    loss_global_adv: float
    loss_regularizer: float


def shannon_entropy(probs: np.ndarray) -> float:
    """Entropy in nats with the 0 * log 0 = 0 convention."""
    p = np.asarray(probs, dtype=np.float64)
    mask = p > 0.0
    return float(-np.sum(p[mask] * np.log(p[mask])))


def _entropy_rows(hbar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Entropy per row plus d(entropy)/dp (zero where p is exactly zero)."""
    mask = hbar > 0.0
    logs = np.zeros_like(hbar)
    logs[mask] = np.log(hbar[mask])
    values = -np.sum(hbar * logs, axis=1)
    dent = np.where(mask, -(logs + 1.0), 0.0)
    return values, dent


def _diversity_core(probs: np.ndarray, labels: np.ndarray):
    """Gram determinants of the normalized non-true-class prediction matrix.

    ``probs`` has shape (n, members, classes). For each row the true-class
    entry is dropped from every member's vector, the remaining columns are
    L2-normalized (a zero column stays zero), and the determinant of the
    members-by-members Gram matrix is taken. Row order inside the reduced
    matrix does not affect the determinant, so the dropped class is skipped
    with a cyclic shift rather than an explicit delete.
    """
    n, n_members, c = probs.shape
    if c < 2:
        raise ValueError("diversity needs at least two classes")
    cols = (labels[:, None] + 1 + np.arange(c - 1)[None, :]) % c
    probs_t = probs.transpose(0, 2, 1)
    V = np.take_along_axis(probs_t, cols[:, :, None], axis=1)  # (n, c-1, members)
    norms = np.linalg.norm(V, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    H = V / safe[:, None, :]
    G = np.einsum("nci,ncj->nij", H, H)
    dets = np.linalg.det(G)
    return cols, norms, H, G, dets


def _diversity_dprobs(probs, labels, cols, norms, H, G, dets, det_floor):
    """d(log det)/dprobs per row; zero wherever the determinant floor binds."""
    dprobs = np.zeros_like(probs)
    for r in np.nonzero(dets > det_floor)[0]:
        try:
            g_inv = np.linalg.inv(G[r])
        except np.linalg.LinAlgError:
            continue
        dH = 2.0 * (H[r] @ g_inv)
        inner = np.sum(H[r] * dH, axis=0)
        dV = (dH - H[r] * inner[None, :]) / norms[r][None, :]
        for i in range(probs.shape[1]):
            dprobs[r, i, cols[r]] += dV[:, i]
    return dprobs


def geometric_diversity(preds: Sequence[np.ndarray], label: int) -> float:
    """Determinant measuring how spread out the non-true-class predictions are.

    One prediction vector per member. A member predicting exactly one-hot at
    the label contributes a zero column, which collapses the determinant to
    zero.
    """
    probs = np.asarray(preds, dtype=np.float64)[None, :, :]
    labels = np.array([int(label)])
    _, _, _, _, dets = _diversity_core(probs, labels)
    return float(dets[0])


def _require_average(e: Ensemble) -> None:
    if e.combiner.kind is not CombinerKind.AVERAGE:
        raise ValueError("the diversity-promoting loss is defined for the average combiner")


def adp_loss(e: Ensemble, x: np.ndarray, label: int, cfg: AdpConfig) -> float:
    """Diversity-promoting loss for one example."""
    _require_average(e)
    X = np.asarray(x, dtype=np.float64)[None, :]
    y = np.array([int(label)])
    comps = _adp_rows(e, member_probs_batch(e, X), y, cfg)
    return float(comps["total"][0])


def _adp_rows(e: Ensemble, probs: np.ndarray, y: np.ndarray, cfg: AdpConfig) -> dict:
    """Per-example loss pieces for a batch; shared by loss and gradient paths."""
    n = probs.shape[0]
    ce = np.zeros(n)
    for i in range(probs.shape[1]):
        ce += nnet.cross_entropy_batch(probs[:, i, :], y)
    hbar = probs.mean(axis=1)
    ent, _ = _entropy_rows(hbar)
    _, _, _, _, dets = _diversity_core(probs, y)
    logdet = np.log(np.maximum(dets, cfg.det_floor))
    total = ce - cfg.entropy_weight * ent + cfg.diversity_weight * logdet
    return {"ce": ce, "entropy": ent, "logdet": logdet, "total": total}


def adp_param_grads(e: Ensemble, X: np.ndarray, y: np.ndarray, cfg: AdpConfig):
    """Gradients of the batch-mean diversity-promoting loss per member.

    Returns (grads, components) where grads[i] is the list of weight-matrix
    gradients for member i and components holds batch-mean loss terms.
    """
    _require_average(e)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, n_members = X.shape[0], len(e.members)
    fwd = [nnet.forward_batch(m, X) for m in e.members]
    probs = np.stack([f[2] for f in fwd], axis=1)
    hbar = probs.mean(axis=1)
    ent, dent = _entropy_rows(hbar)
    cols, norms, H, G, dets = _diversity_core(probs, y)
    logdet = np.log(np.maximum(dets, cfg.det_floor))

    # d(loss)/dprobs: entropy enters with weight -entropy_weight, shared over
    # members through the average; the determinant term with +diversity_weight.
    dprobs = np.broadcast_to(
        (-cfg.entropy_weight / (n * n_members)) * dent[:, None, :], probs.shape
    ).copy()
    dprobs += (cfg.diversity_weight / n) * _diversity_dprobs(
        probs, y, cols, norms, H, G, dets, cfg.det_floor
    )

    grads = []
    ce = np.zeros(n)
    for i, m in enumerate(e.members):
        p = probs[:, i, :]
        ce += nnet.cross_entropy_batch(p, y)
        dz = nnet.ce_dlogits(p, y) / n + nnet.dprobs_to_dlogits(p, dprobs[:, i, :])
        g, _ = nnet.backprop(m, fwd[i][0], dz, want_param_grads=True,
                             want_input_grads=False)
        grads.append(g)
    components = {
        "ce": float(np.mean(ce)),
        "entropy": float(-cfg.entropy_weight * np.mean(ent)),
        "diversity": float(cfg.diversity_weight * np.mean(logdet)),
    }
    components["total"] = components["ce"] + components["entropy"] + components["diversity"]
    return grads, components


def generate_global_adversarials(e: Ensemble, X: np.ndarray, y: np.ndarray,
                                 cfg: AttackConfig,
                                 rng: np.random.Generator | None = None):
    """Attack the combined ensemble; labels are carried over unchanged."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if cfg.kind is AttackKind.FGSM:
        return attacks.fgsm(e, X, y, cfg.epsilon, clamp_box=cfg.clamp_box), y
    return attacks.pgd(e, X, y, cfg, rng=rng), y


def rank_members(scores: np.ndarray) -> np.ndarray:
    """Ranks 1..n by descending score; ties give the lower index the better rank."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.int64)
    ranks[order] = np.arange(1, len(scores) + 1)
    return ranks


def ranking_scores(ranks: Sequence[int]) -> np.ndarray:
    """Selection probabilities 2^(n - r) / (2^n - 1) for a rank permutation."""
    ranks = np.asarray(ranks, dtype=np.int64)
    n = len(ranks)
    if n < 1 or sorted(ranks.tolist()) != list(range(1, n + 1)):
        raise ValueError("ranks must be a permutation of 1..n")
    return np.power(2.0, n - ranks) / (2.0 ** n - 1.0)


def roulette_select(probabilities: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an index with the given probabilities via cumulative intervals.

    One uniform draw q is matched against the running sums b_i; the first
    interval with q <= b_i wins. Rounding in the final sum is absorbed by
    falling back to the last index.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    q = rng.random()
    b = 0.0
    for i, pi in enumerate(p):
        b += pi
        if q <= b:
            return i
    return len(p) - 1


def distribute_hard(e: Ensemble, x_adv: np.ndarray, label: int) -> int:
    """Index of the member most confident in the true class at x_adv."""
    probs = member_probs_batch(e, np.asarray(x_adv, dtype=np.float64)[None, :])[0]
    return int(np.argmax(probs[:, int(label)]))


def distribute_soft(e: Ensemble, x_adv: np.ndarray, label: int,
                    rng: np.random.Generator) -> int:
    """Roulette draw over rank-derived probabilities of the true-class scores."""
    probs = member_probs_batch(e, np.asarray(x_adv, dtype=np.float64)[None, :])[0]
    ranks = rank_members(probs[:, int(label)])
    return roulette_select(ranking_scores(ranks), rng)


def distribute_batch(e: Ensemble, adversarials: tuple[np.ndarray, np.ndarray],
                     rule: DistributionRule,
                     rng: np.random.Generator | None = None) -> DistributedBatch:
    """Assign every adversarial example to exactly one member."""
    X_adv, y_adv = adversarials
    X_adv = np.asarray(X_adv, dtype=np.float64)
    y_adv = np.asarray(y_adv, dtype=np.int64)
    rule = DistributionRule(rule)
    if rule in (DistributionRule.SOFT, DistributionRule.RANDOM) and rng is None:
        raise ValueError(f"the {rule.value} rule needs an rng")
    n, n_members = X_adv.shape[0], len(e.members)
    probs = member_probs_batch(e, X_adv)
    true_scores = probs[np.arange(n), :, y_adv]
    choice = np.empty(n, dtype=np.int64)
    for r in range(n):
        if rule is DistributionRule.HARD:
            choice[r] = np.argmax(true_scores[r])
        elif rule is DistributionRule.OPPOSITE:
            choice[r] = np.argmin(true_scores[r])
        elif rule is DistributionRule.RANDOM:
            choice[r] = rng.integers(n_members)
        else:
            ranks = rank_members(true_scores[r])
            choice[r] = roulette_select(ranking_scores(ranks), rng)
    groups = tuple(np.nonzero(choice == i)[0] for i in range(n_members))
    return DistributedBatch(features=X_adv, labels=y_adv, groups=groups)


def misclassification_regularizer(e: Ensemble, x: np.ndarray, label: int) -> float:
    """-log(1 - m) when the combined prediction is wrong, zero otherwise.

    m is the largest probability any member assigns to any class, so the
    penalty pushes every member away from confident predictions on examples
    the ensemble still gets wrong. The log argument is clamped at EPS_LOG.
    """
    X = np.asarray(x, dtype=np.float64)[None, :]
    y = np.array([int(label)])
    probs = member_probs_batch(e, X)
    combined = combine(probs, e.combiner)
    values, _, _, _ = _regularizer_rows(probs, combined, y)
    return float(values[0])


def _regularizer_rows(probs: np.ndarray, combined: np.ndarray, labels: np.ndarray):
    """Per-row penalty plus what the backward pass needs.

    Returns (values, flat argmax positions over (member, class), live mask,
    clamped 1 - m). The gradient is live on rows that are both misclassified
    and away from the clamp.
    """
    n = probs.shape[0]
    wrong = misclassified_rows(combined, labels)
    flat = probs.reshape(n, -1)
    pos = np.argmax(flat, axis=1)
    m = flat[np.arange(n), pos]
    one_minus = np.maximum(1.0 - m, EPS_LOG)
    values = np.where(wrong, -np.log(one_minus), 0.0)
    live = wrong & ((1.0 - m) >= EPS_LOG)
    return values, pos, live, one_minus


def igat_loss_components(e: Ensemble, natural: tuple[np.ndarray, np.ndarray],
                         distributed: DistributedBatch, adp_cfg: AdpConfig,
                         igat_cfg: IgatConfig) -> dict:
    """Batch-mean loss terms of the full fine-tuning objective."""
    _require_average(e)
    X, y = natural
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    probs_nat = member_probs_batch(e, X)
    adp = _adp_rows(e, probs_nat, y, adp_cfg)

    probs_adv = member_probs_batch(e, distributed.features)
    global_adv = 0.0
    for i in range(len(e.members)):
        g = distributed.groups[i]
        if g.size == 0:
            continue
        ce_i = nnet.cross_entropy_batch(probs_adv[g, i, :], distributed.labels[g])
        global_adv += float(np.mean(ce_i))

    union_probs = np.concatenate([probs_nat, probs_adv], axis=0)
    union_labels = np.concatenate([y, distributed.labels])
    union_combined = combine(union_probs, e.combiner)
    reg_values, _, _, _ = _regularizer_rows(union_probs, union_combined, union_labels)

    comps = {
        "ce": float(np.mean(adp["ce"])),
        "entropy": float(-adp_cfg.entropy_weight * np.mean(adp["entropy"])),
        "diversity": float(adp_cfg.diversity_weight * np.mean(adp["logdet"])),
        "global_adv": float(igat_cfg.alpha * global_adv),
        "regularizer": float(igat_cfg.beta * np.mean(reg_values)),
    }
    comps["total"] = sum(comps.values())
    return comps


def igat_total_loss(e: Ensemble, natural: tuple[np.ndarray, np.ndarray],
                    distributed: DistributedBatch, adp_cfg: AdpConfig,
                    igat_cfg: IgatConfig) -> float:
    """Full fine-tuning objective: base loss plus distributed adversarial cross
    entropy plus the misclassification penalty over natural and adversarial
    rows together. All three pieces are batch means."""
    return igat_loss_components(e, natural, distributed, adp_cfg, igat_cfg)["total"]


def igat_param_grads(e: Ensemble, X: np.ndarray, y: np.ndarray,
                     distributed: DistributedBatch, adp_cfg: AdpConfig,
                     igat_cfg: IgatConfig):
    """Gradients of the full fine-tuning objective per member."""
    _require_average(e)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    n_members = len(e.members)
    n_adv = distributed.features.shape[0]
    n_union = n + n_adv

    fwd_nat = [nnet.forward_batch(m, X) for m in e.members]
    probs_nat = np.stack([f[2] for f in fwd_nat], axis=1)
    fwd_adv = [nnet.forward_batch(m, distributed.features) for m in e.members]
    probs_adv = np.stack([f[2] for f in fwd_adv], axis=1)

    hbar = probs_nat.mean(axis=1)
    ent, dent = _entropy_rows(hbar)
    cols, norms, H, G, dets = _diversity_core(probs_nat, y)
    logdet = np.log(np.maximum(dets, adp_cfg.det_floor))

    dprobs_nat = np.broadcast_to(
        (-adp_cfg.entropy_weight / (n * n_members)) * dent[:, None, :], probs_nat.shape
    ).copy()
    dprobs_nat += (adp_cfg.diversity_weight / n) * _diversity_dprobs(
        probs_nat, y, cols, norms, H, G, dets, adp_cfg.det_floor
    )
    dprobs_adv = np.zeros_like(probs_adv)

    # Confidence penalty over the union of natural and adversarial rows.
    reg_mean = 0.0
    for probs, labels, dprobs in (
        (probs_nat, y, dprobs_nat),
        (probs_adv, distributed.labels, dprobs_adv),
    ):
        combined = combine(probs, e.combiner)
        values, pos, live, one_minus = _regularizer_rows(probs, combined, labels)
        reg_mean += float(np.sum(values)) / n_union
        rows = np.nonzero(live)[0]
        member_idx, class_idx = np.divmod(pos[rows], probs.shape[2])
        dprobs[rows, member_idx, class_idx] += (
            igat_cfg.beta / n_union
        ) / one_minus[rows]

    # Per-member adversarial cross entropy, one group mean each.
    adv_row_weight = np.zeros((n_adv, n_members))
    global_adv = 0.0
    for i in range(n_members):
        g = distributed.groups[i]
        if g.size == 0:
            continue
        ce_i = nnet.cross_entropy_batch(probs_adv[g, i, :], distributed.labels[g])
        global_adv += float(np.mean(ce_i))
        adv_row_weight[g, i] = igat_cfg.alpha / g.size

    grads = []
    ce = np.zeros(n)
    for i, m in enumerate(e.members):
        p = probs_nat[:, i, :]
        ce += nnet.cross_entropy_batch(p, y)
        dz_nat = nnet.ce_dlogits(p, y) / n + nnet.dprobs_to_dlogits(p, dprobs_nat[:, i, :])
        g_nat, _ = nnet.backprop(m, fwd_nat[i][0], dz_nat, want_param_grads=True,
                                 want_input_grads=False)
        p_adv = probs_adv[:, i, :]
        dz_adv = nnet.ce_dlogits(p_adv, distributed.labels) * adv_row_weight[:, i:i + 1]
        dz_adv += nnet.dprobs_to_dlogits(p_adv, dprobs_adv[:, i, :])
        g_adv, _ = nnet.backprop(m, fwd_adv[i][0], dz_adv, want_param_grads=True,
                                 want_input_grads=False)
        grads.append([a + b for a, b in zip(g_nat, g_adv)])

    components = {
        "ce": float(np.mean(ce)),
        "entropy": float(-adp_cfg.entropy_weight * np.mean(ent)),
        "diversity": float(adp_cfg.diversity_weight * np.mean(logdet)),
        "global_adv": float(igat_cfg.alpha * global_adv),
        "regularizer": float(igat_cfg.beta * reg_mean),
    }
    components["total"] = sum(components.values())
    return grads, components


def _chunks(order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def train_igat(train_data: Dataset, arch: MlpArchitecture, n_members: int,
               adp_cfg: AdpConfig, igat_cfg: IgatConfig,
               eval_data: Dataset | None = None) -> tuple[Ensemble, list[EpochMetrics]]:
    """Two-phase ensemble training.

    Phase one trains on the diversity-promoting loss alone. Phase two
    regenerates global adversarials for every batch, distributes them by the
    configured rule, and optimizes the full objective. Every random draw comes
    from a stream derived from (seed, purpose, epoch, batch), so results are
    reproducible and independent of thread count.
    """
    if n_members < 1:
        raise ValueError("need at least one member")
    if igat_cfg.combiner is not CombinerKind.AVERAGE:
        raise ValueError("the diversity-promoting base loss requires the average combiner")
    seed = igat_cfg.seed
    members = [nnet.init_mlp(arch, (seed, _SEED_INIT, i)) for i in range(n_members)]
    eval_ds = eval_data if eval_data is not None else train_data
    eval_cfg = igat_cfg.resolved_eval_attack()
    X_all = train_data.features_matrix()
    y_all = train_data.labels_array()
    metrics: list[EpochMetrics] = []
    epoch_counter = 1

    def record(phase: str, comp_sums: dict, batches: int):
        nonlocal epoch_counter
        e = Ensemble(members=tuple(members), combiner=Combiner(igat_cfg.combiner))
        nat, rob = robust_accuracy(e, eval_ds, eval_cfg, seed=seed)
        avg = {k: v / max(batches, 1) for k, v in comp_sums.items()}
        metrics.append(EpochMetrics(
            epoch=epoch_counter, phase=phase,
            natural_acc=nat, robust_acc=rob,
            loss_total=avg.get("total", 0.0), loss_ce=avg.get("ce", 0.0),
            loss_entropy=avg.get("entropy", 0.0),
            loss_diversity=avg.get("diversity", 0.0),
            loss_global_adv=avg.get("global_adv", 0.0),
            loss_regularizer=avg.get("regularizer", 0.0),
        ))
        epoch_counter += 1

    def apply(grads_per_member, velocity, lr):
        for i in range(n_members):
            for l, g in enumerate(grads_per_member[i]):
                velocity[i][l] = igat_cfg.momentum * velocity[i][l] + g
            members[i] = nnet.sgd_step(members[i], velocity[i], lr)

    # Phase one: base loss only.
    velocity = [[np.zeros_like(w) for w in m.weights] for m in members]
    for epoch in range(igat_cfg.epochs_pretrain):
        order = np.random.default_rng((seed, _SEED_SHUFFLE, epoch)).permutation(len(train_data))
        comp_sums: dict = {}
        batches = 0
        for batch_idx in _chunks(order, igat_cfg.batch_size):
            e = Ensemble(members=tuple(members), combiner=Combiner(igat_cfg.combiner))
            grads, comps = adp_param_grads(e, X_all[batch_idx], y_all[batch_idx], adp_cfg)
            apply(grads, velocity, igat_cfg.lr_pretrain)
            for k, v in comps.items():
                comp_sums[k] = comp_sums.get(k, 0.0) + v
            batches += 1
        record("pretrain", comp_sums, batches)

    # Phase two: full objective with fresh adversarials per batch.
    velocity = [[np.zeros_like(w) for w in m.weights] for m in members]
    for epoch in range(igat_cfg.epochs_finetune):
        order = np.random.default_rng(
            (seed, _SEED_SHUFFLE, igat_cfg.epochs_pretrain + epoch)
        ).permutation(len(train_data))
        comp_sums = {}
        batches = 0
        for b, batch_idx in enumerate(_chunks(order, igat_cfg.batch_size)):
            e = Ensemble(members=tuple(members), combiner=Combiner(igat_cfg.combiner))
            Xb, yb = X_all[batch_idx], y_all[batch_idx]
            attack_rng = np.random.default_rng((seed, _SEED_ATTACK, epoch, b))
            X_adv, y_adv = generate_global_adversarials(e, Xb, yb, igat_cfg.attack,
                                                        rng=attack_rng)
            dist_rng = np.random.default_rng((seed, _SEED_DISTRIBUTE, epoch, b))
            distributed = distribute_batch(e, (X_adv, y_adv), igat_cfg.rule, dist_rng)
            grads, comps = igat_param_grads(e, Xb, yb, distributed, adp_cfg, igat_cfg)
            apply(grads, velocity, igat_cfg.lr_finetune)
            for k, v in comps.items():
                comp_sums[k] = comp_sums.get(k, 0.0) + v
            batches += 1
        record("finetune", comp_sums, batches)

    final = Ensemble(members=tuple(members), combiner=Combiner(igat_cfg.combiner))
    return final, metrics
