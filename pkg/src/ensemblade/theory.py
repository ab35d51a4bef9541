"""Risk accounting for ensembles on ambiguous example pairs.

The object of study is a pair of nearby examples with different labels and a
pool of borderline classifiers, each of which gets exactly one of the two
examples right unless it is wrong on both. Closed forms give the expected 0-1
pair loss of one classifier drawn from the pool and an upper bound for the
combination of two independent draws. The Monte Carlo helpers verify both
numbers, either abstractly on sampled classifier states or concretely by
materializing score vectors and pushing them through the real combiner and
0-1 indicator code.

Conventions: the first example of the pair carries label 0, the second label
1, and a classifier's non-top probability mass is spread evenly over the
remaining classes. Pair losses take values in {0, 0.5, 1}, so Monte Carlo
sums are kept as integer half-unit counters and scaled once at the end; the
estimates are exactly reproducible for a fixed seed regardless of chunking or
thread count.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import Dataset
from .ensemble import Combiner, CombinerKind, combine, misclassified_rows, zero_one_loss
from .nnet import MlpModel, forward


@dataclass(frozen=True)
class TheoryConstants:
    """Constants of the ambiguity construction.

    J controls both the pair distance threshold and the score band of a
    borderline classifier: the top score on the example it gets right lies in
    [0.5 + 1/J, 1] and its score for that same class on the other example
    falls back into (0.5, 0.5 + 1/J]. B bounds the layer weight norms, B0 the
    input norm, lambda_tilde the activation slope, and xi is a curvature
    allowance with xi <= lambda_tilde**2.
    """

    J: float
    B: float
    lambda_tilde: float
    xi: float
    num_classes: int
    B0: float = 1.0

    def __post_init__(self):
        if self.J <= 2:
            raise ValueError("J must exceed 2")
        if self.B <= 0 or self.B0 <= 0:
            raise ValueError("B and B0 must be positive")
        if self.lambda_tilde <= 0:
            raise ValueError("lambda_tilde must be positive")
        if self.xi > self.lambda_tilde ** 2:
            raise ValueError("xi must not exceed lambda_tilde squared")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")


@dataclass(frozen=True)
class AmbiguousPairSet:
    pairs: tuple[tuple[int, int], ...]
    threshold: float


class ClassifierState(Enum):
    """How one borderline classifier behaves on a fixed ambiguous pair."""

    CORRECT_ON_FIRST = 0
    CORRECT_ON_SECOND = 1
    WRONG_ON_BOTH = 2


@dataclass(frozen=True)
class RiskEstimate:
    mean: float
    trials: int
    half_width_95: float

    @classmethod
    def from_mean(cls, mean: float, trials: int) -> "RiskEstimate":
        hw = 1.96 * math.sqrt(mean * (1.0 - mean) / trials)
        return cls(mean=mean, trials=trials, half_width_95=hw)


@dataclass(frozen=True)
class PredictionGapReport:
    per_class_gaps: np.ndarray
    l2_gap: float
    input_gap: float
    sqrt_c_bound: float
    bound_holds: bool
    lipschitz_ratio: float


@dataclass(frozen=True)
class ToyExampleReport:
    single_model_loss: float
    max_ensemble_loss: float
    average_ensemble_loss: float


def pair_threshold(tc: TheoryConstants) -> float:
    """Distance below which an opposite-label pair counts as ambiguous.

    tau = 1 / (J * B * sqrt(C * (lambda_tilde**2 - xi))). The case
    xi == lambda_tilde**2 has no finite threshold and is rejected.
    """
    gap = tc.lambda_tilde ** 2 - tc.xi
    if gap <= 0:
        raise ValueError("threshold undefined when xi equals lambda_tilde squared")
    return 1.0 / (tc.J * tc.B * math.sqrt(tc.num_classes * gap))


def build_ambiguous_pairs(dataset: Dataset, tc: TheoryConstants) -> AmbiguousPairSet:
    """All cross-label pairs within the threshold, each once with i < j."""
    tau = pair_threshold(tc)
    X = dataset.features_matrix()
    y = dataset.labels_array()
    pairs = []
    for i in range(len(dataset) - 1):
        diffs = X[i + 1:] - X[i]
        dist = np.sqrt(np.sum(diffs * diffs, axis=1))
        hits = np.nonzero((dist <= tau) & (y[i + 1:] != y[i]))[0]
        pairs.extend((i, i + 1 + int(j)) for j in hits)
    if not pairs:
        warnings.warn(
            "no ambiguous pairs at this threshold; decrease J or bring classes closer",
            stacklevel=2,
        )
    return AmbiguousPairSet(pairs=tuple(pairs), threshold=tau)


def single_risk_closed_form(p: float) -> float:
    """Expected pair loss of one classifier drawn from the borderline pool.

    p is the probability that the classifier is correct on any single example;
    the closed form is 1 - p + p**2 / 2.
    """
    _check_p(p)
    return 1.0 - p + p * p / 2.0


def ensemble_risk_upper_bound(p: float) -> float:
    """Worst-case expected pair loss of two independently drawn classifiers
    combined into one predictor: 1 - 3p**2 + 3p**3 - 0.75p**4."""
    _check_p(p)
    return 1.0 - 3.0 * p ** 2 + 3.0 * p ** 3 - 0.75 * p ** 4


def crossing_point() -> float:
    """The p in (0, 1) where the two risk curves meet, found by bisection.

    Below the root the pairing bound exceeds the single risk; above it the
    pair is strictly better. The bracket endpoints have opposite signs of
    single_risk_closed_form - ensemble_risk_upper_bound.
    """
    f = lambda p: single_risk_closed_form(p) - ensemble_risk_upper_bound(p)
    lo, hi = 1e-9, 1.0 - 1e-9
    if not f(lo) < 0 < f(hi):
        raise RuntimeError("bisection bracket lost")
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _check_p(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")


def _sample_states(p: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized state draws encoded as the ClassifierState values 0/1/2.

    Each of the two single-example-correct states has probability p - p**2/2;
    wrong-on-both has (1 - p)**2. The three sum to one.
    """
    q = p - p * p / 2.0
    u = rng.random(n)
    states = np.full(n, ClassifierState.WRONG_ON_BOTH.value, dtype=np.int64)
    states[u < 2.0 * q] = ClassifierState.CORRECT_ON_SECOND.value
    states[u < q] = ClassifierState.CORRECT_ON_FIRST.value
    return states


def sample_classifier_state(p: float, rng: np.random.Generator) -> ClassifierState:
    _check_p(p)
    return ClassifierState(int(_sample_states(p, 1, rng)[0]))


def pair_loss_single(state: ClassifierState) -> float:
    """0-1 pair loss of one borderline classifier: wrong on exactly one
    example unless wrong on both."""
    return 1.0 if state is ClassifierState.WRONG_ON_BOTH else 0.5


def pair_loss_ensemble(state_a: ClassifierState, state_b: ClassifierState) -> float:
    """Worst-case 0-1 pair loss of the combination of two drawn classifiers.

    Mixed single-correct states cover both examples and lose nothing; equal
    single-correct states keep the shared blind spot; any wrong-on-both
    member is charged the full pair.
    """
    if ClassifierState.WRONG_ON_BOTH in (state_a, state_b):
        return 1.0
    return 0.5 if state_a is state_b else 0.0


def monte_carlo_risks(p: float, trials: int, seed: int) -> tuple[RiskEstimate, RiskEstimate]:
    """Abstract-state Monte Carlo of both risks with shared draws.

    Loss values live in {0, 0.5, 1}, so the sums are taken over integer
    half-unit counters and scaled once; the result is bit-stable for a fixed
    seed no matter how the trials are chunked.
    """
    _check_p(p)
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = np.random.default_rng((seed, 0))
    a = _sample_states(p, trials, rng)
    b = _sample_states(p, trials, rng)
    wrong = ClassifierState.WRONG_ON_BOTH.value
    single_halves = int(np.sum(1 + (a == wrong)))
    any_wrong = (a == wrong) | (b == wrong)
    ens_halves = int(np.sum(np.where(any_wrong, 2, np.where(a == b, 1, 0))))
    single = RiskEstimate.from_mean(single_halves / (2.0 * trials), trials)
    ens = RiskEstimate.from_mean(ens_halves / (2.0 * trials), trials)
    return single, ens


def _realize_scores(states, t, s, num_classes):
    """Concrete score vectors of borderline classifiers at both pair points.

    A classifier correct on the first example puts t on class 0 there and
    carries s (just above one half) for class 0 onto the second example;
    correct-on-second mirrors this with class 1. Leftover mass is split
    evenly over the other classes. Rows in the wrong-on-both state are filled
    with the first pattern but are masked out by the callers.
    """
    n = len(states)
    is_second = states == ClassifierState.CORRECT_ON_SECOND.value
    top_class = np.where(is_second, 1, 0)
    at_first_val = np.where(is_second, s, t)
    at_second_val = np.where(is_second, t, s)
    rows = np.arange(n)
    at_first = np.repeat(((1.0 - at_first_val) / (num_classes - 1))[:, None],
                         num_classes, axis=1)
    at_first[rows, top_class] = at_first_val
    at_second = np.repeat(((1.0 - at_second_val) / (num_classes - 1))[:, None],
                          num_classes, axis=1)
    at_second[rows, top_class] = at_second_val
    return at_first, at_second


def _simulate_block(p, tc, combiner, rng, trials):
    """Concrete pair losses for a block of trials; see simulate_concrete_pair."""
    c = tc.num_classes
    states_a = _sample_states(p, trials, rng)
    states_b = _sample_states(p, trials, rng)
    draws = []
    for _ in range(2):
        u = rng.random(trials)
        v = 1.0 - rng.random(trials)  # in (0, 1], keeps the carried score above 0.5
        t = 0.5 + 1.0 / tc.J + u * (0.5 - 1.0 / tc.J)
        s = 0.5 + v / tc.J
        draws.append((t, s))
    a_first, a_second = _realize_scores(states_a, *draws[0], c)
    b_first, b_second = _realize_scores(states_b, *draws[1], c)

    label_first = np.zeros(trials, dtype=np.int64)
    label_second = np.ones(trials, dtype=np.int64)
    wrong = ClassifierState.WRONG_ON_BOTH.value

    single_real = 0.5 * (
        misclassified_rows(a_first, label_first).astype(np.float64)
        + misclassified_rows(a_second, label_second).astype(np.float64)
    )
    loss_single = np.where(states_a == wrong, 1.0, single_real)

    ens_first = combine(np.stack([a_first, b_first], axis=1), combiner)
    ens_second = combine(np.stack([a_second, b_second], axis=1), combiner)
    ens_real = 0.5 * (
        misclassified_rows(ens_first, label_first).astype(np.float64)
        + misclassified_rows(ens_second, label_second).astype(np.float64)
    )
    any_wrong = (states_a == wrong) | (states_b == wrong)
    loss_ens = np.where(any_wrong, 1.0, ens_real)
    return loss_single, loss_ens


def simulate_concrete_pair(p: float, tc: TheoryConstants, combiner: Combiner,
                           rng: np.random.Generator) -> tuple[float, float]:
    """One trial with materialized scores through the real combiner code.

    Draws two classifier states, realizes score vectors for the drawn states,
    and evaluates the strict 0-1 indicator on the combined scores at both pair
    points. Wrong-on-both classifiers contribute their worst-case loss of 1
    without score generation, which keeps the estimate aligned with the
    closed-form upper bound. Returns (single loss, ensemble loss).
    """
    _check_p(p)
    ls, le = _simulate_block(p, tc, combiner, rng, 1)
    return float(ls[0]), float(le[0])


def simulate_pair_block(p: float, tc: TheoryConstants, combiner: Combiner,
                        seed: int, trials: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized batch of simulate_concrete_pair trials for one seed."""
    _check_p(p)
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = np.random.default_rng((seed, 1))
    return _simulate_block(p, tc, combiner, rng, trials)


def verify_lemma_bound(model: MlpModel, x: np.ndarray, z: np.ndarray) -> PredictionGapReport:
    """Compare per-class prediction gaps against sqrt(C) times the L2 gap.

    Also reports the empirical ratio of prediction movement to input movement,
    which is the quantity the smoothness constants are meant to dominate. For
    x == z the ratio is reported as nan.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    hx = forward(model, x).probs
    hz = forward(model, z).probs
    gaps = np.abs(hx - hz)
    l2 = float(np.linalg.norm(hx - hz))
    c = model.arch.num_classes
    bound = math.sqrt(c) * l2
    input_gap = float(np.linalg.norm(x - z))
    ratio = l2 / input_gap if input_gap > 0 else float("nan")
    return PredictionGapReport(
        per_class_gaps=gaps,
        l2_gap=l2,
        input_gap=input_gap,
        sqrt_c_bound=bound,
        bound_holds=bool(np.all(gaps <= bound + 1e-15)),
        lipschitz_ratio=ratio,
    )


# Hand-specified 1-d pair with two specialist classifiers. Each specialist is
# confident on its own side and carries a misleading score onto the other
# side; the scores are chosen so that either combiner flips both mistakes.
_TOY_LEFT = np.array([0.3])
_TOY_RIGHT = np.array([0.7])
_TOY_SCORES = {
    "left_specialist": {0.3: np.array([0.9, 0.1]), 0.7: np.array([0.64, 0.36])},
    "right_specialist": {0.3: np.array([0.37, 0.63]), 0.7: np.array([0.11, 0.89])},
}


def _toy_fn(name):
    table = _TOY_SCORES[name]
    return lambda x: table[float(x[0])]


def toy_example() -> ToyExampleReport:
    """Worked two-point example evaluated through the real ensemble code.

    One specialist alone loses half the pair; combining the two specialists
    under either combiner recovers both points.
    """
    from .data import from_arrays

    ds = from_arrays(np.stack([_TOY_LEFT, _TOY_RIGHT]), np.array([0, 1]),
                     num_classes=2, name="toy_pair")
    left = _toy_fn("left_specialist")
    right = _toy_fn("right_specialist")
    single = zero_one_loss(left, ds)
    max_loss = zero_one_loss(
        lambda x: combine(np.stack([left(x), right(x)]), Combiner(CombinerKind.MAX)), ds
    )
    avg_loss = zero_one_loss(
        lambda x: combine(np.stack([left(x), right(x)]), Combiner(CombinerKind.AVERAGE)), ds
    )
    return ToyExampleReport(
        single_model_loss=single,
        max_ensemble_loss=max_loss,
        average_ensemble_loss=avg_loss,
    )
