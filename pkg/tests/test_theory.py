import math

import numpy as np
import pytest

from ensemblade import theory
from ensemblade.data import SyntheticSpec, from_arrays, generate
from ensemblade.ensemble import Combiner, CombinerKind, combine, misclassified_rows
from ensemblade.nnet import Activation, MlpArchitecture, init_mlp
from ensemblade.theory import (ClassifierState, RiskEstimate, TheoryConstants,
                               build_ambiguous_pairs, crossing_point,
                               ensemble_risk_upper_bound, monte_carlo_risks,
                               pair_loss_ensemble, pair_loss_single,
                               pair_threshold, sample_classifier_state,
                               simulate_concrete_pair, simulate_pair_block,
                               single_risk_closed_form, toy_example,
                               verify_lemma_bound)

AVG = Combiner(CombinerKind.AVERAGE)
MAX = Combiner(CombinerKind.MAX)

TC = TheoryConstants(J=2.5, B=1.0, lambda_tilde=1.0, xi=0.5, num_classes=2)


def two_point_dataset():
    return from_arrays(np.array([[0.3], [0.7]]), np.array([0, 1]),
                       num_classes=2, name="pair")


def test_constants_validation():
    with pytest.raises(ValueError):
        TheoryConstants(J=2.0, B=1.0, lambda_tilde=1.0, xi=0.0, num_classes=2)
    with pytest.raises(ValueError):
        TheoryConstants(J=3.0, B=1.0, lambda_tilde=1.0, xi=1.5, num_classes=2)
    with pytest.raises(ValueError):
        TheoryConstants(J=3.0, B=-1.0, lambda_tilde=1.0, xi=0.0, num_classes=2)


def test_pair_threshold_value_and_homogeneity():
    assert pair_threshold(TC) == pytest.approx(0.4, abs=1e-15)
    doubled = TheoryConstants(J=5.0, B=1.0, lambda_tilde=1.0, xi=0.5,
                              num_classes=2)
    assert pair_threshold(doubled) == pytest.approx(0.2, abs=1e-15)
    singular = TheoryConstants(J=2.5, B=1.0, lambda_tilde=1.0, xi=1.0,
                               num_classes=2)
    with pytest.raises(ValueError):
        pair_threshold(singular)


def test_two_point_dataset_has_one_pair():
    pairs = build_ambiguous_pairs(two_point_dataset(), TC)
    assert pairs.pairs == ((0, 1),)
    assert pairs.threshold == pytest.approx(0.4)


def test_single_class_dataset_has_no_pairs():
    ds = from_arrays(np.zeros((5, 2)), np.zeros(5, dtype=int), num_classes=2)
    with pytest.warns(UserWarning, match="pairs"):
        pairs = build_ambiguous_pairs(ds, TC)
    assert pairs.pairs == ()


def brute_force_pairs(ds, tau):
    X, y = ds.features_matrix(), ds.labels_array()
    out = []
    for i in range(len(y)):
        for j in range(i + 1, len(y)):
            if y[i] != y[j] and np.linalg.norm(X[i] - X[j]) <= tau:
                out.append((i, j))
    return tuple(out)


def test_pairs_match_brute_force():
    spec = SyntheticSpec(kind="gaussian_blobs", n_per_class=25, num_classes=2,
                         d=2, class_separation=0.5, noise=0.6, seed=2)
    ds = generate(spec)
    pairs = build_ambiguous_pairs(ds, TC)
    assert pairs.pairs == brute_force_pairs(ds, pairs.threshold)
    assert all(i < j for i, j in pairs.pairs)
    assert len(set(pairs.pairs)) == len(pairs.pairs)


def test_risk_polynomials():
    assert single_risk_closed_form(0.0) == 1.0
    assert single_risk_closed_form(1.0) == 0.5
    assert single_risk_closed_form(0.6) == pytest.approx(0.58, abs=1e-15)
    assert ensemble_risk_upper_bound(0.0) == 1.0
    assert ensemble_risk_upper_bound(1.0) == 0.25
    assert ensemble_risk_upper_bound(0.6) == pytest.approx(0.4708, abs=1e-15)
    with pytest.raises(ValueError):
        single_risk_closed_form(1.2)
    with pytest.raises(ValueError):
        ensemble_risk_upper_bound(-0.1)


def test_crossing_point_bracket_and_bound():
    r = crossing_point()
    assert r <= 0.425
    f = lambda p: single_risk_closed_form(p) - ensemble_risk_upper_bound(p)
    assert f(r - 1e-6) * f(r + 1e-6) < 0
    # The difference polynomial factors cleanly; its root is 1 - 1/sqrt(3).
    assert r == pytest.approx(1 - 1 / math.sqrt(3), abs=1e-10)


def test_crossing_point_matches_grid_scan():
    r = crossing_point()
    grid = np.arange(1e-6, 1.0, 1e-6)
    diff = (1 - grid + grid ** 2 / 2) - (1 - 3 * grid ** 2 + 3 * grid ** 3
                                         - 0.75 * grid ** 4)
    sign_change = np.nonzero(np.diff(np.sign(diff)) != 0)[0]
    assert len(sign_change) == 1
    assert abs(grid[sign_change[0]] - r) <= 1e-5


def test_state_sampler_edge_cases():
    rng = np.random.default_rng(0)
    assert all(sample_classifier_state(1.0, rng) is not ClassifierState.WRONG_ON_BOTH
               for _ in range(1000))
    assert all(sample_classifier_state(0.0, rng) is ClassifierState.WRONG_ON_BOTH
               for _ in range(1000))


def test_state_sampler_frequencies():
    rng = np.random.default_rng(1)
    counts = {s: 0 for s in ClassifierState}
    n = 1_000_000
    states = theory._sample_states(0.6, n, rng)
    for s in ClassifierState:
        counts[s] = int(np.sum(states == s.value))
    assert counts[ClassifierState.CORRECT_ON_FIRST] / n == pytest.approx(
        0.42, abs=0.002)
    assert counts[ClassifierState.CORRECT_ON_SECOND] / n == pytest.approx(
        0.42, abs=0.002)
    assert counts[ClassifierState.WRONG_ON_BOTH] / n == pytest.approx(
        0.16, abs=0.002)


def test_event_probabilities_sum_to_one():
    for p in np.linspace(0, 1, 11):
        q = p - p * p / 2
        assert 2 * q + (1 - p) ** 2 == pytest.approx(1.0, abs=1e-15)


def test_pair_loss_tables():
    assert pair_loss_single(ClassifierState.CORRECT_ON_FIRST) == 0.5
    assert pair_loss_single(ClassifierState.CORRECT_ON_SECOND) == 0.5
    assert pair_loss_single(ClassifierState.WRONG_ON_BOTH) == 1.0
    C1, C2, W = (ClassifierState.CORRECT_ON_FIRST,
                 ClassifierState.CORRECT_ON_SECOND,
                 ClassifierState.WRONG_ON_BOTH)
    assert pair_loss_ensemble(C1, C1) == 0.5
    assert pair_loss_ensemble(C2, C2) == 0.5
    assert pair_loss_ensemble(C1, C2) == 0.0
    assert pair_loss_ensemble(C2, C1) == 0.0
    assert pair_loss_ensemble(W, C1) == 1.0
    assert pair_loss_ensemble(C2, W) == 1.0


def test_monte_carlo_degenerate_and_deterministic():
    single, ens = monte_carlo_risks(0.0, 10_000, seed=3)
    assert single.mean == 1.0 and ens.mean == 1.0
    again = monte_carlo_risks(0.0, 10_000, seed=3)
    assert (single, ens) == again


def test_monte_carlo_matches_closed_forms_at_p06():
    single, ens = monte_carlo_risks(0.6, 1_000_000, seed=4)
    assert single.mean == pytest.approx(0.58, abs=0.002)
    assert ens.mean == pytest.approx(0.4708, abs=0.002)
    assert single.half_width_95 == pytest.approx(
        1.96 * math.sqrt(single.mean * (1 - single.mean) / single.trials))


def _valid_t_s(rng, n, J):
    u = rng.random(n)
    v = 1.0 - rng.random(n)
    return 0.5 + 1.0 / J + u * (0.5 - 1.0 / J), 0.5 + v / J


@pytest.mark.parametrize("combiner", [AVG, MAX])
def test_mixed_states_never_lose(combiner):
    # One classifier correct on each example: the combination covers both.
    rng = np.random.default_rng(8)
    n = 10_000
    a = np.full(n, ClassifierState.CORRECT_ON_FIRST.value)
    b = np.full(n, ClassifierState.CORRECT_ON_SECOND.value)
    a_first, a_second = theory._realize_scores(a, *_valid_t_s(rng, n, TC.J), 2)
    b_first, b_second = theory._realize_scores(b, *_valid_t_s(rng, n, TC.J), 2)
    first = combine(np.stack([a_first, b_first], axis=1), combiner)
    second = combine(np.stack([a_second, b_second], axis=1), combiner)
    lost = (misclassified_rows(first, np.zeros(n, dtype=np.int64))
            | misclassified_rows(second, np.ones(n, dtype=np.int64)))
    assert not np.any(lost)


@pytest.mark.parametrize("combiner", [AVG, MAX])
def test_same_state_pairs_lose_half(combiner):
    rng = np.random.default_rng(9)
    n = 10_000
    a = np.full(n, ClassifierState.CORRECT_ON_FIRST.value)
    a_first, a_second = theory._realize_scores(a, *_valid_t_s(rng, n, TC.J), 2)
    b_first, b_second = theory._realize_scores(a, *_valid_t_s(rng, n, TC.J), 2)
    first = combine(np.stack([a_first, b_first], axis=1), combiner)
    second = combine(np.stack([a_second, b_second], axis=1), combiner)
    loss = 0.5 * (misclassified_rows(first, np.zeros(n, dtype=np.int64))
                  + misclassified_rows(second, np.ones(n, dtype=np.int64)))
    assert np.all(loss == 0.5)


def test_concrete_simulation_respects_upper_bound():
    singles, ensembles = simulate_pair_block(0.7, TC, AVG, seed=5,
                                             trials=100_000)
    bound = ensemble_risk_upper_bound(0.7)
    sigma = ensembles.std(ddof=1) / math.sqrt(len(ensembles))
    assert ensembles.mean() <= bound + 3 * sigma
    # The single-classifier estimate has an exact closed form, not a bound.
    assert singles.mean() == pytest.approx(single_risk_closed_form(0.7),
                                           abs=0.005)


def test_simulate_concrete_pair_single_trial():
    rng = np.random.default_rng(10)
    ls, le = simulate_concrete_pair(0.6, TC, AVG, rng)
    assert ls in (0.0, 0.5, 1.0) and le in (0.0, 0.5, 1.0)


def test_lemma_bound_identical_points():
    model = init_mlp(MlpArchitecture((2, 8, 3), Activation.TANH), 0)
    x = np.array([0.1, -0.2])
    report = verify_lemma_bound(model, x, x)
    assert report.bound_holds
    assert report.l2_gap == 0.0
    assert math.isnan(report.lipschitz_ratio)


def test_lemma_bound_never_violated():
    model = init_mlp(MlpArchitecture((2, 8, 3), Activation.TANH), 1)
    rng = np.random.default_rng(1)
    for _ in range(1000):
        report = verify_lemma_bound(model, rng.normal(size=2),
                                    rng.normal(size=2))
        assert report.bound_holds
        assert np.all(report.per_class_gaps <= report.sqrt_c_bound + 1e-15)


def test_lemma_bound_binary_symmetry():
    model = init_mlp(MlpArchitecture((2, 5, 2), Activation.SIGMOID), 2)
    rng = np.random.default_rng(2)
    for _ in range(50):
        report = verify_lemma_bound(model, rng.normal(size=2),
                                    rng.normal(size=2))
        assert report.per_class_gaps[0] == pytest.approx(
            report.per_class_gaps[1], abs=1e-15)


def test_toy_example_losses():
    report = toy_example()
    assert report.single_model_loss == 0.5
    assert report.max_ensemble_loss == 0.0
    assert report.average_ensemble_loss == 0.0


def test_risk_estimate_half_width():
    est = RiskEstimate.from_mean(0.5, 400)
    assert est.half_width_95 == pytest.approx(1.96 * 0.5 / 20)
