"""Ensemble adversarial defense toolkit with a verifiable risk story.

Modules: nnet (bias-free MLPs with hand-rolled gradients), attacks (L-inf
evasion), ensemble (combiners and 0-1 evaluation), defense (diversity
training plus global-adversarial fine-tuning), theory (risk closed forms and
Monte Carlo checks), data (synthetic tasks and CSV), cli (command line).
"""

__version__ = "0.1.0"

from .attacks import AttackConfig, AttackKind, clip_to_ball, estimate_curvature, fgsm, pgd
from .data import Dataset, SyntheticKind, SyntheticSpec, generate, load_csv, save_csv, split
from .defense import (
    AdpConfig,
    DistributedBatch,
    DistributionRule,
    IgatConfig,
    adp_loss,
    distribute_batch,
    distribute_hard,
    distribute_soft,
    generate_global_adversarials,
    geometric_diversity,
    igat_total_loss,
    misclassification_regularizer,
    ranking_scores,
    shannon_entropy,
    train_igat,
)
from .ensemble import (
    Combiner,
    CombinerKind,
    Ensemble,
    accuracy,
    combine,
    ensemble_predict,
    load_ensemble,
    robust_accuracy,
    save_ensemble,
    zero_one_loss,
)
from .nnet import (
    Activation,
    ForwardTrace,
    LabeledExample,
    MlpArchitecture,
    MlpModel,
    cross_entropy,
    forward,
    init_mlp,
    input_gradient,
    load_model,
    param_gradients,
    predict_class,
    save_model,
    sgd_step,
)
from .theory import (
    AmbiguousPairSet,
    ClassifierState,
    RiskEstimate,
    TheoryConstants,
    build_ambiguous_pairs,
    crossing_point,
    ensemble_risk_upper_bound,
    monte_carlo_risks,
    pair_loss_ensemble,
    pair_loss_single,
    pair_threshold,
    sample_classifier_state,
    simulate_concrete_pair,
    single_risk_closed_form,
    toy_example,
    verify_lemma_bound,
)
