"""Classifier, utility losses and the three-phase distillation driver."""

from .algorithm import (
    LOSS_KINDS,
    DistillConfig,
    DistillResult,
    DistillState,
    EvalReport,
    UtilityFactory,
    decode_images,
    decode_synthetic,
    evaluate,
    init_state,
    joint_objective,
    joint_step,
    lambda_schedule,
    load_checkpoint,
    run_algorithm1,
    run_phase1,
    run_phase2,
    run_phase3,
    save_checkpoint,
    train_and_test,
)
from .classifier import (
    ClassifierConfig,
    accuracy,
    classifier_features,
    classifier_logits,
    cross_entropy,
    init_classifier,
    train_classifier,
)
from .losses import ExpertTrajectory, inner_unroll, loss_dm, loss_gm, loss_tm, param_gradients, train_expert
