"""Sparse multiclass classification with sequential L1-regularized maxent."""
from sl1max._accel import backend_name
from sl1max.core import (LAMBDA_MAX, Dataset, DistributionKind, EmpiricalStats, Example, SparseVector, WeightMatrix,
                         dot, empirical_stats)
from sl1max.ensemble import (BinaryPairModel, EnsembleModel, binary_prob, predict_code, predict_top,
                             train_ensemble)
from sl1max.evaluation import (ScoredItem, count_nonzero, cross_validate, evaluate, fit, kfold, micro_f_optimal,
                               synth_generate, top_class_error)
from sl1max.io import parse_dataset, parse_model, read_dataset, read_model, serialize_model, write_model
from sl1max.multilabel import ExpansionReport, WeightingMode, binary_targets, class_priors_multilabel, expand
from sl1max.trainers import (TrainConfig, TrainedModel, TrainState, apply_update, expected_feature, loss, predict,
                             predict_proba, train)
from sl1max.update import PricingState, UpdateProposal, bound_decrease, propose_delta, select_update

__version__ = "0.1.0"
