"""Max-margin classifiers that learn from privileged features available only
at training time and adapt a pretrained source decision function to a new
domain, plus the cross-validation, metrics, and experiment machinery around
them."""

from .adaptive import BIAS_MODES, fit_adaptive_svm, fit_adaptive_svm_plus
from .data_io import (SynthConfig, TripletDataset, load_dataset, load_model,
                      make_synthetic, save_dataset, save_model,
                      split_train_test)
from .errors import (BadLabel, ConfigMismatch, DegenerateLabels,
                     DegenerateVariance, DimensionMismatch, Empty, EmptyPool,
                     EmptyTestSet, Infeasible, LengthMismatch, LupiMarginError,
                     MaxIterations, MissingSource, NoPositives, NotPSD,
                     ParseError, RowCountMismatch, SolverFailure,
                     TooFewSamples, VersionMismatch)
from .harness import (ExperimentReport, ProtocolConfig, UnitResult,
                      default_grids, ratio_preserving_pool, run_one_vs_rest,
                      run_pairwise, run_ratio_sweep)
from .kernels import KernelSpec, eval_kernel, gram_matrix, symmetric_gram
from .metrics import (ScoredPredictions, accuracy, average_precision,
                      mean_and_stderr, z_test)
from .model_selection import (ClassifierTrainer, CVGrid, GridSearchResult,
                              ParamPoint, RefitSpec, decade_grid, grid_search,
                              kfold_indices, retrain_full)
from .models import (ADAPTIVE_KINDS, MODEL_KINDS, PLUS_KINDS,
                     CorrectingRecord, FitDiagnostics, SourceScores,
                     TrainedModel, adapted_decision, decision_values, predict,
                     source_scores, sv_threshold)
from .qp import DualSolution, QPProblem, default_max_iter, kkt_residual, solve_qp
from .svm import fit_svm, fit_svm_plus

__version__ = "0.1.0"

__all__ = [
    "ADAPTIVE_KINDS", "BIAS_MODES", "BadLabel", "CVGrid", "ClassifierTrainer",
    "ConfigMismatch", "CorrectingRecord", "DegenerateLabels",
    "DegenerateVariance", "DimensionMismatch", "DualSolution", "Empty",
    "EmptyPool", "EmptyTestSet", "ExperimentReport", "FitDiagnostics",
    "GridSearchResult", "Infeasible", "KernelSpec", "LengthMismatch",
    "LupiMarginError", "MODEL_KINDS", "MaxIterations", "MissingSource",
    "NoPositives", "NotPSD", "PLUS_KINDS", "ParamPoint", "ParseError",
    "ProtocolConfig", "QPProblem", "RefitSpec", "RowCountMismatch",
    "ScoredPredictions", "SolverFailure", "SourceScores", "SynthConfig",
    "TooFewSamples", "TrainedModel", "TripletDataset", "UnitResult",
    "VersionMismatch", "accuracy", "adapted_decision", "average_precision",
    "decade_grid", "decision_values", "default_grids", "default_max_iter",
    "eval_kernel", "fit_adaptive_svm", "fit_adaptive_svm_plus", "fit_svm",
    "fit_svm_plus", "gram_matrix", "grid_search", "kfold_indices",
    "kkt_residual", "load_dataset", "load_model", "make_synthetic",
    "mean_and_stderr", "predict", "ratio_preserving_pool", "retrain_full",
    "run_one_vs_rest", "run_pairwise", "run_ratio_sweep", "save_dataset",
    "save_model", "solve_qp", "source_scores", "split_train_test",
    "sv_threshold", "symmetric_gram", "z_test",
]
