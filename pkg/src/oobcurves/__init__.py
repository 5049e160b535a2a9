"""Random-forest OOB performance curves and their analytic expectations."""

from .cart import Tree, TreeParams, predict_tree, train_tree
from .curves import (OOBCurve, average_curves, compute_curve, nonmonotonicity_report,
                     read_curves_csv, write_curves_csv)
from .datasets import Dataset, TaskKind, load_csv, save_csv, synthesize
from .forest import (Forest, ForestParams, VoteMatrix, load_forest, oob_predictions,
                     oob_votes_prefix, save_forest, train_forest)
from .measures import (MeasureId, auc, auc_multiclass, balanced_error_rate, brier,
                       error_rate, log_loss, regression_measures)
from .study import (StudyConfig, convergence_summary, correlate_curves, kendall_tau_b,
                    run_study)
from .theory import (DifficultyVector, ExpectedCurve, auc_two_point_scenario,
                     estimate_difficulties, expected_brier, expected_curve,
                     expected_error_curve, expected_error_rate,
                     expected_logloss_exact, expected_logloss_taylor)

__version__ = "0.1.0"
