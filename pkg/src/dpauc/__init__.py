"""Private AUC computation for federated evaluation under label differential privacy."""

from .metrics import (
    ConfusionCounts,
    Dataset,
    RocCurve,
    Sample,
    ThresholdGrid,
    auc_pairwise,
    auc_rank,
    auc_trapezoid,
    confusion_at,
    rank_scores,
    roc_canonicalize,
    tpr_fpr,
)
from .mechanisms import BudgetAccountant, Mechanism, NoiseSpec, RrSpec, SeededRng
from .federation import (
    PartitionMode,
    Protocol,
    ProtocolConfig,
    SensitivityMode,
    TrialFailure,
    run_protocol,
)
from .analysis import ExperimentResult, monte_carlo

__version__ = "0.1.0"
