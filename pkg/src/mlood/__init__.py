"""Multi-label out-of-distribution detection toolkit.

Energy-based OOD scores with max/sum/top-k aggregation, the classic
logit/probability/ODIN/Mahalanobis/LOF/isolation-forest baselines, the
FPR@TPR / AUROC / AUPR evaluation protocol, hyperparameter tuning on
synthesized validation data, and a seeded synthetic multi-label harness.
"""

from .baselines import (
    FittedDetector,
    IsolationForestModel,
    LofIndex,
    MahalanobisModel,
    fit_iforest,
    fit_lof,
    fit_mahalanobis,
    iforest_score,
    lof_score,
    mahalanobis_labelwise,
    mahalanobis_score,
)
from .core import LabeledDataset, Rng, ScoreSpec, matrix_new, row
from .harness import (
    LinearModel,
    ToyConfig,
    ToyTask,
    TrainConfig,
    bce_input_grad,
    bce_loss,
    bce_param_grad,
    forward,
    gen_task,
    init_model,
    mean_average_precision,
    train,
)
from .metrics import (
    EvalReport,
    aupr,
    auroc,
    detect,
    evaluate,
    fpr_at_tpr,
    select_threshold,
)
from .scoring import (
    ScoreData,
    aggregate,
    joint_energy,
    labelwise_energy,
    max_energy,
    max_logit,
    msp,
    odin,
    score,
    sigmoid_prob,
    sum_logit,
    topk_joint_energy,
)
from .tuning import (
    TuneResult,
    ValidationSet,
    synth_validation,
    tune_mahalanobis,
    tune_odin,
)

__version__ = "0.1.0"
