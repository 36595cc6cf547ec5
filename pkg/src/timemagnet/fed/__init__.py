from .federated import (
    AggregationError,
    RoundLog,
    fedavg_aggregate,
    n_sampled,
    run_federated,
    sample_clients,
    worker_count,
)
from .metrics import (
    MetricsReport,
    accuracy,
    confusion_matrix,
    evaluate,
    macro_f1,
    per_class_f1,
    pr_points,
    predict,
    report_from_logits,
)
from .schedule import EarlyStopState, PlateauState, early_stop_update, lr_plateau_step
from .training import EpochLog, RunResult, TrainStats, local_train, run_centralized, total_loss, train_epoch
