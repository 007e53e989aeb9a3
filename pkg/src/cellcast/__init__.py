"""Peak-hour clustering of cellular traffic and per-cluster multi TCN-LSTM forecasting."""

from .cluster import ClusterAssignment, CorrelationMatrix, assign_cells, cluster_groups, correlation_matrix, merge_groups
from .errors import CellcastError
from .evaluation import EvalReport, evaluate, mae, mape
from .ingest import (
    HourlyCellSeries,
    RawRecord,
    Regime,
    SyntheticSpec,
    aggregate_hourly,
    generate_synthetic,
    parse_record,
    select_central_cells,
)
from .model import ModelSpec, MultiTcnLstmConfig, build, build_baseline_lstm, build_baseline_mlp
from .profile import GroupProfile, daily_peak_hour, group_by_peak_hour, pearson, representative_peak_hour
from .trainer import NormStats, TrainConfig, TrainRun, fit_norm, make_windows, run_experiment, train

__version__ = "0.1.0"
