"""Decision-focused portfolio optimization: SPO+ training through a mean-variance rebalancing problem."""

from .backtest import BacktestConfig, BacktestLedger, rebalance_schedule, run_backtest, run_grid
from .interventions import VariantSpec, apply_variant, clip_predictions, partial_adjust, rescale_predictions
from .market_data import MarketPanel, estimate_covariance, load_panel
from .metrics import PerformanceSummary, dump_prediction_diagnostics, summarize
from .optimizer import DecisionProblem, oracle_decision, solve, solve_batch, verify_kkt
from .predictor import Hyperparams, PredictorParams, TrainSample, predict, search_hyperparams, spo_plus_loss, train

__all__ = [
    "BacktestConfig", "BacktestLedger", "rebalance_schedule", "run_backtest", "run_grid",
    "VariantSpec", "apply_variant", "clip_predictions", "partial_adjust", "rescale_predictions",
    "MarketPanel", "estimate_covariance", "load_panel",
    "PerformanceSummary", "dump_prediction_diagnostics", "summarize",
    "DecisionProblem", "oracle_decision", "solve", "solve_batch", "verify_kkt",
    "Hyperparams", "PredictorParams", "TrainSample", "predict", "search_hyperparams", "spo_plus_loss", "train",
]
__version__ = "0.1.0"
