"""Federated SupLinUCB: layered linear contextual bandits with determinant-triggered communication."""
from .bandit_core import AlgoConfig, ClientState, LayerSchedule, SelectionResult, build_schedule, slucb_select
from .environment import CorruptionAdversary, LinearEnv, NoiseModel, load_context_stream
from .linalg import DeltaStats, RidgeStats, ridge_init
from .metrics import ExperimentLog, RoundRecord, comm_cost, cumulative_regret, elliptical_potential, export
from .orchestrator import (
    ArrivalPattern,
    make_arrivals,
    run_async,
    run_baseline_suplinucb,
    run_corruption_robust,
    run_sync,
    run_variance_adaptive,
)
from .protocol import ServerState, async_trigger, sync_layer, sync_trigger

__version__ = "0.1.0"
