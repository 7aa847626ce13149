"""Singing-model maximal independent set protocols: simulation and verification."""

from .analysis import (
    alpha_bounds,
    check_async_contraction,
    check_dynamic_contraction,
    check_eligibility_probability,
    check_static_contraction,
    classify,
    is_mis,
    locality_violations,
    one_round_leader_check,
    refined_status,
)
from .async_engine import (
    Fixed,
    SchedulePolicy,
    Scripted,
    TimingParams,
    Uniform,
    detect_collisions,
    hears_from,
    run_async,
    run_async_batch,
    stable_in_rounds,
)
from .coin import estimate_coin_bounds, run_competition, y_lower_bound
from .estimator import SingingMIS
from .generators import churn_script, generate, parse_generator
from .network import (
    AddAgent,
    AddEdge,
    ChangeEvent,
    ChangeScript,
    Network,
    NetworkError,
    RemoveAgent,
    RemoveEdge,
    affected_edges,
    apply_changes,
    build_network,
)
from .protocol import (
    AgentState,
    ConfigError,
    ContractViolation,
    HearingMode,
    ProtocolVariant,
    listen_set,
    resolve_heard,
    sample_ell,
    sing_notes,
    transition,
)
from .sync_engine import is_converged, run_sync, run_sync_batch

__version__ = "0.1.0"
