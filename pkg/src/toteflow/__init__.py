"""toteflow: discrete-event simulation and decision library for tote-handling
robotic order fulfillment."""

__version__ = "0.1.0"

from .domain import (
    Location,
    MetricsReport,
    Order,
    OrderLine,
    Place,
    Robot,
    SpeedParams,
    SystemKind,
    Tote,
    WarehouseInstance,
    Workstation,
    load_instance,
    save_instance,
    travel_time,
    validate_instance,
)
from .engine import (
    DEFER_ACTION,
    ActionRecord,
    DecisionPoint,
    Stage,
    STAGES,
    WarehouseState,
    apply_action,
    global_reward,
    next_decision,
    reset,
    run_episode,
)
from .generate import InstanceConfig, generate, micro_1, micro_config, preset
from .policies import CsghParams, f_batch, make_policies, make_policy, pair_utility
from .assignment import hungarian_max_weight

__all__ = [
    "ActionRecord",
    "CsghParams",
    "DEFER_ACTION",
    "DecisionPoint",
    "InstanceConfig",
    "Location",
    "MetricsReport",
    "Order",
    "OrderLine",
    "Place",
    "Robot",
    "SpeedParams",
    "Stage",
    "STAGES",
    "SystemKind",
    "Tote",
    "WarehouseInstance",
    "WarehouseState",
    "Workstation",
    "apply_action",
    "f_batch",
    "generate",
    "global_reward",
    "hungarian_max_weight",
    "load_instance",
    "make_policies",
    "make_policy",
    "micro_1",
    "micro_config",
    "next_decision",
    "pair_utility",
    "preset",
    "reset",
    "run_episode",
    "save_instance",
    "travel_time",
    "validate_instance",
]
