from .messages import Bundle, Heartbeat, to_record
from .reassign import PeriodTooSmall, reassign_slots
from .sensor import (
    arbitrate,
    claim_extra_bandwidth,
    execute_reset,
    observe,
    observe_frame_end,
    on_departure_detect,
    on_join,
    on_slot,
    perturb,
)
from .state import ConfigError, ProtocolConfig, SensorState

__all__ = [
    "Bundle",
    "ConfigError",
    "Heartbeat",
    "PeriodTooSmall",
    "ProtocolConfig",
    "SensorState",
    "arbitrate",
    "claim_extra_bandwidth",
    "execute_reset",
    "observe",
    "observe_frame_end",
    "on_departure_detect",
    "on_join",
    "on_slot",
    "perturb",
    "reassign_slots",
    "to_record",
]
