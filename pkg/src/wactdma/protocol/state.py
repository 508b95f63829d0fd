"""Per-sensor protocol state."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .messages import Bundle, NeighborDigest, Release

IDLE = "idle"
SCHEDULING = "scheduling"
ARBITRATING = "arbitrating"
RESETTING = "resetting"
REASSIGNING = "reassigning"
MODES = (IDLE, SCHEDULING, ARBITRATING, RESETTING, REASSIGNING)
CONTENDING = (SCHEDULING, ARBITRATING)
IN_RESET = (RESETTING, REASSIGNING)

OVERLAP_TIER = 0
TIMEOUT_TIER = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    """Protocol parameters.

    Timing constants below ``bandwidth_extension`` count recovery rounds
    (one round per recovery frame). A contender starts its reset once every
    neighbor has echoed its request for ``arbitration_window`` rounds; the
    window must exceed twice the three-hop relay delay minus one for
    distance-3 exclusion to hold.
    """

    period: int
    tau: int = 3
    recovery_stride: int = 1
    id_capacity: int = 64
    bandwidth_extension: bool = True
    arbitration_window: int = 6
    collect_rounds: int = 4
    assign_rounds: int = 2
    release_rounds: int = 2
    lease_rounds: int = 3
    grant_hold_rounds: int = 3

    def __post_init__(self):
        if self.period < 1:
            raise ConfigError("period too small: P must be positive")
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")
        if self.recovery_stride < 1:
            raise ConfigError("recovery_stride must be >= 1")
        if self.id_capacity < 1:
            raise ConfigError("id_capacity must be >= 1")

    def is_recovery_frame(self, frame: int) -> bool:
        return frame % self.recovery_stride == self.recovery_stride - 1

    def round_of(self, frame: int) -> int:
        return frame // self.recovery_stride

    @property
    def departure_frames(self) -> int:
        # a live neighbor is heard at least once per recovery frame
        return max(self.tau, self.recovery_stride)

    @property
    def stability_frames(self) -> int:
        return max(self.tau, 3)


@dataclass
class NeighborEntry:
    base: int | None = None
    extra: frozenset[int] = frozenset()
    free: frozenset[int] = frozenset()
    idle: bool = True
    joined: bool = True
    digest: dict[int, NeighborDigest] = field(default_factory=dict)
    freshness: int = 0
    missed: int = 0
    heard: bool = False
    heard_tdma: bool = False
    expected: bool = False
    source: object = field(default=None, repr=False, compare=False)

    @property
    def slots(self) -> frozenset[int]:
        return self.extra | {self.base} if self.base is not None else self.extra


@dataclass
class ResetState:
    mode: str = IDLE
    initiator: int | None = None
    hop: int = 0
    priority: int = TIMEOUT_TIER
    epoch: int = -1
    stage_round: int = 0
    streak: int = 0
    lease: int = 0
    grant_holder: int | None = None
    granted: bool = False
    reports: dict[int, dict] = field(default_factory=dict)
    assignment: dict[int, int] | None = None
    last_done: tuple[int, int] | None = None
    pending_release: Release | None = None


@dataclass
class SensorState:
    me: int
    config: ProtocolConfig
    base: int | None = None
    extra: frozenset[int] = frozenset()
    joined: bool = False
    table: dict[int, NeighborEntry] = field(default_factory=dict)
    reset: ResetState = field(default_factory=ResetState)
    inbox: dict[int, Bundle] = field(default_factory=dict)
    requests_view: dict[int, tuple[int, int]] = field(default_factory=dict)
    listen_frames: int = 0
    stable_frames: int = 0
    since_extension: int = 0
    view_signature: tuple = ()
    grants: dict[int, tuple[int, int]] = field(default_factory=dict)
    heartbeat: object = None
    notes: list = field(default_factory=list)
    diagnostics: Counter = field(default_factory=Counter)
    # bumped whenever a table entry's content changes; keys the derived-view caches
    table_version: int = 0
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def invalidate(self) -> None:
        """Call after editing ``table`` entries by hand."""
        self.table_version += 1

    @property
    def slots(self) -> frozenset[int]:
        return self.extra | {self.base} if self.base is not None else self.extra

    @property
    def mode(self) -> str:
        return self.reset.mode

    @property
    def claim(self) -> frozenset[int]:
        return self.slots
