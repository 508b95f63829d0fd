"""Wire messages exchanged by sensors.

TDMA slots carry a bare :class:`Heartbeat`. A recovery mini-slot carries a
:class:`Bundle`, since a node gets exactly one mini-slot per recovery round
and may need to relay several kinds of control traffic at once.
"""

from __future__ import annotations

from dataclasses import dataclass

GRANTED = -1  # priority of a request whose reset is already executing


@dataclass(frozen=True)
class NeighborDigest:
    node: int
    base: int | None
    extra: frozenset[int]
    free: frozenset[int]
    idle: bool
    joined: bool


@dataclass(frozen=True)
class Heartbeat:
    sender: int
    base: int | None
    extra: frozenset[int]
    free: frozenset[int]
    idle: bool
    joined: bool
    digest: tuple[NeighborDigest, ...] = ()

    @property
    def slots(self) -> frozenset[int]:
        return self.extra | {self.base} if self.base is not None else self.extra


@dataclass(frozen=True, order=True)
class ResetRequest:
    """A pending or relayed reset request; ``hop`` is the distance travelled.

    Priority :data:`GRANTED` marks a reset that is already executing and
    serializes as ``reset_grant_relay``. ``age`` counts the consecutive
    rounds the request has been echoed back by every neighbor of its
    initiator; relays copy it unchanged.
    """

    priority: int
    initiator: int
    hop: int = 0
    age: int = 0


@dataclass(frozen=True)
class ClearSlots:
    initiator: int
    epoch: int
    hop: int


@dataclass(frozen=True)
class Assign:
    initiator: int
    epoch: int
    hop: int
    slots: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class Release:
    initiator: int
    epoch: int
    hop: int


@dataclass(frozen=True)
class Report:
    """Reset participants' two-hop base-slot context, relayed toward the initiator."""

    initiator: int
    epoch: int
    entries: tuple[tuple[int, tuple[tuple[int, int | None, tuple[int, ...]], ...]], ...]


@dataclass(frozen=True)
class JoinRequest:
    """``taken`` holds every slot in the joiner's two-hop view, ``reserved`` only base slots."""

    new_id: int
    taken: frozenset[int]
    reserved: frozenset[int]


@dataclass(frozen=True)
class JoinGrant:
    joiner: int
    slot: int


@dataclass(frozen=True)
class Bundle:
    sender: int
    round: int
    heartbeat: Heartbeat
    requests: tuple = ()
    reset: ClearSlots | Assign | Release | None = None
    report: Report | None = None
    join_request: JoinRequest | None = None
    join_grants: tuple[JoinGrant, ...] = ()


def _slots(s):
    return sorted(s)


def _digest_record(d: NeighborDigest) -> dict:
    return {"node": d.node, "base": d.base, "extra": _slots(d.extra), "idle": d.idle, "joined": d.joined}


def to_record(msg) -> dict:
    """JSON-friendly form used in traces: ``{"msg": <kind>, ...}``."""
    if isinstance(msg, Heartbeat):
        return {
            "msg": "heartbeat",
            "base": msg.base,
            "extra": _slots(msg.extra),
            "free": _slots(msg.free),
            "idle": msg.idle,
            "joined": msg.joined,
            "digest": [_digest_record(d) for d in msg.digest],
        }
    if isinstance(msg, ResetRequest):
        kind = "reset_grant_relay" if msg.priority == GRANTED else "reset_request"
        return {"msg": kind, "initiator": msg.initiator, "priority": msg.priority, "hop": msg.hop,
                "age": msg.age}
    if isinstance(msg, ClearSlots):
        return {"msg": "clear_slots", "initiator": msg.initiator, "epoch": msg.epoch, "hop": msg.hop}
    if isinstance(msg, Assign):
        return {
            "msg": "assign",
            "initiator": msg.initiator,
            "epoch": msg.epoch,
            "hop": msg.hop,
            "slots": [list(p) for p in msg.slots],
        }
    if isinstance(msg, Release):
        return {"msg": "release", "initiator": msg.initiator, "epoch": msg.epoch, "hop": msg.hop}
    if isinstance(msg, Report):
        return {
            "msg": "report",
            "initiator": msg.initiator,
            "epoch": msg.epoch,
            "entries": [[p, [[q, b, list(x)] for q, b, x in ctx]] for p, ctx in msg.entries],
        }
    if isinstance(msg, JoinRequest):
        return {
            "msg": "join_request",
            "new_id": msg.new_id,
            "taken": _slots(msg.taken),
            "reserved": _slots(msg.reserved),
        }
    if isinstance(msg, JoinGrant):
        return {"msg": "join_grant", "joiner": msg.joiner, "slot": msg.slot}
    if isinstance(msg, Bundle):
        parts = [to_record(msg.heartbeat)]
        parts += [to_record(r) for r in msg.requests]
        for extra in (msg.reset, msg.report, msg.join_request):
            if extra is not None:
                parts.append(to_record(extra))
        parts += [to_record(g) for g in msg.join_grants]
        return {"msg": "bundle", "round": msg.round, "parts": parts}
    raise TypeError(f"not a protocol message: {msg!r}")
