"""Write-all-with-collision slot semantics.

A transmitter writes to every neighbor at once. A receiver hears the write
only if exactly one neighbor transmitted and it did not transmit itself
(half-duplex); two or more writers leave it unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping

from .topology import Topology

DELIVERED = "delivered"
COLLISION = "collision"
SILENCE = "silence"


class KernelError(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class SlotIndex:
    """Position in global time.

    ``slot`` runs over ``[0, P)`` for TDMA slots; recovery mini-slots that
    follow a frame's TDMA part are numbered ``P + m``.
    """

    frame: int
    slot: int


@dataclass(frozen=True)
class WritePayload:
    sender: int
    body: Any


@dataclass(frozen=True)
class KernelEvent:
    receiver: int
    slot: SlotIndex
    outcome: str
    payload: WritePayload | None = None

    def to_record(self, body_record: Callable[[Any], Any] | None = None) -> dict:
        rec = {"frame": self.slot.frame, "slot": self.slot.slot, "rx": self.receiver, "outcome": self.outcome}
        if self.payload is not None:
            rec["tx"] = self.payload.sender
            if body_record is not None:
                rec["msg"] = body_record(self.payload.body)
        return rec

    def to_json(self, body_record: Callable[[Any], Any] | None = None) -> str:
        return json.dumps(self.to_record(body_record), separators=(",", ":"), sort_keys=False)


class Kernel:
    """Stateful wrapper that enforces monotone slot order across calls."""

    def __init__(self, topology: Topology):
        self.topology = topology
        self.last: SlotIndex | None = None

    def _advance(self, slot: SlotIndex) -> None:
        if self.last is not None and slot <= self.last:
            raise KernelError(f"time skew: {slot} after {self.last}")
        self.last = slot

    def step(self, transmitters: Mapping[int, WritePayload], slot: SlotIndex) -> list[KernelEvent]:
        self._advance(slot)
        return step(self.topology, transmitters, slot)

    def deliveries(self, transmitters: Mapping[int, WritePayload], slot: SlotIndex) -> tuple[list, list]:
        self._advance(slot)
        return deliveries(self.topology, transmitters)


def deliveries(t: Topology, transmitters: Mapping[int, WritePayload]) -> tuple[list, list]:
    """Sparse form of :func:`step`: ``(delivered, collided)``.

    ``delivered`` holds ``(receiver, payload)`` pairs and ``collided`` the
    receivers that saw two or more writers, both sorted by receiver id.
    Every other live node observes silence.
    """
    plan, collided = _plan(t, frozenset(transmitters))
    return [(r, transmitters[s]) for r, s in plan], list(collided)


def _plan(t: Topology, senders: frozenset) -> tuple[tuple, tuple]:
    # schedules repeat frame after frame, so memoize per topology version
    cache = t.__dict__.setdefault("_wac_plans", {})
    if cache.get("version") != t.version or len(cache) > 4096:
        cache.clear()
        cache["version"] = t.version
    hit = cache.get(senders)
    if hit is not None:
        return hit
    adj = t.adj
    heard: dict[int, int | None] = {}
    for sender in senders:
        if sender not in adj:
            raise KernelError(f"ghost transmitter: {sender}")
        for r in adj[sender]:
            if r in senders:
                continue
            heard[r] = sender if r not in heard else None
    plan, collided = [], []
    for r in sorted(heard):
        if heard[r] is None:
            collided.append(r)
        else:
            plan.append((r, heard[r]))
    hit = cache[senders] = (tuple(plan), tuple(collided))
    return hit


def step(t: Topology, transmitters: Mapping[int, WritePayload], slot: SlotIndex) -> list[KernelEvent]:
    """One event per live node for ``slot``, sorted by receiver id."""
    delivered, collided = deliveries(t, transmitters)
    got = dict(delivered)
    hit = set(collided)
    events = []
    for r in t.nodes:
        if r in got:
            events.append(KernelEvent(r, slot, DELIVERED, got[r]))
        elif r in hit:
            events.append(KernelEvent(r, slot, COLLISION))
        else:
            events.append(KernelEvent(r, slot, SILENCE))
    return events


def run_frame(
    t: Topology,
    schedule: Iterable[Mapping[int, WritePayload]],
    frame: int,
) -> list[KernelEvent]:
    """Concatenate :func:`step` over the frame's slots in order."""
    events: list[KernelEvent] = []
    for s, transmitters in enumerate(schedule):
        events.extend(step(t, transmitters, SlotIndex(frame, s)))
    return events
