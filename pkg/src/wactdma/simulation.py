"""Slotted simulation loop tying topology, kernel, sensors, faults and verifier.

Each frame has ``P`` TDMA slots; a recovery frame additionally has one
mini-slot per possible id (slot numbers ``P .. P + N_cap - 1``), used in
ascending id order. Perturbations and legitimacy checks happen at frame
boundaries; boundary ``F`` is the state right before frame ``F`` runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable

from . import faults
from .kernel import COLLISION, DELIVERED, SILENCE, Kernel, KernelEvent, SlotIndex, WritePayload
from .protocol.messages import NeighborDigest, to_record
from .protocol.reassign import PeriodTooSmall, reassign_slots
from .protocol.sensor import make_heartbeat, observe_frame_end, on_slot, receive, two_hop_view, _view_signature
from .protocol.state import IDLE, NeighborEntry, ProtocolConfig, SensorState
from .topology import Topology
from .verifier import (
    check_legitimacy,
    check_reset_scope,
    concurrent_resets,
    convergence_frame,
    monitor_reset_exclusion,
)


def legitimate_states(topology: Topology, config: ProtocolConfig) -> dict[int, SensorState]:
    """A verifier-legitimate global state: greedy base slots and exact tables."""
    n2 = topology.neighborhoods(2)
    assigned = reassign_slots([(u, {q: (None, ()) for q in n2[u]}) for u in topology.nodes], config.period)
    free = {
        u: frozenset(range(config.period)) - {assigned[u]} - {assigned[q] for q in n2[u]} for u in topology.nodes
    }
    states = {}
    for u in topology.nodes:
        table = {}
        for j in sorted(topology.adj[u]):
            digest = {
                k: NeighborDigest(k, assigned[k], frozenset(), free[k], True, True)
                for k in sorted(topology.adj[j])
                if k != u
            }
            table[j] = NeighborEntry(
                base=assigned[j], free=free[j], idle=True, joined=True, digest=digest, expected=True
            )
        st = SensorState(me=u, config=config, base=assigned[u], joined=True, table=table)
        st.view_signature = _view_signature(two_hop_view(st))
        make_heartbeat(st)
        states[u] = st
    return states


def cold_states(topology: Topology, config: ProtocolConfig) -> dict[int, SensorState]:
    return {u: SensorState(me=u, config=config) for u in topology.nodes}


@dataclass
class RunResult:
    frames: int
    legit: list[bool]
    collision_frames: dict[int, int]
    records: list[dict]
    converged_at: int | None
    exclusion_violations: list[dict]
    scope_violations: list[dict]
    resets: int
    last_perturbation: int | None
    slots_per_node: float
    error: str | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def recovery_frames(self) -> int | None:
        if self.converged_at is None:
            return None
        if self.last_perturbation is None:
            return self.converged_at
        return max(0, self.converged_at - self.last_perturbation)

    def summary(self, chi2: int | None = None) -> dict:
        return {
            "converged_at": self.converged_at,
            "violations": self.exclusion_violations + [{"scope": r} for r in self.scope_violations],
            "chi2": chi2,
            "frames": self.frames,
            "resets": self.resets,
            "recovery_frames": self.recovery_frames,
            "slots_per_node": self.slots_per_node,
            "error": self.error,
        }


class Simulation:
    def __init__(
        self,
        topology: Topology,
        config: ProtocolConfig,
        start: str = "legitimate",
        perturbations: Iterable[faults.PerturbationEvent] = (),
        trace: IO[str] | None = None,
    ):
        self.topology = topology
        self.config = config
        if start == "legitimate":
            self.states = legitimate_states(topology, config)
        elif start == "cold":
            self.states = cold_states(topology, config)
        else:
            raise ValueError(f"unknown start state: {start!r}")
        self.kernel = Kernel(topology)
        self.frame = 0
        self.pending = sorted(perturbations, key=lambda e: e.at_frame)
        self.records: list[dict] = []
        self.legit: list[bool] = []
        self.collisions: dict[int, int] = {}
        self.trace = trace
        self._slot = (0, -1)
        self._modes: dict[int, tuple] = {}
        self._last_perturbation: int | None = None
        self._write({"kind": "header", "period": config.period, "tau": config.tau,
                     "recovery_stride": config.recovery_stride, "id_capacity": config.id_capacity})
        self._topology_record()
        for u in sorted(self.states):
            self._track_mode(u)

    # -- bookkeeping ----------------------------------------------------

    def _write(self, rec: dict) -> None:
        if self.trace is not None:
            self.trace.write(json.dumps(rec, separators=(",", ":")) + "\n")

    def note(self, rec: dict) -> None:
        rec = {**rec, "frame": self._slot[0], "slot": self._slot[1]}
        self.records.append(rec)
        self._write(rec)

    def _topology_record(self) -> None:
        self.note({"kind": "topology", "nodes": self.topology.nodes, "edges": [list(e) for e in self.topology.edges]})

    def _track_mode(self, u: int) -> None:
        st = self.states.get(u)
        rs = st.reset
        cur = (rs.mode, rs.initiator if rs.mode != IDLE else None, rs.epoch if rs.mode != IDLE else None)
        if self._modes.get(u) != cur:
            self._modes[u] = cur
            self.note({"kind": "mode", "node": u, "mode": cur[0], "initiator": cur[1], "epoch": cur[2]})

    def _drain(self, u: int) -> None:
        st = self.states[u]
        if st.notes:
            for n in st.notes:
                tag = n[0]
                if tag == "claim":
                    _, cause, init, epoch, old, new = n
                    self.note({"kind": "claim", "node": u, "cause": cause, "initiator": init, "epoch": epoch,
                               "old_base": old, "new_base": new, "slots": sorted(st.slots)})
                elif tag in ("reset_begin", "reset_end"):
                    self.note({"kind": tag, "node": u, "epoch": n[1]})
                elif tag == "purge":
                    self.note({"kind": "purge", "node": u, "neighbor": n[1]})
                elif tag == "rejoin":
                    self.note({"kind": tag, "node": u})
            st.notes.clear()
        self._track_mode(u)

    # -- hooks used by fault injection ----------------------------------

    def replace_state(self, u: int, st: SensorState) -> None:
        self.states[u] = st
        self._drain(u)

    def remove_node(self, u: int) -> None:
        self.topology.remove_node(u)
        self.states.pop(u, None)
        self._modes.pop(u, None)
        self._topology_record()

    def add_node(self, u: int, attach_to) -> None:
        if u >= self.config.id_capacity:
            raise ValueError(f"id {u} exceeds id capacity {self.config.id_capacity}")
        self.topology.add_node(u, attach_to)
        self.states[u] = SensorState(me=u, config=self.config)
        self._topology_record()
        self._track_mode(u)

    # -- main loop ------------------------------------------------------

    def _boundary(self) -> None:
        self._slot = (self.frame, -1)
        while self.pending and self.pending[0].at_frame <= self.frame:
            e = self.pending.pop(0)
            if e.at_frame == self.frame and faults.apply(self, e):
                self._last_perturbation = self.frame
        report = check_legitimacy(self.topology, self.states, self.frame, first_only=self.trace is None)
        self.legit.append(report.legitimate)
        if self.trace is not None:
            self._write(self._snapshot(report))

    def _snapshot(self, report) -> dict:
        nodes = []
        for u in sorted(self.states):
            st = self.states[u]
            nodes.append({
                "id": u, "base": st.base, "extra": sorted(st.extra), "joined": st.joined,
                "mode": st.reset.mode, "initiator": st.reset.initiator,
                "table": {str(j): sorted(e.slots) for j, e in sorted(st.table.items())},
            })
        return {"kind": "snapshot", "frame": self.frame, "legitimate": report.legitimate,
                "violations": [v.to_record() for v in report.violations], "nodes": nodes}

    def _emit_events(self, slot: SlotIndex, tx: dict, delivered, collided) -> None:
        for u, p in sorted(tx.items()):
            self._write({"frame": slot.frame, "slot": slot.slot, "tx": u, "msg": to_record(p.body)})
        got = dict(delivered)
        hit = set(collided)
        for r in sorted(self.states):
            if r in got:
                ev = KernelEvent(r, slot, DELIVERED, got[r])
            elif r in hit:
                ev = KernelEvent(r, slot, COLLISION)
            else:
                ev = KernelEvent(r, slot, SILENCE)
            self._write(ev.to_record())

    def _deliver(self, slot: SlotIndex, tx: dict) -> None:
        delivered, collided = self.kernel.deliveries(tx, slot)
        if collided and slot.slot < self.config.period:
            self.collisions[slot.frame] = self.collisions.get(slot.frame, 0) + len(collided)
        states = self.states
        for r, p in delivered:
            receive(states[r], p.sender, p.body)
        if self.trace is not None:
            self._emit_events(slot, tx, delivered, collided)

    def run_frame(self) -> None:
        cfg = self.config
        f = self.frame
        self._boundary()
        states = self.states
        by_slot: list[dict] = [{} for _ in range(cfg.period)]
        for u in sorted(states):
            st = states[u]
            if st.reset.mode == IDLE and st.joined and st.slots:
                # the heartbeat cannot change within a TDMA phase, so decide once
                claimed = sorted(st.slots)
                _, msg = on_slot(st, SlotIndex(f, claimed[0]))
                if msg is not None:
                    w = WritePayload(u, msg)
                    for s in claimed:
                        by_slot[s][u] = w
        for s in range(cfg.period):
            slot = SlotIndex(f, s)
            self._slot = (f, s)
            if by_slot[s] or self.trace is not None:
                self._deliver(slot, by_slot[s])
        if cfg.is_recovery_frame(f):
            for u in sorted(states):
                slot = SlotIndex(f, cfg.period + u % cfg.id_capacity)
                self._slot = (f, slot.slot)
                _, bundle = on_slot(states[u], slot)
                self._drain(u)
                self._deliver(slot, {u: WritePayload(u, bundle)})
        self._slot = (f, cfg.period + cfg.id_capacity)
        for u in sorted(states):
            observe_frame_end(states[u], f)
            self._drain(u)
        self.frame += 1

    def run(self, frames: int) -> RunResult:
        error = None
        try:
            for _ in range(frames):
                self.run_frame()
            self._boundary()
        except PeriodTooSmall as exc:
            error = str(exc)
            self.note({"kind": "error", "error": error})
        return self.result(error)

    def result(self, error: str | None = None) -> RunResult:
        converged = None if error else convergence_frame(self.legit, self.collisions)
        n = len(self.states)
        diag: dict = {}
        for st in self.states.values():
            for k, v in st.diagnostics.items():
                diag[k] = diag.get(k, 0) + v
        return RunResult(
            frames=self.frame,
            legit=list(self.legit),
            collision_frames=dict(self.collisions),
            records=self.records,
            converged_at=converged,
            exclusion_violations=monitor_reset_exclusion(self.records),
            scope_violations=check_reset_scope(self.records),
            resets=sum(1 for r in self.records if r["kind"] == "reset_begin"),
            last_perturbation=self._last_perturbation,
            slots_per_node=(sum(len(s.slots) for s in self.states.values()) / n) if n else 0.0,
            error=error,
            diagnostics=diag,
        )

    def claims(self) -> dict[int, frozenset[int]]:
        return {u: st.slots for u, st in sorted(self.states.items())}


def concurrent_reset_pairs(result: RunResult) -> list[dict]:
    return concurrent_resets(result.records)
