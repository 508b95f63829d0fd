"""Seeded perturbations applied at frame boundaries."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field

from .protocol.messages import NeighborDigest
from .protocol.sensor import make_heartbeat, perturb
from .protocol.state import MODES, NeighborEntry, ResetState, SensorState
from .topology import TopologyError

log = logging.getLogger(__name__)

KINDS = ("corrupt_state", "corrupt_all", "kill", "join")


@dataclass(frozen=True)
class PerturbationEvent:
    at_frame: int
    kind: str
    node: int | None = None
    seed: int = 0
    attach_to: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.at_frame < 0:
            raise ValueError("at_frame must be non-negative")
        if self.kind not in KINDS:
            raise ValueError(f"unknown perturbation kind: {self.kind!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationEvent":
        return cls(
            at_frame=int(d["at_frame"]),
            kind=d["kind"],
            node=d.get("node"),
            seed=int(d.get("seed", 0)),
            attach_to=tuple(d.get("attach_to", ())),
        )

    def to_dict(self) -> dict:
        d = {"at_frame": self.at_frame, "kind": self.kind}
        if self.node is not None:
            d["node"] = self.node
        if self.kind in ("corrupt_state", "corrupt_all"):
            d["seed"] = self.seed
        if self.kind == "join":
            d["attach_to"] = list(self.attach_to)
        return d


def _random_slots(rng: random.Random, period: int, most: int) -> frozenset[int]:
    return frozenset(rng.sample(range(period), rng.randint(0, min(most, period))))


def random_state(me: int, config, neighbors, live, rng: random.Random) -> SensorState:
    """A domain-valid but otherwise arbitrary sensor state.

    Slots lie in ``[0, P)`` and counters in ``[0, 2 tau]``; everything
    else (mode, initiator, table contents, join status) is drawn freely.
    """
    p, tau = config.period, config.tau
    live = sorted(live)
    base = rng.randrange(p) if rng.random() < 0.95 else None
    table = {}
    ids = sorted(neighbors)
    if live and rng.random() < 0.3:
        ids.append(rng.choice(live))
    for j in ids:
        if j == me:
            continue
        digest = {}
        for k in rng.sample(live, min(len(live), rng.randint(0, 3))):
            if k not in (me, j):
                digest[k] = NeighborDigest(
                    k, rng.randrange(p), _random_slots(rng, p, 1), _random_slots(rng, p, 3),
                    rng.random() < 0.7, rng.random() < 0.8,
                )
        table[j] = NeighborEntry(
            base=rng.randrange(p),
            extra=_random_slots(rng, p, 1),
            free=_random_slots(rng, p, 3),
            idle=rng.random() < 0.7,
            joined=rng.random() < 0.8,
            digest=digest,
            freshness=rng.randint(0, 2 * tau),
            missed=rng.randint(0, 2 * tau),
            expected=rng.random() < 0.5,
        )
    reset = ResetState(
        mode=rng.choice(MODES),
        initiator=rng.choice(live) if live else me,
        hop=rng.randint(0, 2),
        priority=rng.randint(0, 1),
        epoch=rng.randrange(2**31),
        stage_round=rng.randint(0, config.collect_rounds + config.assign_rounds + config.release_rounds),
        streak=rng.randint(0, config.arbitration_window),
        lease=rng.randint(0, config.lease_rounds),
    )
    st = SensorState(
        me=me,
        config=config,
        base=base,
        extra=_random_slots(rng, p, 3),
        joined=rng.random() < 0.8,
        table=table,
        reset=reset,
        listen_frames=rng.randint(0, 2 * tau),
        stable_frames=rng.randint(0, 2 * tau),
        since_extension=rng.randint(0, 2 * tau),
    )
    make_heartbeat(st)
    return st


def apply(sim, e: PerturbationEvent) -> bool:
    """Apply one perturbation to ``sim``; stale references are skipped and logged."""
    topo = sim.topology
    try:
        if e.kind == "corrupt_all":
            rng = random.Random(e.seed)
            live = topo.nodes
            for u in live:
                sim.replace_state(u, perturb(sim.states[u], random_state(u, sim.config, topo.adj[u], live, rng)))
        elif e.kind == "corrupt_state":
            if e.node not in topo:
                raise TopologyError(f"no such node: {e.node}")
            rng = random.Random(e.seed)
            u = e.node
            sim.replace_state(u, perturb(sim.states[u], random_state(u, sim.config, topo.adj[u], topo.nodes, rng)))
        elif e.kind == "kill":
            sim.remove_node(e.node)
        elif e.kind == "join":
            sim.add_node(e.node, e.attach_to)
    except (TopologyError, ValueError) as exc:
        log.info("skipping perturbation %s: %s", e, exc)
        sim.note({"kind": "perturbation_skipped", "event": e.to_dict(), "reason": str(exc)})
        return False
    sim.note({"kind": "perturbation", "event": e.to_dict()})
    return True
