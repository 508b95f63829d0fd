"""Omniscient checks over global snapshots and protocol traces.

Nothing here mutates its inputs. Snapshot objects are duck-typed: anything
with ``base``, ``extra``, ``slots``, ``joined``, ``mode`` and ``table``
(mapping neighbor id to an object with ``slots``) works, which covers both
live :class:`~wactdma.protocol.state.SensorState` objects and states
rebuilt from trace snapshot records.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .protocol.state import IDLE, IN_RESET
from .topology import Topology


class OracleBudgetExceeded(ValueError):
    pass


ORACLE_BUDGET = 12


@dataclass(frozen=True)
class Violation:
    kind: str  # overlap | unjoined | active_reset | stale_table
    details: tuple

    def to_record(self) -> dict:
        return {"kind": self.kind, "details": list(self.details)}


@dataclass
class LegitimacyReport:
    frame: int
    violations: list[Violation] = field(default_factory=list)

    @property
    def legitimate(self) -> bool:
        return not self.violations


def check_legitimacy(topology: Topology, states: Mapping, frame: int = 0, first_only: bool = False) -> LegitimacyReport:
    """Legitimacy of a frame-boundary snapshot.

    Legitimate iff claims are disjoint within distance 2, every node is
    joined with at least one slot, no reset is active, and each node's
    table records exactly its neighbors with their current claims. With
    ``first_only`` the scan stops at the first violation.
    """
    report = LegitimacyReport(frame)
    out = report.violations
    n2 = topology.neighborhoods(2)
    slots = {u: states[u].slots for u in topology.adj}
    for u in sorted(topology.adj):
        su = slots[u]
        for v in n2[u]:
            if v > u:
                for s in sorted(su & slots[v]):
                    out.append(Violation("overlap", (u, v, s)))
        st = states[u]
        if not st.joined or not su:
            out.append(Violation("unjoined", (u,)))
        if st.mode != IDLE:
            out.append(Violation("active_reset", (u, st.mode)))
        nbrs = topology.adj[u]
        table = st.table
        for j in sorted(nbrs):
            e = table.get(j)
            if e is None or e.slots != slots[j]:
                out.append(Violation("stale_table", (u, j)))
        if len(table) != len(nbrs):
            for j in sorted(set(table) - nbrs):
                out.append(Violation("stale_table", (u, j)))
        if first_only and out:
            break
    return report


def convergence_frame(legit: list[bool], collision_frames: Iterable[int] = ()) -> int | None:
    """Smallest boundary ``F`` after which every boundary is legitimate and no
    frame ``>= F`` has a TDMA collision.

    ``legit[F]`` is the legitimacy of boundary ``F`` (the state before frame
    ``F`` runs); the last entry is the state after the final frame.
    """
    if not legit or not legit[-1]:
        return None
    f = len(legit) - 1
    while f > 0 and legit[f - 1]:
        f -= 1
    late = [c for c in collision_frames if c >= f]
    if late:
        f = max(late) + 1
        if f >= len(legit):
            return None
    return f


# -- exact distance-2 coloring --------------------------------------------


def oracle_distance2_coloring(t: Topology) -> tuple[int, dict[int, int]]:
    """Exact distance-2 chromatic number and a witness, by backtracking."""
    nodes = t.nodes
    if len(nodes) > ORACLE_BUDGET:
        raise OracleBudgetExceeded(f"oracle budget exceeded: {len(nodes)} > {ORACLE_BUDGET} nodes")
    if not nodes:
        return 0, {}
    square = {u: _bfs_ball(t, u, 2) for u in nodes}
    order = sorted(nodes, key=lambda u: (-len(square[u]), u))
    for k in range(1, len(nodes) + 1):
        colors: dict[int, int] = {}
        if _color(order, 0, k, square, colors):
            return k, dict(sorted(colors.items()))
    raise AssertionError("unreachable: n colors always suffice")


def _bfs_ball(t: Topology, u: int, k: int) -> set[int]:
    frontier, seen = {u}, {u}
    for _ in range(k):
        frontier = {y for x in frontier for y in t.adj[x]} - seen
        seen |= frontier
    return seen - {u}


def _color(order, i, k, square, colors) -> bool:
    if i == len(order):
        return True
    u = order[i]
    used = {colors[v] for v in square[u] if v in colors}
    # symmetry breaking: never open more than one new color at a time
    limit = min(k, max(colors.values(), default=-1) + 2)
    for c in range(limit):
        if c not in used:
            colors[u] = c
            if _color(order, i + 1, k, square, colors):
                return True
            del colors[u]
    return False


def is_distance2_coloring(t: Topology, claims: Mapping[int, Iterable[int]]) -> bool:
    n2 = t.neighborhoods(2)
    for u in t.adj:
        su = set(claims[u])
        if not su:
            return False
        if any(v > u and su & set(claims[v]) for v in n2[u]):
            return False
    return True


# -- trace replay ---------------------------------------------------------


def replay(records: Iterable[dict]):
    """Yield ``(record, topology)`` for protocol records, tracking topology records."""
    topo = Topology()
    for rec in records:
        if rec.get("kind") == "topology":
            topo = Topology.from_edges([tuple(e) for e in rec["edges"]], rec["nodes"])
        yield rec, topo


def _slot_key(rec: dict) -> tuple[int, int]:
    return rec.get("frame", 0), rec.get("slot", -1)


def _reset_groups(records: Iterable[dict]):
    """Per slot where reset modes change: ``(frame, slot, topology, {op: members})``.

    An op is ``(initiator, epoch)`` and only counts once its initiator has
    emitted ``reset_begin``: reset modes planted by fault injection are
    state garbage, not reset operations.
    """
    modes: dict[int, tuple] = {}
    begun: set[tuple[int, int]] = set()
    current = None
    topo = None
    dirty = False

    def groups():
        ops: dict[tuple[int, int], set[int]] = {}
        for node, (mode, init, epoch) in modes.items():
            if mode in IN_RESET and (init, epoch) in begun:
                ops.setdefault((init, epoch), set()).add(node)
        return ops

    for rec, t in replay(records):
        key = _slot_key(rec)
        if current is not None and key != current and dirty:
            yield current[0], current[1], topo, groups()
            dirty = False
        current, topo = key, t
        kind = rec.get("kind")
        if kind == "mode":
            modes[rec["node"]] = (rec["mode"], rec.get("initiator"), rec.get("epoch"))
            dirty = True
        elif kind == "reset_begin":
            begun.add((rec["node"], rec["epoch"]))
            dirty = True
        elif kind == "topology":
            for gone in set(modes) - set(t.adj):
                del modes[gone]
            dirty = True
    if dirty and current is not None:
        yield current[0], current[1], topo, groups()


def monitor_reset_exclusion(records: Iterable[dict]) -> list[dict]:
    """Violations of distance-3 reset exclusion.

    Empty iff at every slot, distinct initiators whose resets have active
    participants are more than three hops apart.
    """
    out = []
    for frame, slot, topo, ops in _reset_groups(records):
        inits = sorted({i for i, _ in ops})
        for a_idx, a in enumerate(inits):
            if a not in topo.adj:
                continue
            ball = topo.distances_from(a, 3)
            for b in inits[a_idx + 1 :]:
                if b in ball:
                    out.append({"frame": frame, "slot": slot, "initiators": [a, b], "distance": ball[b]})
    return out


def concurrent_resets(records: Iterable[dict]) -> list[dict]:
    """Slots where two or more begun resets had active participants at once."""
    out = []
    for frame, slot, topo, ops in _reset_groups(records):
        inits = sorted({i for i, _ in ops})
        if len(inits) > 1:
            pairs = []
            for i, a in enumerate(inits):
                for b in inits[i + 1 :]:
                    d = topo.distance(a, b) if a in topo.adj and b in topo.adj else float("inf")
                    pairs.append((a, b, d))
            out.append({"frame": frame, "slot": slot, "pairs": pairs})
    return out


def check_reset_scope(records: Iterable[dict]) -> list[dict]:
    """Claim changes that break locality.

    A change made by a begun reset must hit the initiator or a node within
    two hops of it; bandwidth changes must leave the base slot alone; a join
    changes only the joiner.
    """
    out = []
    begun: set[tuple[int, int]] = set()
    for rec, topo in replay(records):
        if rec.get("kind") == "reset_begin":
            begun.add((rec["node"], rec["epoch"]))
        if rec.get("kind") != "claim":
            continue
        node, cause = rec["node"], rec["cause"]
        if cause in ("assign", "clear"):
            init = rec["initiator"]
            if (init, rec.get("epoch")) not in begun:
                continue
            ok = node == init or (
                init in topo.adj and node in topo.adj and node in topo.distances_from(init, 2)
            )
            if not ok:
                out.append(rec)
        elif cause in ("extension", "drop"):
            if rec["old_base"] != rec["new_base"]:
                out.append(rec)
    return out


def collision_frames(records: Iterable[dict], period: int) -> set[int]:
    return {r["frame"] for r in records if r.get("outcome") == "collision" and r["slot"] < period}


# -- snapshot records -----------------------------------------------------


@dataclass
class _Entry:
    slots: frozenset


@dataclass
class SnapshotState:
    base: int | None
    extra: frozenset
    joined: bool
    mode: str
    table: dict

    @property
    def slots(self) -> frozenset:
        return self.extra | {self.base} if self.base is not None else self.extra


def states_from_snapshot(rec: dict) -> dict[int, SnapshotState]:
    out = {}
    for n in rec["nodes"]:
        out[n["id"]] = SnapshotState(
            base=n["base"],
            extra=frozenset(n["extra"]),
            joined=n["joined"],
            mode=n["mode"],
            table={int(j): _Entry(frozenset(s)) for j, s in n["table"].items()},
        )
    return out


def summarize_trace(records: list[dict]) -> dict:
    """Recompute the verifier summary from a trace alone."""
    period = None
    legit: list[bool] = []
    chi2 = None
    max_recovery = None
    for rec, topo in replay(records):
        if rec.get("kind") == "header":
            period = rec["period"]
        elif rec.get("kind") == "snapshot":
            states = states_from_snapshot(rec)
            legit.append(check_legitimacy(topo, states, rec["frame"], first_only=True).legitimate)
    collisions = collision_frames(records, period if period is not None else 0)
    converged = convergence_frame(legit, collisions)
    perturbed = [r["frame"] for r in records if r.get("kind") == "perturbation"]
    if converged is not None:
        max_recovery = max(0, converged - perturbed[-1]) if perturbed else converged
    violations = monitor_reset_exclusion(records)
    scope = check_reset_scope(records)
    last_topo = None
    for rec, topo in replay(records):
        last_topo = topo
    if last_topo is not None and 0 < len(last_topo) <= ORACLE_BUDGET:
        chi2 = oracle_distance2_coloring(last_topo)[0]
    return {
        "converged_at": converged,
        "violations": violations + [{"scope": r} for r in scope],
        "chi2": chi2,
        "max_recovery": max_recovery,
    }
