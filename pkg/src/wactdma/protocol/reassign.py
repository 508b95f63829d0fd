from __future__ import annotations

from typing import Mapping, Sequence


class PeriodTooSmall(RuntimeError):
    def __init__(self, node: int, period: int):
        super().__init__(f"period too small: no free slot for node {node} with P={period}")
        self.node = node
        self.period = period


Context = Mapping[int, tuple]  # node -> (base slot or None, extra slots)


def reassign_slots(participants: Sequence[tuple[int, Context]], period: int) -> dict[int, int]:
    """Greedy distance-2 slot choice for reset participants, in ascending id order.

    Each participant's context maps every node within its two hops to that
    node's claim. Nodes absent from ``participants`` are frozen. A
    participant takes the smallest slot no one in its context holds; when
    every slot is taken it may displace a frozen node's extra (bandwidth)
    slot, but never a base slot or a slot already handed out in this pass.
    """
    order = sorted(participants, key=lambda p: p[0])
    ids = {p for p, _ in order}
    near: dict[int, set[int]] = {p: set() for p in ids}
    for p, ctx in order:
        for q in ctx:
            if q in ids and q != p:
                near[p].add(q)
                near[q].add(p)

    assigned: dict[int, int] = {}
    for p, ctx in order:
        hard = {assigned[q] for q in near[p] if q in assigned}
        soft: set[int] = set()
        for q, (base, extra) in ctx.items():
            if q in ids:
                continue
            if base is not None:
                hard.add(base)
            soft.update(extra)
        slot = _smallest_outside(hard | soft, period)
        if slot is None:
            slot = _smallest_outside(hard, period)
        if slot is None:
            raise PeriodTooSmall(p, period)
        assigned[p] = slot
    return assigned


def _smallest_outside(taken: set[int], period: int) -> int | None:
    for s in range(period):
        if s not in taken:
            return s
    return None
