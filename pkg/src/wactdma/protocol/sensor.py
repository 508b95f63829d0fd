"""Deterministic per-sensor transitions.

Functions here take a :class:`SensorState`, update it in place and return
it together with any message to send. Three kinds of call drive a sensor:

* :func:`on_slot` at the start of every slot the sensor may transmit in:
  a TDMA slot it claims, or its own recovery mini-slot. The mini-slot is
  where all control decisions happen (arbitration, reset stages, joins,
  bandwidth), so every change of claim or mode is announced in the same
  collision-free broadcast that makes it.
* :func:`observe` for every slot in which the sensor heard a write.
* :func:`observe_frame_end` once per frame boundary.

A sensor never learns whether a silent slot was a collision.
"""

from __future__ import annotations

from ..kernel import DELIVERED, KernelEvent, SlotIndex
from .messages import (
    GRANTED,
    Assign,
    Bundle,
    ClearSlots,
    Heartbeat,
    JoinGrant,
    JoinRequest,
    NeighborDigest,
    Release,
    Report,
    ResetRequest,
)
from .reassign import reassign_slots
from .state import (
    ARBITRATING,
    CONTENDING,
    IDLE,
    IN_RESET,
    OVERLAP_TIER,
    REASSIGNING,
    RESETTING,
    SCHEDULING,
    TIMEOUT_TIER,
    NeighborEntry,
    SensorState,
)


# -- views ----------------------------------------------------------------


def two_hop_view(state: SensorState) -> dict[int, tuple]:
    """``node -> (base, extra, free, idle, joined)`` for every node within two hops.

    Direct table entries win over second-hand digest entries. The result is
    cached per table version and must not be mutated.
    """
    hit = state.cache.get("view")
    if hit is not None and hit[0] == state.table_version:
        return hit[1]
    view: dict[int, tuple] = {}
    me = state.me
    table = state.table
    for e in table.values():
        for k, d in e.digest.items():
            if k != me and k not in table and k not in view:
                view[k] = (d.base, d.extra, d.free, d.idle, d.joined)
    for j, e in table.items():
        view[j] = (e.base, e.extra, e.free, e.idle, e.joined)
    state.cache["view"] = (state.table_version, view)
    return view


def reset_context(state: SensorState) -> dict[int, tuple]:
    """Two-hop claims in the shape :func:`reassign_slots` expects."""
    return {q: (v[0], v[1]) for q, v in sorted(two_hop_view(state).items())}


def free_slots(state: SensorState, view: dict[int, tuple] | None = None) -> frozenset[int]:
    key = (state.table_version, state.base, state.extra)
    if view is None:
        hit = state.cache.get("free")
        if hit is not None and hit[0] == key:
            return hit[1]
    taken = set(state.slots)
    for v in (two_hop_view(state) if view is None else view).values():
        if v[0] is not None:
            taken.add(v[0])
        taken.update(v[1])
    free = frozenset(s for s in range(state.config.period) if s not in taken)
    if view is None:
        state.cache["free"] = (key, free)
    return free


def overlap_evidence(state: SensorState) -> bool:
    """True when two nodes within two hops of each other share a base slot.

    Pairs checked are exactly those whose distance this node can bound:
    itself with any two-hop node, two neighbors, and a neighbor with one
    of its reported neighbors.
    """
    key = (state.table_version, state.base, state.joined)
    hit = state.cache.get("overlap")
    if hit is not None and hit[0] == key:
        return hit[1]
    found = _overlap(state)
    state.cache["overlap"] = (key, found)
    return found


def _overlap(state: SensorState) -> bool:
    me = state.me
    bases: dict[int, int] = {}
    for j, e in state.table.items():
        if e.joined and e.base is not None:
            bases[j] = e.base
    mine = state.base if state.joined else None
    if mine is not None:
        if mine in bases.values():
            return True
    seen: set[int] = set()
    for b in bases.values():
        if b in seen:
            return True
        seen.add(b)
    for j, e in state.table.items():
        bj = bases.get(j)
        for k, d in e.digest.items():
            if k == me or not d.joined or d.base is None:
                continue
            if k in state.table:
                continue
            if d.base == mine or d.base == bj:
                return True
    return False


def _view_signature(view: dict[int, tuple]) -> tuple:
    return tuple(sorted((q, v[0], tuple(sorted(v[1]))) for q, v in view.items()))


def make_heartbeat(state: SensorState, free: frozenset[int] | None = None) -> Heartbeat:
    """Current heartbeat; the previous object is reused while nothing in it changed."""
    free = free_slots(state) if free is None else free
    idle = state.reset.mode == IDLE
    key = (state.table_version, state.base, state.extra, free, idle, state.joined)
    hit = state.cache.get("heartbeat")
    if hit is not None and hit[0] == key and state.heartbeat is hit[1]:
        return hit[1]
    digest = tuple(
        NeighborDigest(j, e.base, e.extra, e.free, e.idle, e.joined) for j, e in sorted(state.table.items())
    )
    hb = Heartbeat(
        sender=state.me,
        base=state.base,
        extra=state.extra,
        free=free,
        idle=idle,
        joined=state.joined,
        digest=digest,
    )
    if hb == state.heartbeat:
        hb = state.heartbeat
    state.heartbeat = hb
    state.cache["heartbeat"] = (key, hb)
    return hb


def _set_claim(state: SensorState, base: int | None, extra=frozenset(), cause: str = "", initiator=None) -> None:
    extra = frozenset(extra)
    if base == state.base and extra == state.extra:
        return
    epoch = state.reset.epoch if cause in ("assign", "clear") else None
    state.notes.append(("claim", cause, initiator, epoch, state.base, base))
    state.base = base
    state.extra = extra


def _set_mode(state: SensorState, mode: str) -> None:
    if state.reset.mode != mode:
        state.reset.mode = mode
        state.notes.append(("mode", mode))


# -- slot-level -----------------------------------------------------------


def on_slot(state: SensorState, slot: SlotIndex):
    """Transmit decision for ``slot``: ``(state, message or None)``."""
    p = state.config.period
    if slot.slot < p:
        if state.reset.mode == IDLE and state.joined and slot.slot in state.slots:
            hb = state.heartbeat if state.heartbeat is not None else make_heartbeat(state)
            return state, hb
        return state, None
    if slot.slot - p != state.me % state.config.id_capacity:
        return state, None
    return state, on_recovery_turn(state, slot.frame)


def observe(state: SensorState, slot: SlotIndex, event: KernelEvent) -> SensorState:
    if event.outcome != DELIVERED or event.payload is None:
        return state
    return receive(state, event.payload.sender, event.payload.body)


def receive(state: SensorState, j: int, msg) -> SensorState:
    """Handle one message delivered from neighbor ``j``."""
    e = state.table.get(j)
    if e is not None and e.source is msg:
        # repeat of a heartbeat already adopted this frame or earlier
        e.heard = e.heard_tdma = True
        return state
    if isinstance(msg, Bundle):
        hb, tdma = msg.heartbeat, False
        state.inbox[j] = msg
    elif isinstance(msg, Heartbeat):
        hb, tdma = msg, True
    else:
        state.diagnostics["malformed"] += 1
        return state
    if hb.sender != j:
        state.diagnostics["malformed"] += 1
        return state
    e = state.table.get(j)
    if e is None:
        e = state.table[j] = NeighborEntry()
    if e.source is not hb:
        e.source = hb
        state.table_version += 1
        _adopt(state, e, hb)
    e.heard = True
    if tdma:
        e.heard_tdma = True
    return state


def _adopt(state: SensorState, e: NeighborEntry, hb: Heartbeat) -> None:
    e.base, e.extra, e.free = hb.base, hb.extra, hb.free
    e.idle, e.joined = hb.idle, hb.joined
    e.digest = {d.node: d for d in hb.digest if d.node != state.me}


# -- frame-level ----------------------------------------------------------


def observe_frame_end(state: SensorState, frame: int):
    """Update counters, purge departed neighbors, and decide whether to schedule a reset."""
    cfg = state.config
    for j, e in state.table.items():
        e.freshness = 0 if e.heard else e.freshness + 1
        if e.heard_tdma:
            e.missed = 0
        elif e.expected and e.idle and e.joined and e.slots:
            e.missed += 1
        else:
            e.missed = 0
        e.heard = e.heard_tdma = False
        e.expected = e.idle and e.joined and bool(e.slots)
    for j in sorted(j for j, e in state.table.items() if e.freshness >= cfg.departure_frames):
        on_departure_detect(state, j)

    if not state.joined:
        state.listen_frames += 1
    elif state.reset.mode == IDLE and state.base is None:
        # a reset ended without a slot for us: rejoin with the table we already have
        state.joined = False
        state.listen_frames = cfg.tau + 1
        state.notes.append(("rejoin",))

    sig = state.cache.get("sig")
    if sig is None or sig[0] != state.table_version:
        sig = state.cache["sig"] = (state.table_version, _view_signature(two_hop_view(state)))
    sig = sig[1]
    if sig == state.view_signature:
        state.stable_frames += 1
    else:
        state.stable_frames = 0
        state.view_signature = sig
    state.since_extension += 1

    tier = None
    if state.joined:
        if overlap_evidence(state):
            tier = OVERLAP_TIER
        elif any(e.missed >= cfg.tau for e in state.table.values()):
            tier = TIMEOUT_TIER

    rs = state.reset
    scheduled = False
    if rs.mode == IDLE and tier is not None and not _outranked(state, tier):
        rs.priority = tier
        rs.initiator = state.me
        rs.streak = 0
        _set_mode(state, SCHEDULING)
        scheduled = True
    elif rs.mode in CONTENDING:
        if tier is None:
            _withdraw(state)
        else:
            rs.priority = min(rs.priority, tier)
    make_heartbeat(state)
    return state, scheduled


def _outranked(state: SensorState, tier: int) -> bool:
    # a loser stays idle (and keeps its heartbeats) while a better request is visible
    mine = (tier, state.me)
    return any((prio, init) < mine for init, (prio, _) in state.requests_view.items())


def on_departure_detect(state: SensorState, j: int) -> SensorState:
    """Forget a neighbor that has been silent for the departure threshold."""
    if state.table.pop(j, None) is not None:
        state.table_version += 1
        state.notes.append(("purge", j))
    state.inbox.pop(j, None)
    return state


def _withdraw(state: SensorState) -> None:
    rs = state.reset
    rs.streak = 0
    rs.initiator = None
    _set_mode(state, IDLE)


# -- recovery round -------------------------------------------------------


def _fresh_inbox(state: SensorState, rnd: int) -> list[tuple[int, Bundle]]:
    return [
        (j, b) for j, b in sorted(state.inbox.items()) if b.round >= rnd - 1 and j in state.table
    ]


def on_recovery_turn(state: SensorState, frame: int) -> Bundle:
    """All control decisions for this node's recovery mini-slot; returns the broadcast."""
    cfg = state.config
    rnd = cfg.round_of(frame)
    inbox = _fresh_inbox(state, rnd)
    rs = state.reset
    out_reset = None
    out_report = None

    if rs.pending_release is not None:
        out_reset, rs.pending_release = rs.pending_release, None

    if rs.mode in IN_RESET:
        if rs.initiator == state.me:
            out_reset = _initiator_stage(state, inbox, frame)
        else:
            out_reset, out_report = _participant_stage(state, inbox)
    if rs.mode not in IN_RESET:
        recruited = _maybe_recruit(state, inbox)
        if recruited is not None:
            out_reset, out_report = recruited

    requests = arbitrate(state, inbox, frame)

    join_request = None
    grants: tuple[JoinGrant, ...] = ()
    if rs.mode == IDLE:
        if not state.joined:
            join_request = on_join(state, inbox)
        else:
            drop_conflicting_extras(state)
            grants = serve_joins(state, inbox)
            claim_extra_bandwidth(state)
    for joiner in list(state.grants):
        slot, age = state.grants[joiner]
        if age >= cfg.grant_hold_rounds:
            del state.grants[joiner]
        else:
            state.grants[joiner] = (slot, age + 1)

    hb = make_heartbeat(state)
    return Bundle(
        sender=state.me,
        round=rnd,
        heartbeat=hb,
        requests=requests,
        reset=out_reset,
        report=out_report,
        join_request=join_request,
        join_grants=grants,
    )


# -- arbitration ----------------------------------------------------------


def arbitrate(state: SensorState, inbox, frame: int) -> tuple[ResetRequest, ...]:
    """Distance-3 arbitration among reset requests.

    Every node rebuilds, from its neighbors' latest broadcasts, the set of
    requests within three hops and relays those within two. A contender
    wins a round when its ``(priority, id)`` beats every request it can
    see, and gives up on its first loss. It starts its reset once it wins
    with an age of at least ``arbitration_window``, where the age is one
    more than the smallest age at which all neighbors echo its request.
    The age lives only in messages, so a corrupted counter cannot shortcut
    the window. An executing initiator advertises priority
    :data:`GRANTED`, which beats every request.
    """
    rs = state.reset
    me = state.me
    view: dict[int, tuple[int, int, int]] = {}
    echoes: dict[int, int] = {}
    for j, b in inbox:
        for r in b.requests:
            if r.initiator == me:
                if r.hop == 1:
                    echoes[j] = r.age
                continue
            hop = r.hop + 1
            if hop > 3:
                continue
            old = view.get(r.initiator)
            if old is None or (r.priority, hop) < old[:2]:
                view[r.initiator] = (r.priority, hop, r.age)
    state.requests_view = {i: v[:2] for i, v in view.items()}

    if rs.mode in CONTENDING:
        mine = (rs.priority, me)
        if all(mine < (prio, init) for init, (prio, _, _) in view.items()):
            rs.streak = _echo_age(state, echoes)
            _set_mode(state, ARBITRATING)
            if rs.streak >= state.config.arbitration_window:
                _begin_reset(state, frame)
        else:
            _withdraw(state)

    rs.grant_holder = min(view, key=lambda i: (view[i][0], i)) if view else None
    own = []
    if rs.mode in CONTENDING:
        own.append(ResetRequest(rs.priority, me, 0, rs.streak))
    elif rs.mode in IN_RESET and rs.initiator == me:
        own.append(ResetRequest(GRANTED, me, 0))
    relay = [ResetRequest(prio, init, hop, age) for init, (prio, hop, age) in sorted(view.items()) if hop <= 2]
    return tuple(own + relay)


def _echo_age(state: SensorState, echoes: dict[int, int]) -> int:
    if not state.table or any(j not in echoes for j in state.table):
        return 0
    return 1 + min(echoes.values())


def _begin_reset(state: SensorState, frame: int) -> None:
    rs = state.reset
    rs.initiator = state.me
    rs.epoch = frame
    rs.hop = 0
    rs.stage_round = 0
    rs.streak = 0
    rs.lease = 0
    rs.granted = True
    rs.reports = {}
    rs.assignment = None
    _set_mode(state, RESETTING)
    state.notes.append(("reset_begin", frame))
    _set_claim(state, None, cause="clear", initiator=state.me)


# -- reset execution ------------------------------------------------------


def execute_reset(state: SensorState, inbox, frame: int):
    """One round of the initiator side of a granted reset; see :func:`_initiator_stage`."""
    return _initiator_stage(state, inbox, frame)


def _initiator_stage(state: SensorState, inbox, frame: int):
    """Clear, collect, assign, release.

    Stage rounds ``[0, collect)`` broadcast :class:`ClearSlots` while
    participant reports flow in; at ``collect`` the initiator runs the
    greedy reassignment; ``assign_rounds`` later it broadcasts
    :class:`Release` and goes idle after ``release_rounds`` more.
    """
    cfg = state.config
    rs = state.reset
    me = state.me
    key = (me, rs.epoch)
    for _, b in inbox:
        if b.report is not None and (b.report.initiator, b.report.epoch) == key:
            for p, ctx in b.report.entries:
                rs.reports[p] = {q: (base, frozenset(extra)) for q, base, extra in ctx}

    t = rs.stage_round
    rs.stage_round += 1
    assign_at = cfg.collect_rounds
    release_at = assign_at + cfg.assign_rounds
    done_at = release_at + cfg.release_rounds

    if t < assign_at:
        return ClearSlots(me, rs.epoch, 0)
    if rs.assignment is None:
        participants = [(me, reset_context(state))]
        participants += [(p, ctx) for p, ctx in sorted(rs.reports.items()) if p != me]
        rs.assignment = reassign_slots(participants, cfg.period)
        _set_claim(state, rs.assignment[me], cause="assign", initiator=me)
        state.joined = True
        _set_mode(state, REASSIGNING)
    if t < release_at:
        return Assign(me, rs.epoch, 0, tuple(sorted(rs.assignment.items())))
    if t < done_at:
        return Release(me, rs.epoch, 0)
    state.notes.append(("reset_end", rs.epoch))
    rs.last_done = key
    rs.granted = False
    rs.initiator = None
    rs.reports = {}
    rs.assignment = None
    _set_mode(state, IDLE)
    return None


def _plausible(state: SensorState, sender: int, msg) -> bool:
    """Reject reset traffic whose relay chain cannot be real.

    Hop-0 traffic must come from the initiator itself; hop-1 traffic from
    a node that lists the initiator as a neighbor.
    """
    if msg.hop == 0:
        return sender == msg.initiator
    if msg.hop == 1:
        e = state.table.get(sender)
        return e is not None and msg.initiator in e.digest
    return True


def _participant_stage(state: SensorState, inbox):
    rs = state.reset
    key = (rs.initiator, rs.epoch)
    upstream = [
        b.reset
        for j, b in inbox
        if b.reset is not None
        and (b.reset.initiator, b.reset.epoch) == key
        and b.reset.hop < rs.hop
        and _plausible(state, j, b.reset)
    ]
    if upstream:
        rs.lease = 0
    else:
        rs.lease += 1
        if rs.lease > state.config.lease_rounds:
            state.diagnostics["lease_expired"] += 1
            _leave_reset(state)
            return None, None

    if any(isinstance(m, Release) for m in upstream):
        _leave_reset(state)
        state.reset.pending_release = Release(key[0], key[1], rs.hop)
        return None, None
    assigns = [m for m in upstream if isinstance(m, Assign)]
    if assigns:
        slots = dict(assigns[0].slots)
        if rs.mode != REASSIGNING:
            if state.me in slots:
                _set_claim(state, slots[state.me], cause="assign", initiator=key[0])
                state.joined = True
            _set_mode(state, REASSIGNING)
        return Assign(key[0], key[1], rs.hop, assigns[0].slots), None
    if rs.mode == REASSIGNING:
        return Assign(key[0], key[1], rs.hop, ()), None
    return ClearSlots(key[0], key[1], rs.hop), _report(state, inbox, key)


def _report(state: SensorState, inbox, key) -> Report:
    entries = {state.me: reset_context(state)}
    for j, b in inbox:
        r = b.report
        if r is None or (r.initiator, r.epoch) != key:
            continue
        if b.reset is None or b.reset.hop <= state.reset.hop:
            continue
        for p, ctx in r.entries:
            entries.setdefault(p, {q: (base, frozenset(extra)) for q, base, extra in ctx})
    return Report(
        key[0],
        key[1],
        tuple(
            (p, tuple((q, v[0], tuple(sorted(v[1]))) for q, v in sorted(ctx.items())))
            for p, ctx in sorted(entries.items())
        ),
    )


def _leave_reset(state: SensorState) -> None:
    rs = state.reset
    rs.last_done = (rs.initiator, rs.epoch)
    rs.initiator = None
    rs.hop = 0
    rs.lease = 0
    rs.granted = False
    _set_mode(state, IDLE)


def _maybe_recruit(state: SensorState, inbox):
    rs = state.reset
    offers = sorted(
        (b.reset.hop, b.reset.initiator, b.reset.epoch)
        for j, b in inbox
        if isinstance(b.reset, ClearSlots) and b.reset.hop <= 1 and _plausible(state, j, b.reset)
    )
    offers = [o for o in offers if (o[1], o[2]) != rs.last_done and o[1] != state.me]
    if not offers:
        return None
    hop, initiator, epoch = offers[0]
    rs.initiator = initiator
    rs.epoch = epoch
    rs.hop = hop + 1
    rs.lease = 0
    rs.streak = 0
    rs.granted = False
    _set_mode(state, RESETTING)
    _set_claim(state, None, cause="clear", initiator=initiator)
    key = (initiator, epoch)
    return ClearSlots(initiator, epoch, rs.hop), _report(state, inbox, key)


# -- joins ----------------------------------------------------------------


def on_join(state: SensorState, inbox) -> JoinRequest | None:
    """Controlled addition for an unjoined node.

    After listening ``tau + 1`` frames the node asks its neighbors for a
    slot. The lowest-id joined neighbor answers (see :func:`serve_joins`).
    A node with no joined neighbor grants itself the smallest free slot,
    but only if it has the smallest id among unjoined nodes it can see.
    """
    cfg = state.config
    for j, b in inbox:
        for g in b.join_grants:
            if g.joiner == state.me:
                _set_claim(state, g.slot, cause="join", initiator=j)
                state.joined = True
                state.listen_frames = 0
                return None
    if state.listen_frames < cfg.tau + 1:
        return None
    view = two_hop_view(state)
    if any(e.joined and e.idle for e in state.table.values()):
        taken = set()
        reserved = set()
        for v in view.values():
            if v[0] is not None:
                taken.add(v[0])
                reserved.add(v[0])
            taken.update(v[1])
        return JoinRequest(state.me, frozenset(taken), frozenset(reserved))
    unjoined = [q for q, v in view.items() if not v[4]]
    if all(state.me < q for q in unjoined) and not any(v[4] for v in view.values()):
        free = free_slots(state, view)
        slot = min(free) if free else _smallest_unreserved(view, cfg.period)
        if slot is None:
            state.diagnostics["no_free_slot"] += 1
            return None
        _set_claim(state, slot, cause="self_join")
        state.joined = True
        state.listen_frames = 0
    return None


def _smallest_unreserved(view, period: int) -> int | None:
    reserved = {v[0] for v in view.values() if v[0] is not None}
    for s in range(period):
        if s not in reserved:
            return s
    return None


def serve_joins(state: SensorState, inbox) -> tuple[JoinGrant, ...]:
    """Answer join requests for which this node is the lowest-id joined neighbor."""
    me = state.me
    for j, b in inbox:
        req = b.join_request
        if req is None or req.new_id != j or j in state.grants:
            continue
        e = state.table.get(j)
        if e is None or e.joined:
            continue
        peers = [d.node for d in b.heartbeat.digest if d.joined and d.idle]
        if any(q < me for q in peers):
            continue
        recent = {s for s, _ in state.grants.values()}
        slot = None
        for blocked in (req.taken | recent, req.reserved | recent):
            for s in range(state.config.period):
                if s not in blocked:
                    slot = s
                    break
            if slot is not None:
                break
        if slot is None:
            state.diagnostics["join_no_slot"] += 1
            continue
        state.grants[j] = (slot, 0)
    return tuple(JoinGrant(joiner, slot) for joiner, (slot, _) in sorted(state.grants.items()))


# -- bandwidth extension --------------------------------------------------


def drop_conflicting_extras(state: SensorState) -> SensorState:
    """Give up extra slots that collide with a nearby base slot or a lower id's extra."""
    if not state.extra:
        return state
    view = two_hop_view(state)
    keep = set(state.extra)
    for q, v in view.items():
        if v[0] is not None:
            keep.discard(v[0])
        if q < state.me:
            keep -= v[1]
    keep.discard(state.base)
    if keep != state.extra:
        _set_claim(state, state.base, keep, cause="drop")
    return state


def claim_extra_bandwidth(state: SensorState):
    """Claim one more slot that no node within two hops uses.

    Only after the two-hop view has been stable for a while, at most once
    per ``tau`` frames, and only if this node has the smallest id among
    the nodes that also see the slot free.
    """
    cfg = state.config
    if not cfg.bandwidth_extension or not state.joined or state.base is None:
        return state, None
    if state.reset.mode != IDLE:
        return state, None
    if state.stable_frames < cfg.stability_frames or state.since_extension < cfg.tau:
        return state, None
    if any(e.missed > 0 for e in state.table.values()):
        return state, None
    view = two_hop_view(state)
    free = free_slots(state)
    if not free:
        return state, None
    s = min(free)
    rivals = [q for q, v in view.items() if v[4] and v[3] and s in v[2]]
    if any(q < state.me for q in rivals):
        return state, None
    _set_claim(state, state.base, state.extra | {s}, cause="extension")
    state.since_extension = 0
    return state, make_heartbeat(state)


# -- fault injection entry ------------------------------------------------


def perturb(state: SensorState, arbitrary: SensorState) -> SensorState:
    """Replace ``state`` wholesale; returns the new state."""
    if arbitrary.me != state.me:
        raise ValueError("perturbation must keep the node id")
    return arbitrary
