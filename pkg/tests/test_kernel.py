import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wactdma import topology as T
from wactdma.kernel import (
    COLLISION,
    DELIVERED,
    SILENCE,
    Kernel,
    KernelError,
    KernelEvent,
    SlotIndex,
    WritePayload,
    run_frame,
    step,
)
from wactdma.topology import Topology

S0 = SlotIndex(0, 0)


def tx(*senders):
    return {s: WritePayload(s, f"m{s}") for s in senders}


def outcomes(events):
    return {e.receiver: (e.outcome, e.payload.sender if e.payload else None) for e in events}


def test_single_writer_on_path():
    # a=0, b=1, c=2
    got = outcomes(step(T.path(3), tx(0), S0))
    assert got == {0: (SILENCE, None), 1: (DELIVERED, 0), 2: (SILENCE, None)}


def test_two_writers_collide_at_shared_neighbor():
    got = outcomes(step(T.path(3), tx(0, 2), S0))
    assert got == {0: (SILENCE, None), 1: (COLLISION, None), 2: (SILENCE, None)}


def test_other_neighbor_still_delivered():
    got = outcomes(step(T.path(4), tx(0, 2), S0))
    assert got[1] == (COLLISION, None)
    assert got[3] == (DELIVERED, 2)


def test_events_sorted_and_complete():
    t = Topology.from_edges([(5, 1), (1, 9)], [3])
    ev = step(t, tx(1), S0)
    assert [e.receiver for e in ev] == [1, 3, 5, 9]


def test_ghost_transmitter():
    with pytest.raises(KernelError, match="ghost transmitter"):
        step(T.path(2), tx(7), S0)


def test_time_skew():
    k = Kernel(T.path(2))
    k.step(tx(0), SlotIndex(0, 1))
    with pytest.raises(KernelError, match="time skew"):
        k.step(tx(0), SlotIndex(0, 1))
    with pytest.raises(KernelError, match="time skew"):
        k.step(tx(0), SlotIndex(0, 0))
    k.step(tx(0), SlotIndex(1, 0))


def test_run_frame_silence():
    t = T.path(3)
    ev = run_frame(t, [{}, {}], 0)
    assert len(ev) == 2 * 3
    assert all(e.outcome == SILENCE for e in ev)


def test_run_frame_is_composition():
    t = T.path(3)
    ev = run_frame(t, [tx(0), {}], 4)
    assert ev[:3] == step(t, tx(0), SlotIndex(4, 0))
    assert all(e.outcome == SILENCE and e.slot == SlotIndex(4, 1) for e in ev[3:])
    assert run_frame(t, [tx(0), {}], 4) == ev


def test_record_format():
    e = KernelEvent(2, SlotIndex(3, 1), DELIVERED, WritePayload(1, None))
    assert e.to_record() == {"frame": 3, "slot": 1, "rx": 2, "outcome": "delivered", "tx": 1}
    assert "tx" not in KernelEvent(2, SlotIndex(3, 1), SILENCE).to_record()


def brute(t: Topology, senders: set[int]):
    out = {}
    for r in t.nodes:
        writers = [s for s in senders if r in t.adj[s]]
        if r in senders or not writers:
            out[r] = (SILENCE, None)
        elif len(writers) == 1:
            out[r] = (DELIVERED, writers[0])
        else:
            out[r] = (COLLISION, None)
    return out


@st.composite
def scenario(draw):
    n = draw(st.integers(1, 9))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    senders = draw(st.sets(st.integers(0, n - 1)))
    return Topology.from_edges(edges, range(n)), senders


@settings(max_examples=300, deadline=None)
@given(scenario())
def test_step_matches_brute_force(sc):
    t, senders = sc
    ev = step(t, tx(*senders), S0)
    assert len(ev) == len(t)
    assert outcomes(ev) == brute(t, senders)
    for e in ev:
        if e.receiver in senders:
            assert e.outcome == SILENCE


@settings(max_examples=100, deadline=None)
@given(scenario())
def test_step_is_deterministic_and_local(sc):
    t, senders = sc
    a = step(t, tx(*senders), S0)
    assert a == step(t.copy(), tx(*senders), S0)
    # changing a sender outside r's neighborhood never changes r's outcome
    for r in t.nodes:
        far = [s for s in senders if s != r and s not in t.adj[r]]
        if far:
            fewer = senders - {far[0]}
            assert outcomes(step(t, tx(*fewer), S0))[r] == outcomes(a)[r]
