"""Scenario builders shared by the protocol and acceptance tests."""

from __future__ import annotations

from wactdma import topology as T
from wactdma.protocol.state import ProtocolConfig
from wactdma.simulation import Simulation
from wactdma.topology import Topology


def default_config(topo: Topology, **kw) -> ProtocolConfig:
    d = max(topo.max_degree(), 1)
    kw.setdefault("period", d * d + 1)
    kw.setdefault("id_capacity", max(topo.nodes, default=0) + 1)
    return ProtocolConfig(**kw)


def with_bases(topo: Topology, config: ProtocolConfig, bases: dict[int, int], **kw) -> Simulation:
    """A legitimate start with some base slots overwritten (extras cleared)."""
    sim = Simulation(topo, config, **kw)
    for u, b in bases.items():
        st = sim.states[u]
        st.base = b
        st.extra = frozenset()
    return sim


def reset_initiators(records) -> list[int]:
    return [r["node"] for r in records if r["kind"] == "reset_begin"]


def family(i: int) -> Topology:
    """The stress family: grids up to 6x6, paths, random geometric graphs with n <= 25."""
    k = i % 3
    if k == 0:
        return T.grid(2 + (i // 3) % 5, 2 + (i // 15) % 5)
    if k == 1:
        return T.path(3 + (i // 3) % 10)
    return T.random_geometric(8 + (i // 3) % 18, 0.3, i)


# one line per acceptance criterion, echoed in the pytest terminal summary
ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
