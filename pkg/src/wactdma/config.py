"""Scenario configuration: a YAML document that fully determines a run.

Example::

    topology: {kind: grid, w: 4, h: 4}
    protocol: {tau: 3}            # period defaults to d*d + 1
    frames: 200
    seed: 7
    start: legitimate
    perturbations:
      - {at_frame: 5, kind: corrupt_all}
    trace_path: out/trace.jsonl
    summary_path: out/summary.json
"""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .faults import PerturbationEvent
from .protocol.state import ConfigError, ProtocolConfig
from .topology import Topology, TopologyError, generate

PROTOCOL_KEYS = {"period", "tau", "recovery_stride", "id_capacity", "bandwidth_extension", "max_degree"}
TOP_KEYS = {"topology", "protocol", "perturbations", "frames", "seed", "start", "trace_path", "summary_path"}


@dataclass
class ScenarioConfig:
    topology: dict
    protocol: dict = field(default_factory=dict)
    perturbations: list[PerturbationEvent] = field(default_factory=list)
    frames: int = 100
    seed: int = 0
    start: str = "legitimate"
    trace_path: str | None = None
    summary_path: str | None = None

    # -- (de)serialization ----------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(d) - TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "topology" not in d:
            raise ConfigError("config needs a topology")
        proto = dict(d.get("protocol") or {})
        bad = set(proto) - PROTOCOL_KEYS
        if bad:
            raise ConfigError(f"unknown protocol keys: {sorted(bad)}")
        try:
            events = [PerturbationEvent.from_dict(e) for e in d.get("perturbations") or []]
            cfg = cls(
                topology=dict(d["topology"]),
                protocol=proto,
                perturbations=events,
                frames=int(d.get("frames", 100)),
                seed=int(d.get("seed", 0)),
                start=str(d.get("start", "legitimate")),
                trace_path=d.get("trace_path"),
                summary_path=d.get("summary_path"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config: {exc}") from None
        return cfg

    @classmethod
    def load(cls, text: str) -> "ScenarioConfig":
        try:
            return cls.from_dict(yaml.safe_load(text))
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None

    @classmethod
    def read(cls, path: str | Path) -> "ScenarioConfig":
        return cls.load(Path(path).read_text())

    def to_dict(self) -> dict:
        d = {
            "topology": dict(self.topology),
            "protocol": dict(self.protocol),
            "perturbations": [e.to_dict() for e in self.perturbations],
            "frames": self.frames,
            "seed": self.seed,
            "start": self.start,
        }
        if self.trace_path is not None:
            d["trace_path"] = self.trace_path
        if self.summary_path is not None:
            d["summary_path"] = self.summary_path
        return d

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def with_value(self, dotted: str, value) -> "ScenarioConfig":
        """Copy with one key replaced, e.g. ``protocol.tau`` or ``topology.w``."""
        d = copy.deepcopy(self.to_dict())
        node = d
        *path, last = dotted.split(".")
        for key in path:
            if not isinstance(node.get(key), dict):
                raise ConfigError(f"cannot set {dotted!r}")
            node = node[key]
        node[last] = value
        return ScenarioConfig.from_dict(d)

    # -- derived objects ------------------------------------------------

    def build_topology(self) -> Topology:
        spec = dict(self.topology)
        if spec.get("kind") == "random_geometric" and "seed" not in spec:
            spec["seed"] = self.seed
        try:
            return generate(spec)
        except KeyError as exc:
            raise ConfigError(f"topology spec missing {exc}") from None
        except (TopologyError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def events(self) -> list[PerturbationEvent]:
        """Perturbations with unseeded corruptions given seeds derived from ``seed``."""
        rng = random.Random(self.seed)
        out = []
        for e in self.perturbations:
            derived = rng.getrandbits(63)
            if e.kind in ("corrupt_state", "corrupt_all") and e.seed == 0:
                e = PerturbationEvent(e.at_frame, e.kind, e.node, derived, e.attach_to)
            out.append(e)
        return out

    def validate(self) -> tuple[Topology, ProtocolConfig]:
        """Check the invariants and return the initial topology and protocol config."""
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if self.start not in ("legitimate", "cold"):
            raise ConfigError(f"unknown start state: {self.start!r}")
        topo = self.build_topology()
        max_id = max(topo.nodes + [e.node for e in self.perturbations if e.kind == "join" and e.node is not None],
                     default=-1)
        d = max(int(self.protocol.get("max_degree", 0)), topo.max_degree())
        period = self.protocol.get("period")
        period = d * d + 1 if period is None else int(period)
        need = topo.max_two_hop_size() + 1
        if period < need:
            raise ConfigError(f"period too small: P={period} but some two-hop neighborhood needs {need} slots")
        cap = self.protocol.get("id_capacity")
        cap = max_id + 1 if cap is None else int(cap)
        if cap <= max_id:
            raise ConfigError(f"id_capacity {cap} must exceed the largest node id {max_id}")
        proto = ProtocolConfig(
            period=period,
            tau=int(self.protocol.get("tau", 3)),
            recovery_stride=int(self.protocol.get("recovery_stride", 1)),
            id_capacity=max(cap, 1),
            bandwidth_extension=bool(self.protocol.get("bandwidth_extension", True)),
        )
        return topo, proto
