import pytest

from wactdma.config import ScenarioConfig
from wactdma.faults import PerturbationEvent
from wactdma.protocol.state import ConfigError

TEXT = """
topology: {kind: grid, w: 3, h: 3}
protocol: {tau: 3}
frames: 40
seed: 7
perturbations:
  - {at_frame: 5, kind: corrupt_all}
"""


def test_dump_round_trip():
    cfg = ScenarioConfig.load(TEXT)
    again = ScenarioConfig.load(cfg.dump())
    assert again == cfg
    assert again.dump() == cfg.dump()


def test_default_period_is_degree_squared_plus_one():
    _, proto = ScenarioConfig.load(TEXT).validate()
    assert proto.period == 17
    assert proto.id_capacity == 9


def test_period_one_rejected():
    cfg = ScenarioConfig.load(TEXT).with_value("protocol.period", 1)
    with pytest.raises(ConfigError, match="period too small"):
        cfg.validate()


@pytest.mark.parametrize(
    "text,msg",
    [
        ("topology: {kind: grid, w: 2, h: 2}\nframes: 0\n", "frames"),
        ("topology: {kind: grid, w: 2, h: 2}\nbogus: 1\n", "unknown config keys"),
        ("topology: {kind: grid, w: 2, h: 2}\nprotocol: {speed: 1}\n", "unknown protocol keys"),
        ("protocol: {tau: 3}\n", "needs a topology"),
        ("topology: {kind: grid, w: 2, h: 2}\nprotocol: {id_capacity: 2}\n", "id_capacity"),
        ("topology: {kind: grid, w: 2, h: 2}\nstart: warm\n", "start"),
        ("topology: {kind: blob}\n", "unknown topology kind"),
        ("[unclosed", "cannot parse"),
        ("- 1\n- 2\n", "mapping"),
    ],
)
def test_invalid_configs(text, msg):
    with pytest.raises(ConfigError, match=msg):
        ScenarioConfig.load(text).validate()


def test_join_node_counts_toward_id_capacity():
    cfg = ScenarioConfig.load("topology: {kind: path, n: 3}\n").with_value(
        "perturbations", [{"at_frame": 2, "kind": "join", "node": 7, "attach_to": [2]}])
    assert cfg.validate()[1].id_capacity == 8


def test_unseeded_corruptions_get_derived_seeds():
    cfg = ScenarioConfig.load(TEXT)
    a, b = cfg.events(), cfg.events()
    assert a == b and a[0].seed != 0
    other = cfg.with_value("seed", 8).events()
    assert other[0].seed != a[0].seed
    pinned = ScenarioConfig(topology={"kind": "path", "n": 3},
                            perturbations=[PerturbationEvent(1, "corrupt_all", seed=5)])
    assert pinned.events()[0].seed == 5


def test_random_geometric_defaults_to_run_seed():
    cfg = ScenarioConfig.load("topology: {kind: random_geometric, n: 12, radius: 0.4}\nseed: 3\n")
    assert cfg.build_topology() == cfg.build_topology()
    assert cfg.build_topology().edges != cfg.with_value("seed", 4).build_topology().edges
