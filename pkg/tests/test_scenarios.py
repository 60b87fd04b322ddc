import json

import pytest

from edei import scenarios as S
from edei.scenarios import ScenarioError


@pytest.mark.parametrize("name, agents, incidents", S.standard_cells())
def test_table_cells_round_trip_byte_identically(name, agents, incidents):
    cfg = S.generate(name, agents=agents, incidents=incidents)
    text = S.dumps(cfg)
    again = S.loads(text)
    assert S.dumps(again) == text
    assert cfg.agents == agents and len(cfg.initial_incidents) == incidents


@pytest.mark.parametrize("name", sorted(S.GENERATORS))
def test_reduced_cells_are_desk_scale(name):
    cfg = S.generate(name, reduced=True)
    assert cfg.n <= S.REDUCED_NODES and cfg.agents <= S.REDUCED_AGENTS and cfg.t_max <= S.REDUCED_T_MAX


def test_generators_are_seeded():
    assert S.dumps(S.generate("factory", seed=3)) == S.dumps(S.generate("factory", seed=3))
    assert S.dumps(S.generate("factory", seed=3)) != S.dumps(S.generate("factory", seed=4))


def test_shipped_files_match_generator():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "scenarios"
    files = sorted(root.glob("*.json"))
    assert len(files) == 9
    for f in files:
        cfg = S.load(f)
        assert S.dumps(cfg) == f.read_text(encoding="utf-8")


def base():
    return json.loads(S.dumps(S.generate("storage", reduced=True)))


def mutate(path, value):
    d = base()
    target = d
    for key in path[:-1]:
        target = target[key]
    if value is KeyError:
        del target[path[-1]]
    else:
        target[path[-1]] = value
    return json.dumps(d)


@pytest.mark.parametrize("path, value, field", [
    (("format",), "other/9", "format"),
    (("agents",), KeyError, "agents"),
    (("nodes", 0, "x"), 999, "nodes[0]"),
    (("nodes", 1, "category"), 7, "nodes[1].category"),
    (("nodes", 2, "assets"), "many", "nodes[2].assets"),
    (("edges", 0), [0, 0, 1.0], "edges[0]"),
    (("assignments", 0), [99, 10, 5], "assignments[0]"),
    (("spread", "tau"), -1.0, "spread"),
    (("surprise",), 1, "<root>"),
])
def test_malformed_files_name_the_field(path, value, field):
    with pytest.raises(ScenarioError) as info:
        S.loads(mutate(path, value))
    assert info.value.field == field


def test_parse_error_reports_position():
    with pytest.raises(ScenarioError, match="line 1, column"):
        S.loads("{")
