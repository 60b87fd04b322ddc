"""Scenario configuration, the three layout generators and the scenario file format.

Files are JSON documents stamped ``"format": "edei-scenario/1"`` and written in a
canonical field order, so ``save(load(path))`` reproduces the bytes exactly.
Unknown or missing fields are rejected with the dotted path of the offender.
"""

from __future__ import annotations

import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .assignments import Assignment
from .graph import Category, Graphs, Node, OperationGraph, SpreadGraph, generate_spread_edges
from .spread import SpreadParams

FORMAT = "edei-scenario/1"

STANDARD_CELLS = {
    "storage": [(2, 4), (3, 6), (4, 8)],
    "factory": [(2, 4), (3, 6), (4, 8)],
    "airport": [(2, 4), (3, 6), (4, 8)],
}

REDUCED_NODES = 12
REDUCED_AGENTS = 2
REDUCED_T_MAX = 100


class ScenarioError(ValueError):
    """Malformed scenario; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


@dataclass
class NodeSpec:
    x: int
    y: int
    assets: int
    category: int
    area: str = "general"


@dataclass
class SpreadSpec:
    tau: float = 1.0
    beta: float = 0.2
    seed_frac: float = 0.1
    suppression_frac: float = 0.25
    edges: list[list] | None = None
    generator_seed: int | None = 0
    k: int = 4
    p_extra: float = 0.05
    near_rate: list[float] = field(default_factory=lambda: [0.05, 0.15])
    far_rate: list[float] = field(default_factory=lambda: [0.01, 0.04])

    def params(self) -> SpreadParams:
        return SpreadParams(self.tau, self.beta, self.seed_frac, self.suppression_frac)


@dataclass
class MetricSpec:
    dt: float = 2.0
    k_line: int = 1
    n_a: int = 1


@dataclass
class ScenarioConfig:
    name: str
    grid_dims: list[int]
    nodes: list[NodeSpec]
    edges: list[list]
    spread: SpreadSpec
    assignments: list[list[int]]
    agents: int
    agent_starts: list[int]
    initial_incidents: list[int]
    t_max: int
    work_steps: int = 2
    sensing_radius: float = 3.0
    metrics: MetricSpec = field(default_factory=MetricSpec)
    generator: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def assignment_list(self) -> list[Assignment]:
        return [Assignment(int(a), int(b), int(c)) for a, b, c in self.assignments]

    def validate(self) -> "ScenarioConfig":
        n = self.n
        if n < 1:
            raise ScenarioError("at least one node required", "nodes")
        if len(self.grid_dims) != 2 or min(self.grid_dims) < 1:
            raise ScenarioError("must be [width, height] with positive entries", "grid_dims")
        w, h = self.grid_dims
        for k, nd in enumerate(self.nodes):
            if not (0 <= nd.x < w and 0 <= nd.y < h):
                raise ScenarioError(f"position ({nd.x}, {nd.y}) outside grid", f"nodes[{k}]")
            if nd.assets < 0:
                raise ScenarioError("negative asset count", f"nodes[{k}].assets")
            if nd.category not in (0, 1, 2):
                raise ScenarioError("category must be 0, 1 or 2", f"nodes[{k}].category")
        for k, e in enumerate(self.edges):
            if len(e) != 3 or not all(0 <= int(v) < n for v in e[:2]) or e[0] == e[1] or not e[2] > 0:
                raise ScenarioError(f"bad edge {e}", f"edges[{k}]")
        if self.spread.edges is not None:
            for k, e in enumerate(self.spread.edges):
                if len(e) != 3 or not all(0 <= int(v) < n for v in e[:2]) or e[0] == e[1] \
                        or not 0 <= e[2] <= 1:
                    raise ScenarioError(f"bad spread edge {e}", f"spread.edges[{k}]")
        elif self.spread.generator_seed is None:
            raise ScenarioError("needs explicit edges or a generator seed", "spread")
        try:
            self.spread.params()
        except ValueError as exc:
            raise ScenarioError(str(exc), "spread") from None
        seen = set()
        for k, a in enumerate(self.assignments):
            if len(a) != 3 or not 0 <= a[0] < n or a[1] < 0 or a[2] < 0:
                raise ScenarioError(f"bad assignment {a}", f"assignments[{k}]")
            if a[0] in seen:
                raise ScenarioError(f"duplicate assignment node {a[0]}", f"assignments[{k}]")
            seen.add(a[0])
        if self.agents < 1 or len(self.agent_starts) != self.agents:
            raise ScenarioError("need one start node per agent", "agent_starts")
        for k, s in enumerate(self.agent_starts):
            if not 0 <= s < n:
                raise ScenarioError(f"start node {s} out of range", f"agent_starts[{k}]")
        if len(set(self.initial_incidents)) != len(self.initial_incidents):
            raise ScenarioError("duplicate initial incident", "initial_incidents")
        for k, s in enumerate(self.initial_incidents):
            if not 0 <= s < n:
                raise ScenarioError(f"incident node {s} out of range", f"initial_incidents[{k}]")
        if self.t_max <= 0:
            raise ScenarioError("must be positive", "t_max")
        if self.work_steps < 1:
            raise ScenarioError("must be >= 1", "work_steps")
        if self.sensing_radius < 0:
            raise ScenarioError("must be non-negative", "sensing_radius")
        return self


def build_graphs(config: ScenarioConfig) -> Graphs:
    """Operation and spread graphs for ``config`` (deterministic per generator seed)."""
    config.validate()
    nodes = tuple(
        Node(k, nd.assets, Category(nd.category), (nd.x, nd.y)) for k, nd in enumerate(config.nodes)
    )
    op = OperationGraph(
        nodes, tuple((int(a), int(b), float(d)) for a, b, d in config.edges), tuple(config.grid_dims)
    )
    sp = config.spread
    if sp.edges is not None:
        spread_edges = tuple((int(a), int(b), float(r)) for a, b, r in sp.edges)
    else:
        rng = np.random.default_rng(sp.generator_seed)
        spread_edges = generate_spread_edges(
            [(nd.x, nd.y) for nd in config.nodes], rng, sp.k, sp.p_extra,
            tuple(sp.near_rate), tuple(sp.far_rate),
        )
    return Graphs(op, SpreadGraph(config.n, spread_edges))


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

def to_dict(config: ScenarioConfig) -> dict:
    d = asdict(config)
    return {"format": FORMAT, **d}


def dumps(config: ScenarioConfig) -> str:
    return json.dumps(to_dict(config), indent=1, ensure_ascii=False) + "\n"


def save(config: ScenarioConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps(config), encoding="utf-8")
    return path


def _strict(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ScenarioError("expected an object", where or "<root>")
    names = [f.name for f in fields(cls)]
    required = [f.name for f in fields(cls) if f.default is MISSING and f.default_factory is MISSING]
    extra = sorted(set(data) - set(names))
    if extra:
        raise ScenarioError(f"unknown field(s) {extra}", where or "<root>")
    for name in required:
        if name not in data:
            raise ScenarioError("missing required field", f"{where}.{name}" if where else name)
    return data


def _num(v, where, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"expected a number, got {v!r}", where)
    if kind is int and not float(v).is_integer():
        raise ScenarioError(f"expected an integer, got {v!r}", where)
    return kind(v)


def from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ScenarioError("expected an object", "<root>")
    data = dict(data)
    fmt = data.pop("format", None)
    if fmt != FORMAT:
        raise ScenarioError(f"expected {FORMAT!r}, got {fmt!r}", "format")
    _strict(ScenarioConfig, data, "")
    nodes = []
    for k, nd in enumerate(data["nodes"]):
        _strict(NodeSpec, nd, f"nodes[{k}]")
        nodes.append(NodeSpec(
            _num(nd["x"], f"nodes[{k}].x", int), _num(nd["y"], f"nodes[{k}].y", int),
            _num(nd["assets"], f"nodes[{k}].assets", int),
            _num(nd["category"], f"nodes[{k}].category", int), str(nd.get("area", "general")),
        ))
    sp = _strict(SpreadSpec, data.get("spread", {}), "spread")
    spread = SpreadSpec(**sp)
    ms = _strict(MetricSpec, data.get("metrics", {}), "metrics")
    metrics = MetricSpec(**ms)
    rest = {k: v for k, v in data.items() if k not in ("nodes", "spread", "metrics")}
    for key in ("agents", "t_max", "work_steps"):
        if key in rest:
            rest[key] = _num(rest[key], key, int)
    for key in ("edges", "assignments", "agent_starts", "initial_incidents", "grid_dims"):
        if key in rest and not isinstance(rest[key], list):
            raise ScenarioError("expected a list", key)
    cfg = ScenarioConfig(nodes=nodes, spread=spread, metrics=metrics, **rest)
    return cfg.validate()


def loads(text: str) -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return from_dict(data)


def load(path: str | Path) -> ScenarioConfig:
    return loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def _lattice_edges(index: dict[tuple[int, int], int], coords: dict[int, tuple[int, int]]) -> list[list]:
    edges = []
    for (c, r), i in sorted(index.items(), key=lambda kv: kv[1]):
        for dc, dr in ((1, 0), (0, 1)):
            j = index.get((c + dc, r + dr))
            if j is not None:
                (x1, y1), (x2, y2) = coords[i], coords[j]
                edges.append([i, j, float(abs(x1 - x2) + abs(y1 - y2))])
    return edges


def _deadlines(rng, count: int, t_max: int, lo: float = 0.15, hi: float = 0.95) -> list[int]:
    return sorted(int(v) for v in rng.integers(int(lo * t_max), int(hi * t_max) + 1, size=count))


def _check_cell(agents: int, incidents: int, reduced: bool) -> None:
    # standard cells use agents in {2, 3, 4} and incidents in {4, 6, 8}; other counts are overrides
    if agents < 1:
        raise ScenarioError("must be >= 1", "agents")
    if incidents < 0:
        raise ScenarioError("must be >= 0", "incidents")


def _assemble(name, seed, grid, specs, edges, assignments, agents, starts, incidents, t_max,
              metrics, gen_params, rng) -> ScenarioConfig:
    pool = [i for i in range(len(specs)) if i not in starts]
    if incidents > len(pool):
        raise ScenarioError(f"cannot place {incidents} incidents", "incidents")
    chosen = sorted(int(v) for v in rng.choice(pool, size=incidents, replace=False)) if incidents else []
    return ScenarioConfig(
        name=name,
        grid_dims=list(grid),
        nodes=specs,
        edges=edges,
        spread=SpreadSpec(generator_seed=int(seed)),
        assignments=assignments,
        agents=agents,
        agent_starts=starts,
        initial_incidents=chosen,
        t_max=t_max,
        metrics=metrics,
        generator={"seed": int(seed), **gen_params},
    ).validate()


def _reduced(name: str, seed: int, agents: int, incidents: int, areas: list[tuple[str, int, int]],
             metrics: MetricSpec) -> ScenarioConfig:
    """12-node 4x3 lattice keeping the scenario's area mix."""
    rng = np.random.default_rng(seed)
    agents = min(agents, REDUCED_AGENTS)
    incidents = min(incidents, 2)
    cols, rows, gap = 4, 3, 3
    specs, index, coords = [], {}, {}
    for r in range(rows):
        for c in range(cols):
            i = len(specs)
            area, cat, w = areas[c]
            specs.append(NodeSpec(1 + c * gap, 1 + r * gap, w, cat, area))
            index[(c, r)] = i
            coords[i] = (1 + c * gap, 1 + r * gap)
    edges = _lattice_edges(index, coords)
    work = [i for i, s in enumerate(specs) if s.category != Category.SUPPORT]
    nodes = sorted(int(v) for v in rng.choice(work, size=6, replace=False))
    dls = _deadlines(rng, len(nodes), REDUCED_T_MAX, 0.3, 0.95)
    order = rng.permutation(len(nodes))
    assignments = sorted([[nodes[k], dls[j], specs[nodes[k]].assets] for j, k in enumerate(order)],
                         key=lambda a: (a[1], a[0]))
    starts = [index[(0, r % rows)] for r in range(agents)]
    return _assemble(f"{name}-reduced", seed, (1 + cols * gap, 1 + rows * gap), specs, edges, assignments,
                     agents, starts, incidents, REDUCED_T_MAX, metrics,
                     {"layout": name, "reduced": True, "agents": agents, "incidents": incidents}, rng)


def generate_storage(seed: int = 0, agents: int = 4, incidents: int = 8, reduced: bool = False) -> ScenarioConfig:
    """Unmanned warehouse: 224 nodes on a 36x24 grid, 85 assignments, 700 steps."""
    _check_cell(agents, incidents, reduced)
    if reduced:
        return _reduced("storage", seed, agents, incidents,
                        [("inbound", 0, 100), ("storage", 1, 200), ("support", 2, 100), ("outbound", 0, 100)],
                        MetricSpec(dt=2.0, k_line=1, n_a=3))
    rng = np.random.default_rng(seed)
    width, height, cols, rows = 36, 24, 16, 14
    xs = [round(1 + c * (width - 2) / (cols - 1)) for c in range(cols)]
    ys = [round(1 + r * (height - 2) / (rows - 1)) for r in range(rows)]

    def area_of(c):
        if c < 2:
            return "inbound", Category.GENERAL, 100
        if c == 13:
            return "support", Category.SUPPORT, 100
        if c >= 14:
            return "outbound", Category.GENERAL, 100
        return "storage", Category.FLAMMABLE, 200

    specs, index, coords = [], {}, {}
    for c in range(cols):
        for r in range(rows):
            area, cat, w = area_of(c)
            i = len(specs)
            specs.append(NodeSpec(xs[c], ys[r], w, int(cat), area))
            index[(c, r)] = i
            coords[i] = (xs[c], ys[r])
    edges = _lattice_edges(index, coords)
    work = [i for i, s in enumerate(specs) if s.area != "support"]
    t_max = 700
    nodes = [int(v) for v in rng.choice(work, size=85, replace=False)]
    dls = _deadlines(rng, 85, t_max)
    assignments = sorted([[n, d, specs[n].assets] for n, d in zip(nodes, dls)], key=lambda a: (a[1], a[0]))
    inbound = [i for i, s in enumerate(specs) if s.area == "inbound"]
    starts = sorted(int(v) for v in rng.choice(inbound, size=agents, replace=False))
    return _assemble("storage", seed, (width, height), specs, edges, assignments, agents, starts,
                     incidents, t_max, MetricSpec(dt=2.0, k_line=1, n_a=43),
                     {"layout": "storage", "reduced": False, "agents": agents, "incidents": incidents}, rng)


def generate_factory(seed: int = 0, agents: int = 3, incidents: int = 6, reduced: bool = False) -> ScenarioConfig:
    """Four 10-node assembly lines on a 32x25 grid, 500 steps."""
    _check_cell(agents, incidents, reduced)
    lines, per_line = 4, 10
    if reduced:
        return _reduced("factory", seed, agents, incidents,
                        [("raw", 1, 200), ("station", 0, 100), ("station", 0, 100), ("buffer", 2, 100)],
                        MetricSpec(dt=2.0, k_line=3, n_a=3))
    rng = np.random.default_rng(seed)
    width, height = 32, 25
    specs, index, coords = [], {}, {}
    for ln in range(lines):
        y = 3 + 6 * ln
        for c in range(per_line):
            x = 2 + 3 * c
            if c == 0:
                area, cat, w = "raw", Category.FLAMMABLE, 200
            elif c == per_line - 1:
                area, cat, w = "buffer", Category.SUPPORT, 100
            else:
                area, cat, w = "station", Category.GENERAL, 100
            i = len(specs)
            specs.append(NodeSpec(x, y, w, int(cat), area))
            index[(c, ln)] = i
            coords[i] = (x, y)
    edges = []
    for ln in range(lines):
        for c in range(per_line - 1):
            edges.append([index[(c, ln)], index[(c + 1, ln)], 3.0])
    for ln in range(lines - 1):
        for c in (0, per_line // 2, per_line - 1):
            edges.append([index[(c, ln)], index[(c, ln + 1)], 6.0])
    edges.sort()
    t_max = 500
    # stations along each line carry increasing deadlines (flow order)
    assignments = []
    for ln in range(lines):
        start = int(rng.integers(40, 120))
        gap = int(rng.integers(30, 45))
        for c in range(1, per_line - 1):
            assignments.append([index[(c, ln)], min(t_max - 1, start + gap * (c - 1)), 100])
    assignments.sort(key=lambda a: (a[1], a[0]))
    starts = [index[(per_line - 1, ln % lines)] for ln in range(agents)]
    return _assemble("factory", seed, (width, height), specs, edges, assignments, agents, starts,
                     incidents, t_max, MetricSpec(dt=2.0, k_line=lines, n_a=len(assignments) // 2),
                     {"layout": "factory", "reduced": False, "agents": agents, "incidents": incidents}, rng)


def generate_airport(seed: int = 0, agents: int = 4, incidents: int = 8, reduced: bool = False) -> ScenarioConfig:
    """Cargo terminal: 31 nodes on a 21x13 grid, 180 steps."""
    _check_cell(agents, incidents, reduced)
    if reduced:
        return _reduced("airport", seed, agents, incidents,
                        [("receiving", 0, 100), ("security", 0, 100), ("storage", 1, 200), ("apron", 2, 100)],
                        MetricSpec(dt=2.0, k_line=1, n_a=3))
    rng = np.random.default_rng(seed)
    width, height = 21, 13
    rows = [
        ("receiving", Category.GENERAL, 100, 1, 7),
        ("security", Category.GENERAL, 100, 4, 6),
        ("storage", Category.FLAMMABLE, 200, 7, 6),
        ("storage", Category.FLAMMABLE, 200, 9, 6),
        ("apron", Category.SUPPORT, 100, 11, 6),
    ]
    specs, row_nodes = [], []
    for area, cat, w, y, count in rows:
        xs = [round(1 + k * (width - 3) / (count - 1)) for k in range(count)]
        ids = []
        for x in xs:
            ids.append(len(specs))
            specs.append(NodeSpec(x, y, w, int(cat), area))
        row_nodes.append(ids)
    edges = []
    for ids in row_nodes:
        for a, b in zip(ids[:-1], ids[1:]):
            edges.append([a, b, float(abs(specs[a].x - specs[b].x))])
    for upper, lower in zip(row_nodes[:-1], row_nodes[1:]):
        for b in lower:
            a = min(upper, key=lambda i: (abs(specs[i].x - specs[b].x), i))
            edges.append([a, b, float(abs(specs[a].x - specs[b].x) + abs(specs[a].y - specs[b].y))])
    edges.sort()
    t_max = 180
    work = [i for i, s in enumerate(specs) if s.area != "apron"]
    nodes = [int(v) for v in rng.choice(work, size=20, replace=False)]
    dls = _deadlines(rng, 20, t_max, 0.2, 0.95)
    assignments = sorted([[n, d, specs[n].assets] for n, d in zip(nodes, dls)], key=lambda a: (a[1], a[0]))
    starts = sorted(int(v) for v in rng.choice(row_nodes[-1], size=agents, replace=False))
    return _assemble("airport", seed, (width, height), specs, edges, assignments, agents, starts,
                     incidents, t_max, MetricSpec(dt=2.0, k_line=1, n_a=math.ceil(len(assignments) / 2)),
                     {"layout": "airport", "reduced": False, "agents": agents, "incidents": incidents}, rng)


GENERATORS = {
    "storage": generate_storage,
    "factory": generate_factory,
    "airport": generate_airport,
}


def generate(name: str, seed: int = 0, agents: int | None = None, incidents: int | None = None,
             reduced: bool = False) -> ScenarioConfig:
    if name not in GENERATORS:
        raise ScenarioError(f"unknown scenario {name!r}; choose from {sorted(GENERATORS)}", "scenario")
    defaults = {"storage": (4, 8), "factory": (3, 6), "airport": (4, 8)}[name]
    agents = defaults[0] if agents is None else agents
    incidents = defaults[1] if incidents is None else incidents
    return GENERATORS[name](seed, agents, incidents, reduced)


def standard_cells() -> list[tuple[str, int, int]]:
    return [(name, a, i) for name, cells in STANDARD_CELLS.items() for a, i in cells]
