"""Small hand-built worlds shared by the test modules."""

from __future__ import annotations

import numpy as np

from edei.graph import NodeState, Status
from edei.scenarios import MetricSpec, NodeSpec, ScenarioConfig, SpreadSpec
from edei.spread import SpreadParams

# four-node example: v1, v2 burning at full severity, v3 and v4 exposed
FIG2_RATES = {(0, 2): 0.7, (1, 2): 0.7, (0, 3): 0.8, (1, 3): 0.9}


def fig2_world(tau: float = 1.0):
    rates = np.zeros((4, 4))
    for (a, b), r in FIG2_RATES.items():
        rates[a, b] = r
    nodes = NodeState(np.array([10, 10, 10, 10], dtype=np.int64),
                      np.array([Status.INCIDENT, Status.INCIDENT, Status.NORMAL, Status.NORMAL], dtype=np.int8))
    severity = np.array([tau, tau, 0.0, 0.0])
    return severity, nodes, rates, SpreadParams(tau=tau)


def line_config(n: int = 5, assignments=None, agents: int = 1, starts=None, incidents=(), spread_edges=(),
                t_max: int = 50, assets=None, categories=None, spacing: int = 1, sensing_radius: float = 3.0,
                work_steps: int = 2) -> ScenarioConfig:
    """Nodes on a horizontal line, consecutive nodes joined by edges of length ``spacing``."""
    assets = assets or [10] * n
    categories = categories or [0] * n
    nodes = [NodeSpec(k * spacing, 0, assets[k], categories[k]) for k in range(n)]
    edges = [[k, k + 1, float(spacing)] for k in range(n - 1)]
    return ScenarioConfig(
        name="line",
        grid_dims=[n * spacing, 1],
        nodes=nodes,
        edges=edges,
        spread=SpreadSpec(edges=[list(e) for e in spread_edges], generator_seed=None),
        assignments=[list(a) for a in (assignments or [])],
        agents=agents,
        agent_starts=list(starts if starts is not None else [0] * agents),
        initial_incidents=list(incidents),
        t_max=t_max,
        work_steps=work_steps,
        sensing_radius=sensing_radius,
        metrics=MetricSpec(),
    ).validate()
