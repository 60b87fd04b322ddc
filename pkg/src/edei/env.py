"""Partially observable multi-agent environment over a scenario.

One call to :func:`step` is a transaction: targets, movement, work, severity,
spread, assignment failures, perception/sharing, reward, clock. Invalid joint
actions are rejected before anything changes.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .assignments import DONE, FAILED, IN_PROGRESS, PENDING, AssignmentLog, fail_on_incident, tick_deadlines
from .features import N_FEATURES, feature_matrix
from .graph import INCIDENT, NORMAL, SCRAPPED, Category, Graphs, MoveError, NodeState, move_assets
from .scenarios import ScenarioConfig, build_graphs
from .spread import (
    SpreadParams,
    build_spread_matrix,
    ignition_probabilities,
    severity_step,
    spread_step,
)

# reward weights: r = W_SUCC * W_succ - W_IS * W_is + W_REM * dW_r
W_SUCC = 0.01
W_IS = 0.01
W_REM = 0.001

PREDICTION_EPS = 0.05
HISTORY_LEN = 4
NODE_CHANNELS = 5

TRACE_COLUMNS = ("t", "n_incident", "n_done", "n_failed", "w_succ", "w_is", "w_r", "reward")

Predictor = Callable[[np.ndarray], np.ndarray]


class InvalidActionError(ValueError):
    pass


@dataclass(frozen=True)
class Context:
    """Static per-scenario data."""

    config: ScenarioConfig
    graphs: Graphs
    params: SpreadParams
    dist: np.ndarray
    grid_pos: np.ndarray
    support_nodes: tuple[int, ...]
    w_max: float
    xi_scale: float

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def n_agents(self) -> int:
        return self.config.agents

    @classmethod
    def build(cls, config: ScenarioConfig) -> "Context":
        graphs = build_graphs(config)
        w_max = float(max([nd.assets for nd in config.nodes] + [1]))
        params = config.spread.params()
        return cls(
            config=config,
            graphs=graphs,
            params=params,
            dist=graphs.operation.distances,
            grid_pos=np.array([[nd.x, nd.y] for nd in config.nodes], dtype=float),
            support_nodes=tuple(i for i, nd in enumerate(config.nodes) if nd.category == Category.SUPPORT),
            w_max=w_max,
            xi_scale=w_max * params.tau,
        )


@dataclass
class AgentState:
    position: int
    target: int
    path: list[int] = field(default_factory=list)
    transit: float = 0.0
    duty: str = "idle"
    switched: bool = False
    completed: int = 0


@dataclass
class WorldState:
    ctx: Context
    t: int
    nodes: NodeState
    severity: np.ndarray
    log: AssignmentLog
    agents: list[AgentState]
    known_incidents: set[int]
    prediction: np.ndarray
    rng: np.random.Generator
    tie_rng: np.random.Generator
    history: deque
    w_r_prev: float
    initial_assets: int
    assets_lost: int = 0
    salvaged: set[int] = field(default_factory=set)
    trace: list[tuple] = field(default_factory=list)
    incident_counts: list[int] = field(default_factory=list)
    predictor: Predictor | None = None
    eps: float = PREDICTION_EPS

    @property
    def incidents(self) -> set[int]:
        """True incident set V^f."""
        return self.nodes.incident

    @property
    def prediction_set(self) -> dict[int, float]:
        return {int(i): float(self.prediction[i]) for i in np.flatnonzero(self.prediction > self.eps)}

    def copy(self) -> "WorldState":
        ctx, pred = self.ctx, self.predictor
        self.ctx = None
        self.predictor = None
        try:
            out = copy.deepcopy(self)
        finally:
            self.ctx, self.predictor = ctx, pred
        out.ctx, out.predictor = ctx, pred
        return out


# ---------------------------------------------------------------------------
# reset / actions
# ---------------------------------------------------------------------------

def reset(config: ScenarioConfig | Context, seed: int, predictor: Predictor | None = None,
          eps: float = PREDICTION_EPS) -> WorldState:
    ctx = config if isinstance(config, Context) else Context.build(config)
    cfg = ctx.config
    ss = np.random.SeedSequence(seed)
    spread_ss, tie_ss = ss.spawn(2)
    nodes = NodeState.from_graph(ctx.graphs.operation)
    severity = np.zeros(ctx.n)
    for i in cfg.initial_incidents:
        nodes.status[i] = INCIDENT
        severity[i] = ctx.params.f_seed
    agents = [AgentState(position=s, target=s) for s in cfg.agent_starts]
    state = WorldState(
        ctx=ctx,
        t=0,
        nodes=nodes,
        severity=severity,
        log=AssignmentLog(tuple(cfg.assignment_list())),
        agents=agents,
        known_incidents=set(),
        prediction=np.zeros(ctx.n),
        rng=np.random.default_rng(spread_ss),
        tie_rng=np.random.default_rng(tie_ss),
        history=deque(maxlen=HISTORY_LEN),
        w_r_prev=0.0,
        initial_assets=int(nodes.assets.sum()),
        predictor=predictor,
        eps=eps,
    )
    perceive_and_share(state)
    state.w_r_prev = reward_remaining(state)
    return state


def valid_actions(state: WorldState, agent: int) -> list[int]:
    """Open-assignment nodes plus known incident nodes; idle at the current node otherwise."""
    nodes = state.log.pending | state.known_incidents
    if not nodes:
        return [state.agents[agent].position]
    return sorted(nodes)


def action_mask(state: WorldState, agent: int) -> np.ndarray:
    mask = np.zeros(state.ctx.n, dtype=bool)
    mask[valid_actions(state, agent)] = True
    return mask


# ---------------------------------------------------------------------------
# step
# ---------------------------------------------------------------------------

def _duty(state: WorldState, node: int) -> str:
    if node in state.known_incidents:
        return "incident"
    if node in state.log.pending:
        return "assignment"
    return "idle"


def _nearest_support(state: WorldState, src: int) -> int | None:
    ctx = state.ctx
    best = None
    for j in ctx.support_nodes:
        if j == src or state.nodes.status[j] != NORMAL:
            continue
        key = (ctx.dist[src, j], j)
        if math.isfinite(key[0]) and (best is None or key < best[0]):
            best = (key, j)
    return None if best is None else best[1]


def step(state: WorldState, joint_action: Sequence[int]) -> tuple[WorldState, float, bool, dict]:
    ctx = state.ctx
    if len(joint_action) != ctx.n_agents:
        raise InvalidActionError(f"expected {ctx.n_agents} actions, got {len(joint_action)}")
    for i, u in enumerate(joint_action):
        if int(u) not in valid_actions(state, i):
            raise InvalidActionError(f"agent {i}: node {u} is not a valid target")

    op = ctx.graphs.operation
    t = state.t

    # (1) targets
    for ag, u in zip(state.agents, joint_action):
        u = int(u)
        duty = _duty(state, u)
        if ag.duty == "assignment" and duty == "incident":
            ag.switched = True
        if duty != "idle":
            ag.duty = duty
        if u != ag.target or not ag.path:
            ag.target = u
            start = ag.path[0] if ag.transit > 0 and ag.path else ag.position
            ag.path = ([start] if ag.transit > 0 else []) + op.path(start, u)

    # (2) movement: one cell per step
    moved = [False] * len(state.agents)
    for k, ag in enumerate(state.agents):
        if not ag.path:
            continue
        nxt = ag.path[0]
        if ag.transit <= 0:
            ag.transit = op.adjacency_length[(ag.position, nxt)]
        ag.transit -= 1.0
        moved[k] = True
        if ag.transit <= 1e-9:
            ag.transit = 0.0
            ag.position = nxt
            ag.path.pop(0)

    # (3) work by agents that were already standing at their target
    crews: dict[int, list[int]] = {}
    for k, ag in enumerate(state.agents):
        if not moved[k] and ag.transit == 0 and ag.position == ag.target:
            crews.setdefault(ag.position, []).append(k)
    suppression = np.zeros(ctx.n)
    completed: list[int] = []
    pred_set = state.prediction_set
    for node, crew in sorted(crews.items()):
        status = state.nodes.status[node]
        k_log = state.log.index_of(node)
        if status == INCIDENT:
            suppression[node] = len(crew) * ctx.params.delta
        elif k_log is not None and state.log.is_open(k_log) and status == NORMAL:
            if node in pred_set and node not in state.salvaged and state.nodes.assets[node] > 0:
                dst = _nearest_support(state, node)
                if dst is not None:
                    move_assets(state.nodes, node, dst)
                    state.salvaged.add(node)
                    continue
            if state.log.work(node, float(len(crew)), t, float(ctx.config.work_steps)):
                state.agents[min(crew)].completed += 1
                completed.append(node)

    # (4) severity, (5) spread
    before = state.nodes.assets.copy()
    scrapped, recovered = severity_step(state.severity, state.nodes, suppression, ctx.params)
    state.assets_lost += int(sum(before[i] for i in scrapped))
    ignited = spread_step(state.severity, state.nodes, ctx.graphs.spread.rate_matrix, ctx.params, state.rng)

    # (6) assignment failures
    fail_on_incident(state.log, scrapped, t)
    tick_deadlines(state.log, t + 1)

    # (7) perception and sharing (also refreshes the prediction set)
    perceive_and_share(state)

    # (8) reward
    w_succ = reward_success(state)
    w_is_each = [reward_spread(state, i) for i in range(ctx.n_agents)]
    w_is = float(np.mean(w_is_each))
    w_r = reward_remaining(state)
    r = team_reward(w_succ, w_is, w_r - state.w_r_prev)
    state.w_r_prev = w_r

    # (9) clock
    state.t = t + 1
    n_inc = int(np.sum(state.nodes.status == INCIDENT))
    state.incident_counts.append(n_inc)
    state.trace.append((t, n_inc, len(state.log.done), len(state.log.failed), w_succ, w_is, w_r, r))
    done = state.t >= ctx.config.t_max or (not state.log.pending and n_inc == 0)
    info = {
        "rewards": [r] * ctx.n_agents,
        "w_succ": w_succ,
        "w_is": w_is,
        "w_is_agents": w_is_each,
        "w_r": w_r,
        "gamma": len(state.prediction_set) - len(state.known_incidents),
        "scrapped": scrapped,
        "recovered": recovered,
        "ignited": ignited,
        "completed": completed,
    }
    return state, r, done, info


# ---------------------------------------------------------------------------
# perception
# ---------------------------------------------------------------------------

def sensed_nodes(state: WorldState, agent: int) -> set[int]:
    ctx = state.ctx
    here = ctx.grid_pos[state.agents[agent].position]
    d = np.hypot(*(ctx.grid_pos - here).T)
    return set(np.flatnonzero(d <= ctx.config.sensing_radius + 1e-9).tolist())


def features(state: WorldState) -> np.ndarray:
    """Feature matrix built from the shared (known) incident picture."""
    ctx = state.ctx
    known = np.zeros(ctx.n, dtype=bool)
    known[list(state.known_incidents)] = True
    return feature_matrix(state.severity, known, ctx.graphs.categories, state.nodes.assets,
                          ctx.dist, ctx.w_max, ctx.xi_scale)


def feature_history(state: WorldState) -> np.ndarray:
    """Last ``HISTORY_LEN`` feature matrices, oldest first, padded with the earliest."""
    frames = list(state.history)
    while len(frames) < HISTORY_LEN:
        frames.insert(0, frames[0])
    return np.stack(frames)


def perceive_and_share(state: WorldState) -> WorldState:
    """Sense nearby incidents, merge into the shared set and refresh predictions."""
    truth = state.nodes.incident
    sensed = set()
    for k in range(len(state.agents)):
        sensed |= sensed_nodes(state, k)
    state.known_incidents = (state.known_incidents & truth) | (sensed & truth)
    state.history.append(features(state))
    if state.predictor is not None:
        probs = np.asarray(state.predictor(feature_history(state)), dtype=float).reshape(-1)
        if probs.shape != (state.ctx.n,):
            raise ValueError(f"predictor returned shape {probs.shape}")
        state.prediction = probs
    return state


def agent_view(state: WorldState, agent: int) -> dict:
    """What ``agent`` knows after sharing; identical for every agent by construction."""
    return {
        "incidents": sorted(state.known_incidents),
        "prediction": state.prediction.tolist(),
        "targets": [a.target for a in state.agents],
        "done": sorted(state.log.done),
        "pending": sorted(state.log.pending),
    }


# ---------------------------------------------------------------------------
# rewards
# ---------------------------------------------------------------------------

def _remaining(deadline: int, t: int) -> int:
    return max(1, deadline - t)


def known_severity(state: WorldState) -> np.ndarray:
    f = np.zeros(state.ctx.n)
    idx = list(state.known_incidents)
    f[idx] = state.severity[idx]
    return f


def reward_success(state: WorldState) -> float:
    """Four-case completion reward over open and finished assignments."""
    tau = state.ctx.params.tau
    f = known_severity(state)
    pred = state.prediction_set
    P = None
    total = 0.0
    for a, st in zip(state.log.assignments, state.log.status):
        i, w = a.node, a.value
        if st == DONE:
            total += w
            continue
        if st == FAILED:
            continue
        if i in pred and i in state.known_incidents:
            if 0.0 < f[i] < tau:
                total += pred[i] * f[i] * w
        elif i in pred:
            if P is None:
                P = ignition_probabilities(build_spread_matrix(
                    state.severity, state.nodes, state.ctx.graphs.spread.rate_matrix, tau))
            total += P[i] * w
        elif i not in state.known_incidents:
            total += w / _remaining(a.deadline, state.t)
    return float(total)


def _ranks(order: Sequence[int]) -> dict[int, int]:
    return {node: r for r, node in enumerate(order)}


def most_urgent(first: Sequence[int], second: Sequence[int], assets: dict[int, float],
                rng: np.random.Generator | None = None) -> int | None:
    """Node closest to the (0, 0) corner of the rank grid ``first x second``.

    Ties go to the larger asset count, then a uniform pick.
    """
    if not first:
        return None
    r1, r2 = _ranks(first), _ranks(second)
    dist = {v: math.hypot(r1[v], r2[v]) for v in first}
    best = min(dist.values())
    tied = sorted(v for v in first if abs(dist[v] - best) < 1e-12)
    top_w = max(assets[v] for v in tied)
    tied = [v for v in tied if assets[v] == top_w]
    if len(tied) == 1:
        return tied[0]
    rng = rng or np.random.default_rng()
    return int(tied[int(rng.integers(len(tied)))])


@dataclass
class Rankings:
    by_deadline: list[int]
    by_severity: list[int]
    by_distance: list[int]
    et_f: int | None
    et_d: int | None
    d_f: int | None


def urgency_rankings(state: WorldState, agent: int, rng: np.random.Generator | None = None) -> Rankings:
    pending = state.log.pending
    if not pending:
        return Rankings([], [], [], None, None, None)
    f = known_severity(state)
    here = state.agents[agent].position
    dl = {a.node: a.deadline for a in state.log.assignments}
    val = {a.node: a.value for a in state.log.assignments}
    d = state.ctx.dist[here]
    by_et = sorted(pending, key=lambda v: (dl[v], v))
    by_f = sorted(pending, key=lambda v: (-f[v], v))
    by_d = sorted(pending, key=lambda v: (d[v], v))
    rng = rng or state.tie_rng
    return Rankings(
        by_et, by_f, by_d,
        most_urgent(by_et, by_f, val, rng),
        most_urgent(by_et, by_d, val, rng),
        most_urgent(by_d, by_f, val, rng),
    )


def spread_terms(rk: Rankings, state: WorldState, agent: int) -> tuple[float, float, float]:
    if rk.et_f is None:
        return 0.0, 0.0, 0.0
    f = known_severity(state)
    here = state.agents[agent].position
    a_of = {a.node: a for a in state.log.assignments}

    def et(v):
        return _remaining(a_of[v].deadline, state.t)

    def dd(v):
        return max(1.0, float(state.ctx.dist[here, v]))

    t1 = f[rk.et_f] * a_of[rk.et_f].value / et(rk.et_f)
    t2 = a_of[rk.et_d].value / (et(rk.et_d) * dd(rk.et_d))
    t3 = f[rk.d_f] * a_of[rk.d_f].value / dd(rk.d_f)
    return float(t1), float(t2), float(t3)


def reward_spread(state: WorldState, agent: int) -> float:
    """Urgency penalty magnitude for one agent (enters the reward with a minus sign)."""
    return sum(spread_terms(urgency_rankings(state, agent), state, agent))


def reward_remaining(state: WorldState) -> float:
    """Assets on nodes neither scrapped nor past an expired deadline."""
    keep = state.nodes.status != SCRAPPED
    keep[list(state.log.deadline_failed)] = False
    return float(state.nodes.assets[keep].sum())


def team_reward(w_succ: float, w_is: float, dw_r: float) -> float:
    return W_SUCC * w_succ - W_IS * w_is + W_REM * dw_r


# ---------------------------------------------------------------------------
# observations
# ---------------------------------------------------------------------------

def node_channels(state: WorldState) -> np.ndarray:
    """n x 5: known severity, predicted probability, open value, time to deadline, assets."""
    ctx = state.ctx
    out = np.zeros((ctx.n, NODE_CHANNELS))
    out[:, 0] = known_severity(state) / ctx.params.tau
    out[:, 1] = state.prediction
    T = ctx.config.t_max
    for a, st in zip(state.log.assignments, state.log.status):
        if st == PENDING or st == IN_PROGRESS:
            out[a.node, 2] = min(1.0, a.value / ctx.w_max)
            out[a.node, 3] = min(1.0, max(0.0, (a.deadline - state.t) / T))
    out[:, 4] = np.minimum(1.0, state.nodes.assets / ctx.w_max)
    return out


def _one_hot(n: int, i: int) -> np.ndarray:
    v = np.zeros(n)
    v[i] = 1.0
    return v


def observe(state: WorldState, agent: int, channels: np.ndarray | None = None) -> np.ndarray:
    """Node channels (node-major), own position, then others' positions and targets.

    ``channels`` may carry a precomputed ``node_channels(state)`` shared across agents.
    """
    n = state.ctx.n
    if channels is None:
        channels = node_channels(state)
    parts = [channels.reshape(-1), _one_hot(n, state.agents[agent].position)]
    for k, ag in enumerate(state.agents):
        if k != agent:
            parts += [_one_hot(n, ag.position), _one_hot(n, ag.target)]
    return np.concatenate(parts)


def obs_dim(ctx: Context) -> int:
    return ctx.n * (NODE_CHANNELS + 1 + 2 * (ctx.n_agents - 1))


def global_state(state: WorldState, channels: np.ndarray | None = None) -> np.ndarray:
    n = state.ctx.n
    if channels is None:
        channels = node_channels(state)
    parts = [channels.reshape(-1)]
    parts += [_one_hot(n, ag.position) for ag in state.agents]
    parts += [_one_hot(n, ag.target) for ag in state.agents]
    return np.concatenate(parts)


def state_dim(ctx: Context) -> int:
    return ctx.n * (NODE_CHANNELS + 2 * ctx.n_agents)


def extras(state: WorldState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(completion flags, known-incident flags, predicted probabilities) per node."""
    n = state.ctx.n
    omega = np.zeros(n)
    omega[list(state.log.done)] = 1.0
    vf = np.zeros(n)
    vf[list(state.known_incidents)] = 1.0
    return omega, vf, state.prediction.copy()


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def snapshot(state: WorldState) -> bytes:
    """Canonical serialisation of the dynamic state (for determinism checks)."""
    doc = {
        "t": state.t,
        "severity": state.severity.tolist(),
        "status": state.nodes.status.tolist(),
        "assets": state.nodes.assets.tolist(),
        "log": [int(s) for s in state.log.status],
        "progress": state.log.progress,
        "agents": [[a.position, a.target, a.path, a.transit, a.duty, a.switched, a.completed]
                   for a in state.agents],
        "known": sorted(state.known_incidents),
        "prediction": state.prediction.tolist(),
        "rng": str(state.rng.bit_generator.state),
        "salvaged": sorted(state.salvaged),
        "lost": state.assets_lost,
    }
    return json.dumps(doc, sort_keys=True).encode()


def digest(state: WorldState) -> str:
    return hashlib.sha256(snapshot(state)).hexdigest()


def check_invariants(state: WorldState, info: dict | None = None) -> list[str]:
    """Return human-readable violations (empty when everything holds)."""
    ctx = state.ctx
    tau = ctx.params.tau
    bad = []
    st, f, w = state.nodes.status, state.severity, state.nodes.assets
    if not np.all(np.isin(st, [0, 1, 2])):
        bad.append("status outside partition")
    parts = [state.nodes.normal, state.nodes.incident, state.nodes.scrapped]
    if sum(len(p) for p in parts) != ctx.n or set().union(*parts) != set(range(ctx.n)):
        bad.append("node sets do not partition V")
    if np.any(f < 0) or np.any(f > tau + 1e-12):
        bad.append("severity out of bounds")
    if np.any(f[st == NORMAL] != 0):
        bad.append("normal node with non-zero severity")
    if np.any(w[st == SCRAPPED] != 0):
        bad.append("scrapped node holds assets")
    if np.any(w < 0):
        bad.append("negative assets")
    if int(w.sum()) + state.assets_lost != state.initial_assets:
        bad.append("asset total not conserved")
    log = state.log
    if len(log.pending) + len(log.done) + len(log.failed) != len(log.assignments):
        bad.append("assignment sets do not partition O")
    for a, s, when in zip(log.assignments, log.status, log.completed_at):
        if s == DONE and (when is None or when > a.deadline):
            bad.append(f"assignment at {a.node} done after deadline")
    if not state.known_incidents <= state.nodes.incident:
        bad.append("shared incident set contains non-incidents")
    views = [agent_view(state, k) for k in range(len(state.agents))]
    if any(v != views[0] for v in views):
        bad.append("agents disagree on shared knowledge")
    for k, ag in enumerate(state.agents):
        if not 0 <= ag.position < ctx.n:
            bad.append(f"agent {k} off graph")
    if state.t > ctx.config.t_max:
        bad.append("clock beyond t_max")
    if info is not None and len(set(info["rewards"])) != 1:
        bad.append("agents received different rewards")
    return bad


def write_trace(state: WorldState, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(TRACE_COLUMNS)
        for row in state.trace:
            wr.writerow([row[0], row[1], row[2], row[3], *(repr(float(v)) for v in row[4:])])
    return path


class Environment:
    """Thin object wrapper around the functional API."""

    def __init__(self, config: ScenarioConfig, predictor: Predictor | None = None,
                 eps: float = PREDICTION_EPS):
        self.ctx = Context.build(config)
        self.predictor = predictor
        self.eps = eps
        self.state: WorldState | None = None

    @property
    def n(self) -> int:
        return self.ctx.n

    @property
    def n_agents(self) -> int:
        return self.ctx.n_agents

    def reset(self, seed: int) -> WorldState:
        self.state = reset(self.ctx, seed, self.predictor, self.eps)
        return self.state

    def step(self, joint_action: Sequence[int]):
        return step(self.state, joint_action)

    def valid_actions(self, agent: int) -> list[int]:
        return valid_actions(self.state, agent)

    def mask(self, agent: int) -> np.ndarray:
        return action_mask(self.state, agent)

    def observe(self, agent: int) -> np.ndarray:
        return observe(self.state, agent)
