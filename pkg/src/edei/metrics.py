"""Episode metrics: completion, incident damage, throughput, transport efficiency, carry rate."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

CSV_COLUMNS = ("episode", "scenario", "policy", "seed", "rate_s", "rate_s_paper", "rate_f",
               "tp", "te", "it", "reward")


class MetricError(ValueError):
    pass


@dataclass
class EpisodeRecord:
    scenario: str
    policy: str
    seed: int
    completions: list[int]
    switches: int
    incident_counts: list[int]
    n_o: int
    n_v: int
    t_max: int
    dt: float = 2.0
    k_line: int = 1
    n_a: int = 1
    reward: float = 0.0
    episode: int = 0
    trace: list[tuple] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if any(c < 0 for c in self.completions) or self.switches < 0:
            raise MetricError("counts must be non-negative")
        if len(self.incident_counts) > self.t_max:
            raise MetricError("trace longer than t_max")

    @property
    def n_agents(self) -> int:
        return len(self.completions)

    @property
    def total_completed(self) -> int:
        return sum(self.completions)


def rate_s(rec: EpisodeRecord) -> tuple[float, float]:
    """(completed / n_O, completed / (n_O * (n + k)))."""
    if rec.n_o <= 0:
        raise MetricError("rate_s undefined: no assignments")
    done = rec.total_completed
    return done / rec.n_o, done / (rec.n_o * (rec.n_agents + rec.switches))


def rate_f(rec: EpisodeRecord) -> float:
    """Incident node-steps over ``n_V * t_max``."""
    if rec.n_v <= 0 or rec.t_max <= 0:
        raise MetricError("rate_f undefined: empty graph or horizon")
    return sum(rec.incident_counts) / (rec.n_v * rec.t_max)


def tp(rec: EpisodeRecord) -> float:
    denom = (rec.n_o + rec.k_line - 1) * rec.dt
    if denom <= 0:
        raise MetricError("TP undefined: non-positive denominator")
    return rec.total_completed / denom


def te_it(rec: EpisodeRecord) -> tuple[float, float]:
    te_den = rec.n_o * (rec.n_agents + rec.switches) * 2
    it_den = rec.n_a * 2
    if te_den <= 0 or it_den <= 0:
        raise MetricError("TE/IT undefined: non-positive denominator")
    return rec.total_completed / te_den, rec.total_completed / it_den


def row(rec: EpisodeRecord) -> dict:
    rs, rs_norm = rate_s(rec)
    te, it = te_it(rec)
    return {
        "episode": rec.episode,
        "scenario": rec.scenario,
        "policy": rec.policy,
        "seed": rec.seed,
        "rate_s": rs,
        "rate_s_paper": rs_norm,
        "rate_f": rate_f(rec),
        "tp": tp(rec),
        "te": te,
        "it": it,
        "reward": rec.reward,
    }


METRIC_KEYS = ("rate_s", "rate_f", "tp", "te", "it", "reward")


def aggregate(records: Sequence[EpisodeRecord]) -> dict[tuple[str, str], dict[str, float]]:
    """Per-(scenario, policy) arithmetic means of each metric."""
    if not records:
        raise MetricError("nothing to aggregate")
    cells: dict[tuple[str, str], list[dict]] = {}
    for rec in records:
        cells.setdefault((rec.scenario, rec.policy), []).append(row(rec))
    out = {}
    for key, rows in cells.items():
        out[key] = {m: math.fsum(r[m] for r in rows) / len(rows) for m in METRIC_KEYS}
        out[key]["episodes"] = len(rows)
    return out


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_csv(rows: Iterable[dict], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for r in rows:
            wr.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return path


def read_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != CSV_COLUMNS:
            raise MetricError(f"{path}: unexpected header {rd.fieldnames}")
        out = []
        for r in rd:
            out.append({k: (r[k] if k in ("scenario", "policy") else
                            int(r[k]) if k in ("episode", "seed") else float(r[k])) for k in CSV_COLUMNS})
        return out


def from_state(state, policy: str, seed: int, reward: float, episode: int = 0) -> EpisodeRecord:
    """Build a record from a finished environment state."""
    cfg = state.ctx.config
    return EpisodeRecord(
        scenario=cfg.name,
        policy=policy,
        seed=seed,
        completions=[a.completed for a in state.agents],
        switches=sum(a.switched for a in state.agents),
        incident_counts=list(state.incident_counts),
        n_o=len(cfg.assignments),
        n_v=cfg.n,
        t_max=cfg.t_max,
        dt=cfg.metrics.dt,
        k_line=cfg.metrics.k_line,
        n_a=cfg.metrics.n_a,
        reward=reward,
        episode=episode,
        trace=list(state.trace),
    )
