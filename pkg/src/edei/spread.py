"""Incident severity evolution, spread matrix and probabilistic ignition."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .graph import INCIDENT, NORMAL, NodeState


@dataclass(frozen=True)
class SpreadParams:
    tau: float = 1.0
    beta: float = 0.2
    seed_frac: float = 0.1
    suppression_frac: float = 0.25

    def __post_init__(self):
        if self.tau <= 0 or self.beta <= 0:
            raise ValueError("tau and beta must be positive")
        if not 0 < self.seed_frac <= 1:
            raise ValueError("seed_frac must lie in (0, 1]")

    @property
    def f_seed(self) -> float:
        return self.seed_frac * self.tau

    @property
    def delta(self) -> float:
        """Severity removed by one agent in one step."""
        return self.suppression_frac * self.tau


def severity_step(
    severity: np.ndarray,
    nodes: NodeState,
    suppression: np.ndarray,
    params: SpreadParams,
) -> tuple[set[int], set[int]]:
    """Advance severities one step in place.

    Unsuppressed incidents grow geometrically and are scrapped on reaching tau;
    suppressed ones lose ``suppression`` and return to Normal at zero.
    Returns ``(newly_scrapped, recovered)``.
    """
    suppression = np.asarray(suppression, dtype=float)
    if np.any(suppression < 0):
        raise ValueError("suppression must be non-negative")
    scrapped, recovered = set(), set()
    for i in np.flatnonzero(nodes.status == INCIDENT):
        if suppression[i] > 0:
            f = max(0.0, severity[i] - suppression[i])
            severity[i] = f
            if f <= 0.0:
                severity[i] = 0.0
                nodes.status[i] = NORMAL
                recovered.add(int(i))
        else:
            f = min(params.tau, severity[i] * (1.0 + params.beta))
            severity[i] = f
            if f >= params.tau:
                scrapped.add(int(i))
    nodes.scrap(scrapped)
    return scrapped, recovered


def spread_probability(f_i, base_rate, tau: float = 1.0):
    """Chance that a source at severity ``f_i`` ignites a neighbour this step."""
    return np.clip(np.multiply(base_rate, np.divide(f_i, tau)), 0.0, 1.0)


def build_spread_matrix(
    severity: np.ndarray, nodes: NodeState, rates: np.ndarray, tau: float = 1.0
) -> np.ndarray:
    """Severity on the diagonal, per-edge spread probability elsewhere.

    Only Incident nodes act as sources; scrapped nodes have burnt out.
    """
    src = np.where(nodes.status == INCIDENT, severity, 0.0)
    mat = spread_probability(src[:, None], rates, tau)
    np.fill_diagonal(mat, severity)
    return mat


def superpose(incoming: Iterable[float]) -> float:
    """Combine independent ignition chances: ``1 - prod(1 - g)``."""
    prod = 1.0
    for g in incoming:
        prod *= 1.0 - g
    return 1.0 - prod


def ignition_probabilities(matrix: np.ndarray) -> np.ndarray:
    """Column-wise superposition of the off-diagonal spread probabilities."""
    off = matrix.copy()
    np.fill_diagonal(off, 0.0)
    return 1.0 - np.prod(1.0 - off, axis=0)


def spread_step(
    severity: np.ndarray,
    nodes: NodeState,
    rates: np.ndarray,
    params: SpreadParams,
    rng: np.random.Generator,
) -> set[int]:
    """Sample new ignitions in place and return them.

    Every node draws one uniform regardless of state so the RNG stream does not
    depend on the incident layout.
    """
    probs = ignition_probabilities(build_spread_matrix(severity, nodes, rates, params.tau))
    draws = rng.random(len(probs))
    eligible = nodes.status == NORMAL
    ignite = np.flatnonzero(eligible & (draws < probs))
    severity[ignite] = params.f_seed
    nodes.status[ignite] = INCIDENT
    return set(ignite.tolist())
