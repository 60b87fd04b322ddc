"""Next-step incident predictor: per-node GRU, 1x3 convolution head, logistic output."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .features import N_FEATURES, feature_matrix, vulnerability, vulnerability_feature  # noqa: F401

HIDDEN = 16
UNROLL = 4
EPS = 0.05


@dataclass
class Predictor:
    params: nn.ParameterStore
    hidden: int = HIDDEN

    @classmethod
    def create(cls, rng: np.random.Generator, hidden: int = HIDDEN) -> "Predictor":
        p = nn.ParameterStore()
        nn.init_gru(p, "gru", N_FEATURES, hidden, rng)
        nn.init_conv1x3(p, "conv", rng)
        nn.init_dense(p, "head", hidden, 1, rng)
        return cls(p, hidden)

    @classmethod
    def from_params(cls, params: nn.ParameterStore) -> "Predictor":
        return cls(params, params["gru.Uz"].shape[0])

    def logits(self, seq: np.ndarray, tape: nn.Tape | None = None) -> np.ndarray:
        """``seq`` is (L, n, 4); returns (n,) logits."""
        seq = np.asarray(seq, dtype=np.float64)
        if seq.ndim != 3 or seq.shape[-1] != N_FEATURES:
            raise ValueError(f"expected (L, n, {N_FEATURES}) features, got {seq.shape}")
        h = nn.gru(self.params, "gru", seq, tape=tape)
        h = nn.last_step(h, tape)
        h = nn.conv1x3(self.params, "conv", h, tape)
        h = nn.relu(h, tape)
        out = nn.dense(self.params, "head", h, tape)
        if tape is not None:
            tape.record(lambda dy, grads: dy[:, None])
        return out[:, 0]

    def __call__(self, seq: np.ndarray) -> np.ndarray:
        return predict(self, seq)


def predict(model: Predictor, seq: np.ndarray) -> np.ndarray:
    """Per-node probability of igniting next step, shape (n,)."""
    return nn.sigmoid_fn(model.logits(seq))


def prediction_set(probs: Sequence[float], eps: float = EPS) -> dict[int, float]:
    return {i: float(p) for i, p in enumerate(probs) if p > eps}


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    accuracy: float = float("nan")
    brier: float = float("nan")
    base_rate: float = float("nan")


def _stack(samples: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    seqs = np.concatenate([s for s, _ in samples], axis=1)
    labels = np.concatenate([np.asarray(y, float) for _, y in samples])
    return seqs, labels


def evaluate(model: Predictor, samples, threshold: float = 0.5) -> dict:
    seqs, y = _stack(samples)
    p = predict(model, seqs)
    return {
        "accuracy": float(np.mean((p > threshold) == (y > 0.5))),
        "brier": float(np.mean((p - y) ** 2)),
        "loss": nn.bce_with_logits(model.logits(seqs), y),
    }


def train_predictor(
    model: Predictor,
    dataset: Sequence[tuple[np.ndarray, np.ndarray]],
    epochs: int = 10,
    batch_size: int = 32,
    lr: float = 1e-2,
    rng: np.random.Generator | None = None,
) -> TrainResult:
    """Minibatch BCE training on ``(feature_sequence, next_step_ignition)`` pairs.

    ``losses[0]`` is the full-set loss before training; ``losses[e]`` after epoch e.
    """
    if not dataset:
        raise ValueError("empty dataset")
    rng = rng or np.random.default_rng(0)
    opt = nn.Adam(model.params, lr=lr)
    res = TrainResult()
    all_seq, all_y = _stack(dataset)
    res.base_rate = float(all_y.mean())
    res.losses.append(nn.bce_with_logits(model.logits(all_seq), all_y))
    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), batch_size):
            seqs, y = _stack([dataset[k] for k in order[start:start + batch_size]])
            tape = nn.Tape()
            logits = model.logits(seqs, tape)
            nn.bce_with_logits(logits, y, tape)
            grads, _ = nn.backward(tape)
            opt.step(grads)
        res.losses.append(nn.bce_with_logits(model.logits(all_seq), all_y))
    ev = evaluate(model, dataset)
    res.accuracy, res.brier = ev["accuracy"], ev["brier"]
    return res


def rollout_dataset(config, episodes: int, seed: int, policy=None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Simulated ``(history, next-step ignitions)`` pairs under a random (or given) policy."""
    from . import env as E

    ctx = E.Context.build(config)
    ss = np.random.SeedSequence(seed)
    out = []
    for ep_ss in ss.spawn(episodes):
        env_seed, pol_seed = (int(v) for v in ep_ss.generate_state(2))
        state = E.reset(ctx, env_seed)
        prng = np.random.default_rng(pol_seed)
        done = False
        while not done:
            hist = E.feature_history(state)
            if policy is None:
                acts = [int(prng.choice(E.valid_actions(state, k))) for k in range(ctx.n_agents)]
            else:
                acts = [policy(state, k) for k in range(ctx.n_agents)]
            state, _, done, info = E.step(state, acts)
            y = np.zeros(ctx.n)
            y[list(info["ignited"])] = 1.0
            out.append((hist, y))
    return out


def synthetic_rule_dataset(n_samples: int, n_nodes: int, threshold: float, rng: np.random.Generator,
                           length: int = UNROLL, grid: int = 10) -> list[tuple[np.ndarray, np.ndarray]]:
    """Feature histories from random incident states on a random layout, labelled ``F_xi > threshold``.

    Nodes sit at random grid cells; incidents appear at random and grow in severity,
    so the vulnerability column is a genuine function of the other nodes' state.
    """
    pos = rng.integers(0, grid, size=(n_nodes, 2)).astype(float)
    dist = np.abs(pos[:, None, :] - pos[None, :, :]).sum(-1)
    categories = rng.integers(0, 3, size=n_nodes).astype(float)
    assets = rng.integers(1, 11, size=n_nodes).astype(float) * 10.0
    w_max = assets.max()
    xi_scale = w_max * 1.0
    out = []
    for _ in range(n_samples):
        incident = rng.random(n_nodes) < 0.2
        severity = np.where(incident, rng.uniform(0.1, 1.0, n_nodes), 0.0)
        seq = np.empty((length, n_nodes, N_FEATURES))
        for t in range(length):
            seq[t] = feature_matrix(severity, incident, categories, assets, dist, w_max, xi_scale)
            severity = np.where(incident, np.minimum(1.0, severity * 1.2), 0.0)
            new = (~incident) & (rng.random(n_nodes) < 0.05)
            incident = incident | new
            severity = np.where(new, 0.1, severity)
        out.append((seq, (seq[-1, :, 3] > threshold).astype(float)))
    return out
