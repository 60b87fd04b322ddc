"""MADDPG / P-MADDPG over discrete node targets, plus greedy and random baselines.

Actors score every node (one action slot per node, invalid slots masked) and act
by argmax. For the deterministic policy gradient the critic is fed a
temperature-1 softmax of the masked logits instead of the one-hot choice.
Critics see the global state, the completion/incident/prediction vectors and
every agent's action; actors only see their own observation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import env as E
from . import metrics as M
from . import nn
from .predictor import Predictor, rollout_dataset, train_predictor
from .scenarios import ScenarioConfig

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    episodes: int = 2000
    gamma: float = 0.95
    buffer_size: int = 100_000
    batch_size: int = 64
    warmup: int = 1000
    update_every: int = 1
    actor_hidden: int = 64
    critic_hidden: int = 64
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    rho: float = 0.01
    eps_start: float = 0.3
    eps_end: float = 0.02
    clip_norm: float | None = 10.0
    logit_penalty: float = 1e-3
    seed: int = 0
    use_predictor: bool = True
    predictor_episodes: int = 20
    predictor_epochs: int = 10

    def validate(self) -> "TrainConfig":
        if self.episodes <= 0:
            raise ValueError("episodes must be positive")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.batch_size <= 0 or self.buffer_size < self.batch_size:
            raise ValueError("buffer_size must be at least batch_size > 0")
        if self.warmup < self.batch_size:
            raise ValueError("warmup must be at least batch_size")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if self.logit_penalty < 0:
            raise ValueError("logit_penalty must be non-negative")
        if self.update_every < 1:
            raise ValueError("update_every must be >= 1")
        return self

    def epsilon(self, episode: int) -> float:
        """Linear anneal over the first half of training."""
        half = max(1, self.episodes // 2)
        frac = min(1.0, episode / half)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    obs: np.ndarray          # (B, A, obs_dim)
    actions: np.ndarray      # (B, A, K) one-hot
    mask: np.ndarray         # (B, A, K) bool, valid slots at s
    reward: np.ndarray       # (B,)
    next_obs: np.ndarray
    next_mask: np.ndarray    # (B, A, K) bool
    done: np.ndarray         # (B,)
    state: np.ndarray        # (B, state_dim)
    next_state: np.ndarray
    extras: np.ndarray       # (B, 3n) completion | incidents | prediction at s
    next_extras: np.ndarray  # same at s'

    def __len__(self) -> int:
        return len(self.reward)


class ReplayBuffer:
    """Fixed-capacity ring buffer of joint transitions."""

    FIELDS = ("obs", "actions", "mask", "reward", "next_obs", "next_mask", "done", "state", "next_state",
              "extras", "next_extras")

    def __init__(self, capacity: int, n_agents: int, obs_dim: int, n_actions: int, state_dim: int,
                 extras_dim: int):
        self.capacity = capacity
        self.size = 0
        self._head = 0
        A, K = n_agents, n_actions
        self._data = {
            "obs": np.zeros((capacity, A, obs_dim)),
            "actions": np.zeros((capacity, A, K)),
            "mask": np.zeros((capacity, A, K), dtype=bool),
            "reward": np.zeros(capacity),
            "next_obs": np.zeros((capacity, A, obs_dim)),
            "next_mask": np.zeros((capacity, A, K), dtype=bool),
            "done": np.zeros(capacity),
            "state": np.zeros((capacity, state_dim)),
            "next_state": np.zeros((capacity, state_dim)),
            "extras": np.zeros((capacity, extras_dim)),
            "next_extras": np.zeros((capacity, extras_dim)),
        }

    def __len__(self) -> int:
        return self.size

    def add(self, **tr) -> None:
        if not math.isfinite(float(tr["reward"])):
            raise ValueError("non-finite reward")
        for k in self.FIELDS:
            self._data[k][self._head] = tr[k]
        self._head = (self._head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def get(self, idx) -> Batch:
        return Batch(**{k: self._data[k][idx] for k in self.FIELDS})

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} < {batch_size} transitions")
        return self.get(rng.choice(self.size, size=batch_size, replace=False))


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

ACTOR_LAYERS = 3
CRITIC_LAYERS = 3


@dataclass
class AgentNets:
    actor: nn.ParameterStore
    critic: nn.ParameterStore
    target_actor: nn.ParameterStore
    target_critic: nn.ParameterStore
    actor_opt: nn.Adam = field(repr=False, default=None)
    critic_opt: nn.Adam = field(repr=False, default=None)

    @classmethod
    def create(cls, rng, obs_dim: int, n_actions: int, critic_in: int, actor_hidden: int = 64,
               critic_hidden: int = 64, actor_lr: float = 1e-3, critic_lr: float = 1e-3,
               clip_norm: float | None = None) -> "AgentNets":
        actor, critic = nn.ParameterStore(), nn.ParameterStore()
        nn.init_mlp(actor, "l", [obs_dim, actor_hidden, actor_hidden, n_actions], rng)
        nn.init_mlp(critic, "l", [critic_in, critic_hidden, critic_hidden, 1], rng)
        # small output layers keep initial logits/values near zero
        actor["l2.W"] = actor["l2.W"] * 0.1
        critic["l2.W"] = critic["l2.W"] * 0.1
        nets = cls(actor, critic, actor.copy(), critic.copy())
        nets.make_optimisers(actor_lr, critic_lr, clip_norm)
        return nets

    def make_optimisers(self, actor_lr=1e-3, critic_lr=1e-3, clip_norm=None) -> None:
        self.actor_opt = nn.Adam(self.actor, lr=actor_lr, clip_norm=clip_norm)
        self.critic_opt = nn.Adam(self.critic, lr=critic_lr, clip_norm=clip_norm)

    def stores(self) -> dict[str, nn.ParameterStore]:
        return {"actor": self.actor, "critic": self.critic,
                "target_actor": self.target_actor, "target_critic": self.target_critic}


def actor_logits(params: nn.ParameterStore, obs: np.ndarray, tape: nn.Tape | None = None) -> np.ndarray:
    return nn.mlp(params, "l", obs, ACTOR_LAYERS, tape)


def critic_value(params: nn.ParameterStore, x: np.ndarray, tape: nn.Tape | None = None) -> np.ndarray:
    q = nn.mlp(params, "l", x, CRITIC_LAYERS, tape)
    if tape is not None:
        tape.record(lambda dy, grads: dy[:, None])
    return q[:, 0]


def critic_input(state: np.ndarray, extras: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Concatenate global state, extras and the (B, A, K) joint action."""
    return np.concatenate([state, extras, actions.reshape(len(actions), -1)], axis=1)


def relaxed_action(params: nn.ParameterStore, obs: np.ndarray, mask: np.ndarray,
                   tape: nn.Tape | None = None) -> np.ndarray:
    return nn.masked_softmax(actor_logits(params, obs, tape), mask, tape)


def select_action(nets: AgentNets | nn.ParameterStore, obs: np.ndarray, mask: np.ndarray, eps: float,
                  rng: np.random.Generator) -> int | None:
    """Masked argmax of the actor's scores, or a uniform valid slot with probability ``eps``."""
    valid = np.flatnonzero(mask)
    if len(valid) == 0:
        return None
    if len(valid) == 1:
        return int(valid[0])
    if eps > 0 and rng.random() < eps:
        return int(valid[rng.integers(len(valid))])
    params = nets.actor if isinstance(nets, AgentNets) else nets
    scores = actor_logits(params, obs[None, :])[0]
    return int(valid[np.argmax(scores[valid])])


def target_actions(all_nets: Sequence[AgentNets], batch: Batch) -> np.ndarray:
    out = np.empty_like(batch.actions)
    for k, nets in enumerate(all_nets):
        mask = batch.next_mask[:, k]
        out[:, k] = relaxed_action(nets.target_actor, batch.next_obs[:, k], mask)
    return out


def critic_target(batch: Batch, all_nets: Sequence[AgentNets], agent: int, gamma: float,
                  u_next: np.ndarray | None = None) -> np.ndarray:
    """``y = r + gamma * Q'(s', extras', u')`` with u' from the target actors; ``y = r`` at terminals."""
    if u_next is None:
        u_next = target_actions(all_nets, batch)
    q_next = critic_value(all_nets[agent].target_critic,
                          critic_input(batch.next_state, batch.next_extras, u_next))
    return batch.reward + gamma * (1.0 - batch.done) * q_next


def critic_loss(params: nn.ParameterStore, batch: Batch, y: np.ndarray) -> float:
    q = critic_value(params, critic_input(batch.state, batch.extras, batch.actions))
    return float(np.mean((y - q) ** 2))


def update_critic(nets: AgentNets, batch: Batch, y: np.ndarray) -> float:
    """One optimiser step on the mean squared TD error; returns the pre-step loss."""
    tape = nn.Tape()
    q = critic_value(nets.critic, critic_input(batch.state, batch.extras, batch.actions), tape)
    loss = nn.mse_loss(q, y, tape)
    grads, _ = nn.backward(tape)
    nets.critic_opt.step(grads)
    return loss


def actor_gradient(all_nets: Sequence[AgentNets], agent: int, batch: Batch,
                   logit_penalty: float = 0.0) -> dict[str, np.ndarray]:
    """Gradient of ``-mean Q_i + logit_penalty * mean(logits**2)`` w.r.t. actor i.

    Agent i's action in the critic input is replaced by its relaxed (softmax) output.
    The penalty keeps logits from saturating the softmax, where the relaxed action
    goes one-hot and the policy gradient vanishes.
    """
    nets = all_nets[agent]
    A = batch.actions.shape[1]
    K = batch.actions.shape[2]
    mask = batch.mask[:, agent]
    a_tape = nn.Tape()
    logits = actor_logits(nets.actor, batch.obs[:, agent], a_tape)
    u_i = nn.masked_softmax(logits, mask)
    actions = batch.actions.copy()
    actions[:, agent] = u_i
    c_tape = nn.Tape()
    x = critic_input(batch.state, batch.extras, actions)
    q = critic_value(nets.critic, x, c_tape)
    nn.mean_scaled(q, -1.0, c_tape)
    _, dx = nn.backward(c_tape)
    off = x.shape[1] - A * K + agent * K
    du = dx[:, off:off + K]
    # softmax backward by hand so the penalty can join at the logits
    dlogits = u_i * (du - np.sum(u_i * du, axis=1, keepdims=True))
    if logit_penalty:
        dlogits = dlogits + (2.0 * logit_penalty / logits.size) * logits
    grads, _ = nn.backward(a_tape, dlogits)
    return grads


def update_actor(all_nets: Sequence[AgentNets], agent: int, batch: Batch, logit_penalty: float = 0.0) -> float:
    """One ascent step on the sampled policy gradient; returns the gradient norm."""
    grads = actor_gradient(all_nets, agent, batch, logit_penalty)
    all_nets[agent].actor_opt.step(grads)
    return nn.grad_norm(grads.values())


def soft_update(online: nn.ParameterStore, target: nn.ParameterStore, rho: float) -> nn.ParameterStore:
    """``target <- rho * online + (1 - rho) * target`` in place."""
    if list(online.shapes().items()) != list(target.shapes().items()):
        raise ValueError("online/target shape mismatch")
    t = target.flat()
    t *= 1.0 - rho
    t += rho * online.flat()
    return target


# ---------------------------------------------------------------------------
# baseline policies
# ---------------------------------------------------------------------------

def greedy_policy(state: E.WorldState, agent: int) -> int:
    """Best incident by assets/distance if any is known; else earliest-deadline assignment."""
    here = state.agents[agent].position
    d = state.ctx.dist[here]
    incidents = sorted(state.known_incidents)
    if incidents:
        def key(v):
            dv = max(1.0, float(d[v]))
            return (-state.nodes.assets[v] / dv, dv, v)
        return min(incidents, key=key)
    pending = state.log.pending
    if pending:
        dl = {a.node: a.deadline for a in state.log.assignments}
        return min(pending, key=lambda v: (dl[v], float(d[v]), v))
    return here


def random_policy(rng: np.random.Generator) -> Callable[[E.WorldState, int], int]:
    def act(state: E.WorldState, agent: int) -> int:
        valid = E.valid_actions(state, agent)
        return int(valid[rng.integers(len(valid))])

    return act


def learned_policy(all_nets: Sequence[AgentNets]) -> Callable[[E.WorldState, int], int]:
    """Decentralised execution: each agent reads only its own observation and mask."""
    def act(state: E.WorldState, agent: int) -> int:
        obs = E.observe(state, agent)
        mask = E.action_mask(state, agent)
        return select_action(all_nets[agent], obs, mask, 0.0, None)

    return act


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainOutput:
    nets: list[AgentNets]
    predictor: Predictor | None
    rows: list[dict]
    records: list[M.EpisodeRecord]
    critic_losses: list[float]
    updates: int
    transitions: int


def make_nets(ctx: E.Context, cfg: TrainConfig, rng: np.random.Generator) -> list[AgentNets]:
    od, K, sd = E.obs_dim(ctx), ctx.n, E.state_dim(ctx)
    critic_in = sd + 3 * ctx.n + ctx.n_agents * K
    return [AgentNets.create(rng, od, K, critic_in, cfg.actor_hidden, cfg.critic_hidden,
                             cfg.actor_lr, cfg.critic_lr, cfg.clip_norm) for _ in range(ctx.n_agents)]


def fit_predictor(config: ScenarioConfig, cfg: TrainConfig, seed: int) -> Predictor:
    ss = np.random.SeedSequence([seed, 7])
    data_seed, init_seed = (int(v) for v in ss.generate_state(2))
    data = rollout_dataset(config, cfg.predictor_episodes, data_seed)
    rng = np.random.default_rng(init_seed)
    model = Predictor.create(rng)
    train_predictor(model, data, epochs=cfg.predictor_epochs, rng=rng)
    return model


def _transition_parts(state: E.WorldState) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    A = state.ctx.n_agents
    ch = E.node_channels(state)
    obs = np.stack([E.observe(state, k, ch) for k in range(A)])
    mask = np.stack([E.action_mask(state, k) for k in range(A)])
    return obs, mask, E.global_state(state, ch), np.concatenate(E.extras(state))


def terminal_tail(state: E.WorldState, gamma: float) -> float:
    """Discounted value of the steps an early-finished episode never plays.

    With nothing pending and no incident left the world is frozen, so every remaining
    step up to ``t_max`` would pay the same success reward and nothing else. Adding it
    to the stored reward keeps the learner from dragging episodes out to collect it.
    """
    left = state.ctx.config.t_max - state.t
    if left <= 0:
        return 0.0
    per_step = E.team_reward(E.reward_success(state), 0.0, 0.0)
    return per_step * gamma * (1.0 - gamma ** left) / (1.0 - gamma)


def train(config: ScenarioConfig, cfg: TrainConfig, predictor: Predictor | None = None,
          policy_name: str | None = None, progress: Callable[[dict], None] | None = None) -> TrainOutput:
    """Centralised training loop; deterministic for a given ``cfg.seed``."""
    cfg.validate()
    policy_name = policy_name or ("pmaddpg" if cfg.use_predictor else "maddpg")
    root = np.random.SeedSequence(cfg.seed)
    net_ss, sample_ss, explore_ss, ep_ss = root.spawn(4)
    if cfg.use_predictor and predictor is None:
        predictor = fit_predictor(config, cfg, cfg.seed)
    if not cfg.use_predictor:
        predictor = None
    ctx = E.Context.build(config)
    A, K = ctx.n_agents, ctx.n
    nets = make_nets(ctx, cfg, np.random.default_rng(net_ss))
    buf = ReplayBuffer(cfg.buffer_size, A, E.obs_dim(ctx), K, E.state_dim(ctx), 3 * ctx.n)
    sample_rng = np.random.default_rng(sample_ss)
    explore_rng = np.random.default_rng(explore_ss)
    episode_seeds = [int(s.generate_state(1)[0]) for s in ep_ss.spawn(cfg.episodes)]
    rows, records, losses = [], [], []
    steps = updates = 0
    for ep in range(cfg.episodes):
        eps = cfg.epsilon(ep)
        state = E.reset(ctx, episode_seeds[ep], predictor)
        obs, mask, s_vec, ext = _transition_parts(state)
        total, done = 0.0, False
        while not done:
            acts = [select_action(nets[k], obs[k], mask[k], eps, explore_rng) for k in range(A)]
            state, r, done, _ = E.step(state, acts)
            total += r
            obs2, mask2, s_vec2, ext2 = _transition_parts(state)
            onehot = np.zeros((A, K))
            onehot[np.arange(A), acts] = 1.0
            finished = done and state.t < ctx.config.t_max
            stored = r + terminal_tail(state, cfg.gamma) if finished else r
            buf.add(obs=obs, actions=onehot, mask=mask, reward=stored, next_obs=obs2, next_mask=mask2,
                    done=float(finished), state=s_vec, next_state=s_vec2,
                    extras=ext, next_extras=ext2)
            obs, mask, s_vec, ext = obs2, mask2, s_vec2, ext2
            steps += 1
            if len(buf) >= cfg.warmup and steps % cfg.update_every == 0:
                # one minibatch per step shared by all agents, so target actions are computed once
                batch = buf.sample(cfg.batch_size, sample_rng)
                u_next = target_actions(nets, batch)
                for i in range(A):
                    y = critic_target(batch, nets, i, cfg.gamma, u_next)
                    losses.append(update_critic(nets[i], batch, y))
                    update_actor(nets, i, batch, cfg.logit_penalty)
                for n_ in nets:
                    soft_update(n_.actor, n_.target_actor, cfg.rho)
                    soft_update(n_.critic, n_.target_critic, cfg.rho)
                updates += 1
        rec = M.from_state(state, policy_name, cfg.seed, total, ep)
        records.append(rec)
        rows.append(M.row(rec))
        if progress is not None:
            progress(rows[-1])
    return TrainOutput(nets, predictor, rows, records, losses, updates, len(buf))


def run_episodes(config: ScenarioConfig, policy: str | Callable, episodes: int, seed: int,
                 predictor: Predictor | None = None, policy_name: str | None = None) -> list[M.EpisodeRecord]:
    """Evaluate a policy (``"greedy"``, ``"random"`` or a callable) over seeded episodes."""
    ctx = E.Context.build(config)
    root = np.random.SeedSequence([seed, 1])
    out = []
    for ep, ss in enumerate(root.spawn(episodes)):
        env_seed, pol_seed = (int(v) for v in ss.generate_state(2))
        if policy == "greedy":
            act, name = greedy_policy, "greedy"
        elif policy == "random":
            act, name = random_policy(np.random.default_rng(pol_seed)), "random"
        else:
            act, name = policy, policy_name or "learned"
        state = E.reset(ctx, env_seed, predictor)
        total, done = 0.0, False
        while not done:
            state, r, done, _ = E.step(state, [act(state, k) for k in range(ctx.n_agents)])
            total += r
        out.append(M.from_state(state, name, seed, total, ep))
    return out


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
