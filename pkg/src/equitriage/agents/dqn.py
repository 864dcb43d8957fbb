"""Deep Q-learning with experience replay, a target network and an optional conservative penalty."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from equitriage.agents.mlp import MLP, Adam, clip_gradients
from equitriage.agents.policy import Policy
from equitriage.agents.replay import ReplayBuffer
from equitriage.agents.schedule import EpsilonSchedule
from equitriage.errors import ConfigurationError, TrainingAborted
from equitriage.reward import RewardBreakdown
from equitriage.rng import child_seed, substream


@dataclass(frozen=True)
class DQNConfig:
    lr: float = 1e-3
    gamma: float = 0.99
    buffer_size: int = 50_000
    batch_size: int = 64
    target_sync: int = 500
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    hidden: tuple[int, ...] = (128, 128)
    total_steps: int = 20_000
    learning_starts: int = 64
    train_every: int = 1
    cql_alpha: float = 0.0
    grad_clip: float | None = 10.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError("gamma must be in (0, 1)")
        if self.cql_alpha < 0:
            raise ConfigurationError("cql_alpha must be >= 0")
        if self.batch_size < 1 or self.buffer_size < self.batch_size:
            raise ConfigurationError("buffer must hold at least one batch")
        if self.target_sync < 1 or self.total_steps < 1 or self.train_every < 1:
            raise ConfigurationError("step counts must be positive")


def logsumexp(q: np.ndarray) -> np.ndarray:
    m = q.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(q - m).sum(axis=1, keepdims=True)))[:, 0]


def dqn_loss_and_grad(q: np.ndarray, actions: np.ndarray, targets: np.ndarray,
                      cql_alpha: float = 0.0) -> tuple[float, float, np.ndarray]:
    """Squared TD loss plus optional conservative term, and the gradient on ``q``.

    Returns ``(td_loss, cql_term, dloss/dq)``; ``cql_term`` is exactly 0 when
    ``cql_alpha`` is 0.
    """
    B = len(actions)
    rows = np.arange(B)
    q_taken = q[rows, actions]
    err = q_taken - targets
    td_loss = float(np.mean(err ** 2))
    grad = np.zeros_like(q)
    grad[rows, actions] = 2.0 * err / B
    cql = 0.0
    if cql_alpha > 0:
        lse = logsumexp(q)
        cql = cql_alpha * float(np.mean(lse - q_taken))
        soft = np.exp(q - lse[:, None])
        soft[rows, actions] -= 1.0
        grad += cql_alpha * soft / B
    return td_loss, cql, grad


def _store(buffer: ReplayBuffer, tr, a: int) -> None:
    terminal = tr.terminal and not tr.info.get("truncated", False)
    if isinstance(getattr(tr, "reward", None), RewardBreakdown):
        buffer.add_transition(tr, a)
        if terminal != tr.terminal:
            buffer.dones[(buffer._next - 1) % buffer.capacity] = float(terminal)
    else:
        buffer.add(tr.observation, a, tr.training_reward, tr.next_observation, terminal)


def dqn_train(env, config: DQNConfig | None = None, seed: int = 0, trace: dict | None = None,
              buffer: ReplayBuffer | None = None) -> Policy:
    """Train an online DQN on ``env`` for ``config.total_steps`` steps; returns the greedy policy."""
    cfg = config or DQNConfig()
    rng = substream(seed, "training", "dqn")
    sizes = (env.obs_dim, *cfg.hidden, env.n_actions)
    online = MLP(sizes, rng)
    target = online.copy()
    opt = Adam(lr=cfg.lr)
    if buffer is None:
        strata = getattr(env, "strata", ())
        weights = getattr(env, "weights", None)
        den = getattr(env, "denominators", None)
        buffer = ReplayBuffer(cfg.buffer_size, env.obs_dim, strata, weights,
                              den.N_hat if den else None, den.raw_N if den else None)
    losses, returns, syncs = [], [], []
    episode = 0
    obs = env.reset(child_seed(seed, "train_episode", episode))
    ep_return = 0.0
    for step in range(cfg.total_steps):
        if rng.random() < cfg.epsilon(step):
            a = int(rng.integers(env.n_actions))
        else:
            a = int(np.argmax(online(obs)[0]))
        tr = env.step(a)
        _store(buffer, tr, a)
        ep_return += tr.training_reward
        if tr.terminal:
            returns.append(ep_return)
            episode += 1
            ep_return = 0.0
            obs = env.reset(child_seed(seed, "train_episode", episode))
        else:
            obs = tr.next_observation

        if len(buffer) >= cfg.learning_starts and step % cfg.train_every == 0:
            batch = buffer.sample(cfg.batch_size, rng)
            next_q = target(batch.next_obs).max(axis=1)
            y = batch.rewards + cfg.gamma * (1.0 - batch.dones) * next_q
            q = online(batch.obs)
            td_loss, cql, grad_q = dqn_loss_and_grad(q, batch.actions, y, cfg.cql_alpha)
            loss = td_loss + cql
            if not np.isfinite(loss):
                raise TrainingAborted(f"non-finite DQN loss at step {step}",
                                      {"step": step, "td_loss": td_loss, "cql": cql,
                                       "q_max": float(np.nanmax(np.abs(q)))})
            grads = online.backward(grad_q)
            clip_gradients(grads, cfg.grad_clip)
            opt.step(online.params, grads)
            losses.append(loss)
        if (step + 1) % cfg.target_sync == 0:
            target.load_from(online)
            syncs.append(step + 1)
    if trace is not None:
        trace.update(losses=losses, episode_returns=returns, target_syncs=syncs, target=target)
    return Policy("dqn", env.actions, env.obs_dim, {"net": online},
                  meta={"total_steps": cfg.total_steps, "cql_alpha": cfg.cql_alpha, "gamma": cfg.gamma})
