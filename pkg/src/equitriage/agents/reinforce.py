"""REINFORCE with a learned state-value baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from equitriage.agents.mlp import MLP, Adam, clip_gradients
from equitriage.agents.policy import Policy, softmax
from equitriage.errors import ConfigurationError, TrainingAborted
from equitriage.rng import child_seed, substream


@dataclass(frozen=True)
class ReinforceConfig:
    policy_lr: float = 3e-4
    baseline_lr: float = 1e-3
    gamma: float = 0.99
    policy_hidden: tuple[int, ...] = (128, 128)
    baseline_hidden: tuple[int, ...] = (64, 64)
    episodes: int = 2000
    batch_episodes: int = 1
    grad_clip: float | None = None
    use_baseline: bool = True

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError("gamma must be in (0, 1)")
        if self.episodes < 1 or self.batch_episodes < 1:
            raise ConfigurationError("episode counts must be positive")
        if self.policy_lr <= 0 or self.baseline_lr <= 0:
            raise ConfigurationError("learning rates must be positive")


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    """``G_t = r_t + gamma * G_{t+1}``, computed backwards."""
    out = np.zeros(len(rewards))
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def policy_gradient(net: MLP, obs: np.ndarray, actions: np.ndarray, advantages: np.ndarray) -> list[np.ndarray]:
    """Gradient of ``-mean_t log pi(a_t|s_t) * A_t`` with respect to the policy parameters.

    Descending this gradient ascends the policy-gradient objective.
    """
    logits = net(obs)
    probs = softmax(logits)
    T = len(actions)
    d_logits = probs.copy()
    d_logits[np.arange(T), actions] -= 1.0
    d_logits *= advantages[:, None] / T
    return net.backward(d_logits)


def baseline_gradient(net: MLP, obs: np.ndarray, returns: np.ndarray) -> tuple[float, list[np.ndarray]]:
    values = net(obs)[:, 0]
    err = values - returns
    loss = float(np.mean(err ** 2))
    grads = net.backward((2.0 * err / len(returns))[:, None])
    return loss, grads


def _finite(grads) -> bool:
    return all(np.all(np.isfinite(g)) for g in grads)


def reinforce_train(env, config: ReinforceConfig | None = None, seed: int = 0,
                    trace: dict | None = None) -> Policy:
    """Episode-batch REINFORCE; the returned policy samples from its softmax."""
    cfg = config or ReinforceConfig()
    rng = substream(seed, "training", "reinforce")
    policy_net = MLP((env.obs_dim, *cfg.policy_hidden, env.n_actions), rng)
    baseline_net = MLP((env.obs_dim, *cfg.baseline_hidden, 1), rng)
    policy_opt = Adam(lr=cfg.policy_lr)
    baseline_opt = Adam(lr=cfg.baseline_lr)
    returns_trace, baseline_losses = [], []
    batch_obs, batch_act, batch_ret = [], [], []
    for ep in range(cfg.episodes):
        obs = env.reset(child_seed(seed, "train_episode", ep))
        ep_obs, ep_act, ep_rew = [], [], []
        while True:
            probs = softmax(policy_net(obs)[0])
            a = int(rng.choice(env.n_actions, p=probs))
            tr = env.step(a)
            ep_obs.append(obs)
            ep_act.append(a)
            ep_rew.append(tr.training_reward)
            if tr.terminal:
                break
            obs = tr.next_observation
        batch_obs.append(np.array(ep_obs))
        batch_act.append(np.array(ep_act))
        batch_ret.append(discounted_returns(ep_rew, cfg.gamma))
        returns_trace.append(float(np.sum(ep_rew)))
        if len(batch_obs) < cfg.batch_episodes and ep < cfg.episodes - 1:
            continue
        X = np.concatenate(batch_obs)
        A = np.concatenate(batch_act)
        G = np.concatenate(batch_ret)
        batch_obs, batch_act, batch_ret = [], [], []
        if cfg.use_baseline:
            b = baseline_net(X)[:, 0]
            b_loss, b_grads = baseline_gradient(baseline_net, X, G)
        else:
            b = np.zeros_like(G)
            b_loss, b_grads = 0.0, None
        p_grads = policy_gradient(policy_net, X, A, G - b)
        if not _finite(p_grads) or (b_grads is not None and not _finite(b_grads)):
            raise TrainingAborted(f"non-finite gradient after episode {ep}",
                                  {"episode": ep, "mean_return": float(np.mean(G)), "baseline_loss": b_loss})
        clip_gradients(p_grads, cfg.grad_clip)
        policy_opt.step(policy_net.params, p_grads)
        if b_grads is not None:
            clip_gradients(b_grads, cfg.grad_clip)
            baseline_opt.step(baseline_net.params, b_grads)
        baseline_losses.append(b_loss)
    if trace is not None:
        trace.update(episode_returns=returns_trace, baseline_losses=baseline_losses)
    return Policy("reinforce", env.actions, env.obs_dim, {"net": policy_net, "baseline": baseline_net},
                  mode="stochastic", meta={"episodes": cfg.episodes, "gamma": cfg.gamma})
