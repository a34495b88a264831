"""Off-policy training engine: replay, twin critics, delayed actor updates.

One loop hosts all four algorithms. The diffusion variant replaces the
deterministic actor with the denoising sampler and pushes critic gradients
through the whole chain; DDPG is the same code path as TD3 with its
definitional flags forced (single-critic bootstrap, no target smoothing,
no delay); SAC swaps in a squashed-Gaussian actor with an entropy bonus.

Every run is a pure function of (config, seed): the seed expands into four
independent streams (net init, environment, action sampling, updates) via
numpy's SeedSequence, and nothing else draws randomness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import env as env_mod
from .config import RunConfig
from .diffnet import (
    NetParams,
    NetSpec,
    adam_step,
    backward,
    forward,
    init_opt,
    init_params,
    save_params,
)
from .errors import DivergenceError
from .policy import (
    DiffusionSchedule,
    denoise_sample,
    chain_backward,
    make_schedule,
    sample_with_gradient,
    time_embedding,
)

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6


# ------------------------------------------------------------------- replay

@dataclass(frozen=True)
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def push(self, obs, action, reward, next_obs, done) -> None:
        obs = np.asarray(obs, dtype=float)
        action = np.asarray(action, dtype=float)
        next_obs = np.asarray(next_obs, dtype=float)
        if obs.shape != (self.obs.shape[1],) or next_obs.shape != obs.shape:
            raise ValueError(f"observation must have shape ({self.obs.shape[1]},)")
        if action.shape != (self.actions.shape[1],):
            raise ValueError(f"action must have shape ({self.actions.shape[1]},)")
        reward = float(reward)
        if not math.isfinite(reward):
            raise ValueError(f"reward must be finite, got {reward}")
        i = self.cursor
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = 1.0 if done else 0.0
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform sample with replacement from the stored transitions."""
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        if self.size < batch_size:
            raise ValueError(
                f"buffer holds {self.size} transitions, cannot sample {batch_size}")
        idx = rng.integers(0, self.size, batch_size)
        return Batch(
            obs=self.obs[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            next_obs=self.next_obs[idx],
            dones=self.dones[idx],
        )


# -------------------------------------------------------------------- agent

@dataclass(frozen=True)
class Hyper:
    """Resolved per-run hyperparameters, definitional flags already applied."""

    algo: str
    gamma: float
    tau: float
    policy_delay: int
    target_noise_sigma: float
    target_noise_clip: float
    use_twin_min: bool
    batch_size: int
    critic_lr: float
    actor_lr: float
    exploration_sigma: float
    sac_alpha: float


class AgentBundle:
    """Actor + twin critics with their targets and optimizer states."""

    def __init__(self, hyper, actor, actor_target, q1, q2, q1_target, q2_target,
                 actor_opt, q1_opt, q2_opt, schedule=None, embed_dim=0,
                 consistency_weight=0.0):
        self.hyper = hyper
        self.actor = actor
        self.actor_target = actor_target
        self.q1 = q1
        self.q2 = q2
        self.q1_target = q1_target
        self.q2_target = q2_target
        self.actor_opt = actor_opt
        self.q1_opt = q1_opt
        self.q2_opt = q2_opt
        self.schedule = schedule
        self.embed_dim = embed_dim
        self.consistency_weight = consistency_weight


def resolve_hyper(cfg: RunConfig) -> Hyper:
    """Apply the flags that make each baseline itself.

    DDPG is definitionally TD3 without the three TD3 devices; SAC updates
    its (stochastic) actor every step. Everything else follows the config.
    """
    a = cfg.algo
    name = a.name
    use_twin_min = a.use_twin_min
    sigma = a.target_noise_sigma
    delay = a.policy_delay
    if name == "ddpg":
        use_twin_min = False
        sigma = 0.0
        delay = 1
    elif name == "sac":
        delay = 1
    return Hyper(
        algo=name,
        gamma=a.gamma,
        tau=a.tau,
        policy_delay=delay,
        target_noise_sigma=sigma,
        target_noise_clip=a.target_noise_clip,
        use_twin_min=use_twin_min,
        batch_size=a.batch_size,
        critic_lr=a.critic_lr,
        actor_lr=a.actor_lr,
        exploration_sigma=a.exploration_sigma,
        sac_alpha=a.sac_alpha,
    )


def make_agent(cfg: RunConfig, rng: np.random.Generator) -> AgentBundle:
    hyper = resolve_hyper(cfg)
    obs_dim, act_dim = cfg.obs_dim, cfg.act_dim
    hid = cfg.algo.hidden_activation

    critic_spec = NetSpec(sizes=(obs_dim + act_dim, *cfg.algo.critic_hidden, 1),
                          hidden=hid, output="identity")
    q1 = init_params(critic_spec, rng)
    q2 = init_params(critic_spec, rng)

    schedule = None
    embed_dim = 0
    if hyper.algo == "gdmtd3":
        d = cfg.diffusion
        schedule = make_schedule(d.n_steps, d.beta_min, d.beta_max)
        embed_dim = d.time_embed_dim
        actor_spec = NetSpec(
            sizes=(act_dim + embed_dim + obs_dim, *cfg.algo.denoiser_hidden, act_dim),
            hidden=hid, output="identity")
    elif hyper.algo == "sac":
        actor_spec = NetSpec(sizes=(obs_dim, *cfg.algo.actor_hidden, 2 * act_dim),
                             hidden=hid, output="identity")
    else:
        actor_spec = NetSpec(sizes=(obs_dim, *cfg.algo.actor_hidden, act_dim),
                             hidden=hid, output="tanh")
    actor = init_params(actor_spec, rng)
    actor_target = None if hyper.algo == "sac" else actor.copy()

    return AgentBundle(
        hyper=hyper,
        actor=actor,
        actor_target=actor_target,
        q1=q1,
        q2=q2,
        q1_target=q1.copy(),
        q2_target=q2.copy(),
        actor_opt=init_opt(actor_spec),
        q1_opt=init_opt(critic_spec),
        q2_opt=init_opt(critic_spec),
        schedule=schedule,
        embed_dim=embed_dim,
        consistency_weight=cfg.diffusion.consistency_weight,
    )


# ---------------------------------------------------------------- core ops

def td3_target(reward, done, q1_next, q2_next, gamma: float):
    """Clipped-double-Q bootstrap: r + gamma * (1 - done) * min(q1', q2')."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    return reward + gamma * (1.0 - done) * np.minimum(q1_next, q2_next)


def smoothed_target_action(actor_fn, next_obs, sigma: float, clip: float,
                           rng: np.random.Generator):
    """Target-policy smoothing: clamp(actor(s') + clamp(noise, +-clip), +-1)."""
    base = actor_fn(next_obs)
    noise = np.clip(sigma * rng.standard_normal(base.shape), -clip, clip)
    return np.clip(base + noise, -1.0, 1.0)


def soft_update(online: NetParams, target: NetParams, tau: float) -> NetParams:
    """Polyak average: tau * online + (1 - tau) * target."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if online.spec != target.spec:
        raise ValueError("online and target specs differ")
    weights = [tau * w + (1.0 - tau) * t
               for w, t in zip(online.weights, target.weights)]
    biases = [tau * b + (1.0 - tau) * t
              for b, t in zip(online.biases, target.biases)]
    return NetParams(online.spec, weights, biases)


def _critic_in(obs, actions):
    return np.concatenate([obs, actions], axis=1)


def _sac_head(out):
    act_dim = out.shape[1] // 2
    mu = out[:, :act_dim]
    log_std_raw = out[:, act_dim:]
    log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
    return mu, log_std_raw, log_std


def sac_sample(actor: NetParams, obs, rng):
    """Squashed-Gaussian action with its log density.

    rng=None takes the mode (eps = 0), the deterministic evaluation policy.
    Returns (action, log_pi, aux) where aux carries the intermediates the
    actor update needs.
    """
    out, cache = forward(actor, obs)
    mu, log_std_raw, log_std = _sac_head(out)
    std = np.exp(log_std)
    eps = np.zeros_like(mu) if rng is None else rng.standard_normal(mu.shape)
    u = mu + std * eps
    action = np.tanh(u)
    log_pi = np.sum(
        -0.5 * eps * eps - log_std - 0.5 * math.log(2.0 * math.pi)
        - np.log(1.0 - action * action + SQUASH_EPS),
        axis=1,
    )
    aux = (cache, log_std_raw, log_std, std, eps, action)
    return action, log_pi, aux


def _target_action(agent: AgentBundle, next_obs, rng):
    """Next-state action for the critic bootstrap; (action, log_pi or None)."""
    h = agent.hyper
    if h.algo == "sac":
        action, log_pi, _ = sac_sample(agent.actor, next_obs, rng)
        return action, log_pi
    if h.algo == "gdmtd3":
        def actor_fn(o):
            return denoise_sample(agent.actor_target, o, agent.schedule, None,
                                  agent.embed_dim)
    else:
        def actor_fn(o):
            return forward(agent.actor_target, o)[0]
    action = smoothed_target_action(actor_fn, next_obs,
                                    h.target_noise_sigma, h.target_noise_clip, rng)
    return action, None


def critic_update(agent: AgentBundle, batch: Batch, rng: np.random.Generator):
    """One squared-TD step on both critics against a shared target."""
    h = agent.hyper
    next_action, log_pi = _target_action(agent, batch.next_obs, rng)
    x_next = _critic_in(batch.next_obs, next_action)
    q1n = forward(agent.q1_target, x_next)[0][:, 0]
    q2n = forward(agent.q2_target, x_next)[0][:, 0]
    if not h.use_twin_min:
        q2n = q1n
    if log_pi is not None:
        q1n = q1n - h.sac_alpha * log_pi
        q2n = q2n - h.sac_alpha * log_pi
    y = td3_target(batch.rewards, batch.dones, q1n, q2n, h.gamma)

    x = _critic_in(batch.obs, batch.actions)
    losses = []
    for which in ("q1", "q2"):
        params = getattr(agent, which)
        opt = getattr(agent, which + "_opt")
        out, cache = forward(params, x)
        resid = out[:, 0] - y
        loss = float(np.mean(resid * resid))
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite critic loss ({which})")
        upstream = (2.0 / resid.size) * resid[:, None]
        grads, _ = backward(params, cache, upstream)
        new_params, new_opt = adam_step(params, grads, opt, lr=h.critic_lr)
        setattr(agent, which, new_params)
        setattr(agent, which + "_opt", new_opt)
        losses.append(loss)
    return tuple(losses)


def _q1_action_grad(agent: AgentBundle, obs, actions):
    """dQ1/da and the q1 values at (obs, actions)."""
    x = _critic_in(obs, actions)
    out, cache = forward(agent.q1, x)
    upstream = np.full((obs.shape[0], 1), -1.0 / obs.shape[0])
    _, input_grad = backward(agent.q1, cache, upstream)
    return out[:, 0], input_grad[:, obs.shape[1]:]


def actor_update(agent: AgentBundle, batch: Batch, rng: np.random.Generator) -> float:
    """One policy-improvement step; soft-updates every target afterwards."""
    h = agent.hyper
    if h.algo == "sac":
        loss = _actor_step_sac(agent, batch, rng)
    elif h.algo == "gdmtd3":
        loss = _actor_step_gdm(agent, batch, rng)
    else:
        loss = _actor_step_td3(agent, batch)
    if not math.isfinite(loss):
        raise DivergenceError("non-finite actor loss")
    agent.q1_target = soft_update(agent.q1, agent.q1_target, h.tau)
    agent.q2_target = soft_update(agent.q2, agent.q2_target, h.tau)
    if agent.actor_target is not None:
        agent.actor_target = soft_update(agent.actor, agent.actor_target, h.tau)
    return loss


def _actor_step_td3(agent: AgentBundle, batch: Batch) -> float:
    actions, cache = forward(agent.actor, batch.obs)
    q_vals, action_grad = _q1_action_grad(agent, batch.obs, actions)
    grads, _ = backward(agent.actor, cache, action_grad)
    agent.actor, agent.actor_opt = adam_step(
        agent.actor, grads, agent.actor_opt, lr=agent.hyper.actor_lr)
    return float(-np.mean(q_vals))


def _denoising_grads(agent: AgentBundle, batch: Batch, rng):
    """Gradient of the denoising MSE with buffer actions as clean targets.

    Each row gets its own diffusion time and noise draw. Stored actions can
    sit exactly on +-1 (clipped exploration), so the squash inverse clips.
    """
    sched = agent.schedule
    x0 = np.arctanh(np.clip(batch.actions, -1.0 + 1e-6, 1.0 - 1e-6))
    n_rows, _ = x0.shape
    t = rng.integers(1, sched.n_steps + 1, n_rows)
    eps = rng.standard_normal(x0.shape)
    abar = sched.alpha_bars[t - 1][:, None]
    x_t = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps
    emb = np.stack([time_embedding(ti, agent.embed_dim) for ti in t])
    out, cache = forward(agent.actor, np.concatenate([x_t, emb, batch.obs], axis=1))
    resid = out - eps
    grads, _ = backward(agent.actor, cache, (2.0 / resid.size) * resid)
    return grads, float(np.mean(resid * resid))


def _actor_step_gdm(agent: AgentBundle, batch: Batch, rng) -> float:
    tape = sample_with_gradient(agent.actor, batch.obs, agent.schedule, rng,
                                agent.embed_dim)
    q_vals, action_grad = _q1_action_grad(agent, batch.obs, tape.actions)
    grads = chain_backward(agent.actor, tape, action_grad, agent.schedule)
    if agent.consistency_weight > 0.0:
        reg, _ = _denoising_grads(agent, batch, rng)
        reg.scale_(agent.consistency_weight)
        grads.add_(reg)
    agent.actor, agent.actor_opt = adam_step(
        agent.actor, grads, agent.actor_opt, lr=agent.hyper.actor_lr)
    return float(-np.mean(q_vals))


def _actor_step_sac(agent: AgentBundle, batch: Batch, rng) -> float:
    h = agent.hyper
    n = batch.obs.shape[0]
    action, log_pi, aux = sac_sample(agent.actor, batch.obs, rng)
    cache, log_std_raw, log_std, std, eps, _ = aux

    x = _critic_in(batch.obs, action)
    out1, cache1 = forward(agent.q1, x)
    out2, cache2 = forward(agent.q2, x)
    q1v, q2v = out1[:, 0], out2[:, 0]
    use1 = q1v <= q2v
    loss = float(np.mean(h.sac_alpha * log_pi - np.minimum(q1v, q2v)))

    up1 = np.where(use1, -1.0 / n, 0.0)[:, None]
    up2 = np.where(use1, 0.0, -1.0 / n)[:, None]
    _, in1 = backward(agent.q1, cache1, up1)
    _, in2 = backward(agent.q2, cache2, up2)
    obs_dim = batch.obs.shape[1]
    dq_da = in1[:, obs_dim:] + in2[:, obs_dim:]

    # d/da of the alpha * log_pi term: +alpha * 2a / (1 - a^2 + eps), per element
    dent_da = (h.sac_alpha / n) * 2.0 * action / (1.0 - action * action + SQUASH_EPS)
    g_a = dq_da + dent_da
    g_u = g_a * (1.0 - action * action)
    g_mu = g_u
    g_log_std = g_u * eps * std - h.sac_alpha / n
    mask = (log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)
    g_log_std = g_log_std * mask
    upstream = np.concatenate([g_mu, g_log_std], axis=1)
    grads, _ = backward(agent.actor, cache, upstream)
    agent.actor, agent.actor_opt = adam_step(
        agent.actor, grads, agent.actor_opt, lr=h.actor_lr)
    return loss


# ----------------------------------------------------------------- training

@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    total_reward: float
    mean_secrecy: float
    mean_energy: float
    speed_violations: int
    collisions: int


@dataclass
class TrainResult:
    records: list
    agent: AgentBundle
    diverged: bool = False
    error: str | None = None


def _explore_action(agent: AgentBundle, obs, rng, act_dim: int):
    h = agent.hyper
    if h.algo == "gdmtd3":
        return denoise_sample(agent.actor, obs[None], agent.schedule, rng,
                              agent.embed_dim)[0]
    if h.algo == "sac":
        action, _, _ = sac_sample(agent.actor, obs[None], rng)
        return action[0]
    base = forward(agent.actor, obs[None])[0][0]
    noisy = base + h.exploration_sigma * rng.standard_normal(act_dim)
    return np.clip(noisy, -1.0, 1.0)


def greedy_policy(agent: AgentBundle):
    """Deterministic policy closure: (obs, rng) -> raw action in [-1,1]^d.

    The rng only feeds the diffusion actor's chain; the other actors
    ignore it (no exploration noise at evaluation time).
    """
    h = agent.hyper

    def policy(obs, rng):
        if h.algo == "gdmtd3":
            return denoise_sample(agent.actor, obs[None], agent.schedule, rng,
                                  agent.embed_dim)[0]
        if h.algo == "sac":
            action, _, _ = sac_sample(agent.actor, obs[None], None)
            return action[0]
        return forward(agent.actor, obs[None])[0][0]

    return policy


def train(cfg: RunConfig, seed: int, checkpoint_dir: str | None = None) -> TrainResult:
    """Run one seeded training job; pure function of (cfg, seed).

    The seed spawns four streams in fixed order: network init, environment
    (reset + tap motion), action sampling, and update-time draws (batch
    indices, smoothing noise, chain noise). Divergence aborts the run and
    returns the completed episodes with the error attached.
    """
    init_rng, env_rng, action_rng, update_rng = [
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]
    agent = make_agent(cfg, init_rng)
    h = agent.hyper
    buffer = ReplayBuffer(cfg.algo.buffer_capacity, cfg.obs_dim, cfg.act_dim)
    warmup = h.batch_size * cfg.algo.warmup_batches
    records = []
    update_count = 0

    for episode in range(cfg.algo.episodes):
        state = env_mod.reset(cfg, env_rng)
        obs = env_mod.observe(state, cfg)
        total_reward = 0.0
        total_secrecy = 0.0
        total_energy = 0.0
        speed_violations = 0
        collisions = 0
        steps = 0
        try:
            while True:
                if buffer.size < warmup:
                    raw = action_rng.uniform(-1.0, 1.0, cfg.act_dim)
                else:
                    raw = _explore_action(agent, obs, action_rng, cfg.act_dim)
                out = env_mod.step(state, raw, cfg, env_rng)
                next_obs = env_mod.observe(out.next_state, cfg)
                buffer.push(obs, raw, out.reward, next_obs, out.done)

                total_reward += out.reward
                total_secrecy += out.secrecy
                total_energy += out.energy
                speed_violations += out.violations.speed_count
                collisions += out.violations.collision_count
                steps += 1

                if buffer.size >= warmup:
                    for _ in range(cfg.algo.updates_per_step):
                        batch = buffer.sample(h.batch_size, update_rng)
                        critic_update(agent, batch, update_rng)
                        update_count += 1
                        if update_count % h.policy_delay == 0:
                            actor_update(agent, batch, update_rng)

                state, obs = out.next_state, next_obs
                if out.done:
                    break
        except DivergenceError as exc:
            return TrainResult(records=records, agent=agent, diverged=True,
                               error=f"episode {episode}: {exc}")

        records.append(EpisodeRecord(
            episode=episode,
            total_reward=total_reward,
            mean_secrecy=total_secrecy / steps,
            mean_energy=total_energy / steps,
            speed_violations=speed_violations,
            collisions=collisions,
        ))
        every = cfg.algo.checkpoint_every
        if checkpoint_dir is not None and every > 0 and (episode + 1) % every == 0:
            save_params(f"{checkpoint_dir}/actor_ep{episode + 1:05d}.json", agent.actor)

    return TrainResult(records=records, agent=agent)


@dataclass(frozen=True)
class EvalMetrics:
    mean_reward: float
    mean_secrecy: float
    mean_energy: float
    episodes: int
    steps: int


def evaluate(policy, cfg: RunConfig, episodes: int, seed: int) -> EvalMetrics:
    """Deterministic rollout metrics for a policy(obs, rng) -> action.

    Averages are per step over episodes * episode_steps. The seed spawns
    (environment, sampling) streams, so repeated calls are identical.
    """
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    env_rng, sample_rng = [
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)]
    total_reward = 0.0
    total_secrecy = 0.0
    total_energy = 0.0
    steps = 0
    for _ in range(episodes):
        state = env_mod.reset(cfg, env_rng)
        obs = env_mod.observe(state, cfg)
        while True:
            raw = policy(obs, sample_rng)
            out = env_mod.step(state, raw, cfg, env_rng)
            total_reward += out.reward
            total_secrecy += out.secrecy
            total_energy += out.energy
            steps += 1
            state, obs = out.next_state, env_mod.observe(out.next_state, cfg)
            if out.done:
                break
    return EvalMetrics(
        mean_reward=total_reward / steps,
        mean_secrecy=total_secrecy / steps,
        mean_energy=total_energy / steps,
        episodes=episodes,
        steps=steps,
    )
