"""Diffusion-policy actor: reverse denoising chain with pathwise gradients.

Actions are produced by iteratively denoising a Gaussian seed conditioned
on the observation. The same chain supports three modes: stochastic
sampling (exploration), a fully pinned zero-noise chain (target actor),
and sampling with a recorded tape so an upstream dL/d(action) can be
backpropagated through every denoiser evaluation with the noise draws
held fixed (reparameterized, pathwise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffnet import NetParams, backward, forward, zero_grads
from .errors import DivergenceError


@dataclass(frozen=True)
class DiffusionSchedule:
    """Forward-noising coefficients: betas, alphas = 1 - betas, their running products."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=float)
        a = np.asarray(self.alphas, dtype=float)
        ab = np.asarray(self.alpha_bars, dtype=float)
        if b.ndim != 1 or len(b) < 1 or a.shape != b.shape or ab.shape != b.shape:
            raise ValueError("schedule arrays must be matching 1-D, length >= 1")
        if np.any(b <= 0.0) or np.any(b >= 1.0):
            raise ValueError("betas must lie strictly inside (0, 1)")
        if not np.allclose(a, 1.0 - b, rtol=0.0, atol=0.0):
            raise ValueError("alphas must equal 1 - betas")
        if not np.array_equal(ab, np.cumprod(a)):
            raise ValueError("alpha_bars must be the running product of alphas")
        if np.any(np.diff(ab) >= 0.0):
            raise ValueError("alpha_bars must be strictly decreasing")
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "alpha_bars", ab)

    @property
    def n_steps(self) -> int:
        return len(self.betas)


def make_schedule(n_steps: int, beta_min: float = 0.1, beta_max: float = 0.5) -> DiffusionSchedule:
    """Linearly spaced betas from beta_min to beta_max inclusive."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    betas = np.linspace(beta_min, beta_max, n_steps)
    alphas = 1.0 - betas
    return DiffusionSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def time_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of the (1-based) denoising step index."""
    if dim < 2 or dim % 2 != 0:
        raise ValueError(f"embedding dim must be even and >= 2, got {dim}")
    half = dim // 2
    exponents = np.arange(half) / max(1, half - 1)
    freqs = 10000.0 ** (-exponents)
    angles = t * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


@dataclass
class ChainNoise:
    """Frozen randomness of one chain run: seed x_N and per-step kicks.

    kicks[t-1] is the noise injected after denoising step t; kicks[0]
    (the final step) is zero when the chain is deterministic_final.
    """

    x_init: np.ndarray   # (batch, action_dim)
    kicks: np.ndarray    # (n_steps, batch, action_dim)


def draw_chain_noise(schedule: DiffusionSchedule, batch: int, action_dim: int,
                     rng, deterministic_final: bool = True) -> ChainNoise:
    """Draw the chain's randomness; rng=None pins everything to zero."""
    n = schedule.n_steps
    if rng is None:
        return ChainNoise(
            x_init=np.zeros((batch, action_dim)),
            kicks=np.zeros((n, batch, action_dim)),
        )
    x_init = rng.standard_normal((batch, action_dim))
    kicks = np.zeros((n, batch, action_dim))
    # Draw in chain-consumption order: t = N down to 2, then optionally t=1.
    for t in range(n, 1, -1):
        kicks[t - 1] = rng.standard_normal((batch, action_dim))
    if not deterministic_final and n >= 1:
        kicks[0] = rng.standard_normal((batch, action_dim))
    return ChainNoise(x_init=x_init, kicks=kicks)


def _denoiser_input(x, t, condition, embed_dim):
    emb = np.broadcast_to(time_embedding(t, embed_dim), (x.shape[0], embed_dim))
    return np.concatenate([x, emb, condition], axis=1)


@dataclass
class ChainTape:
    """Everything needed to backprop through one recorded chain run."""

    noise: ChainNoise
    caches: list           # ForwardCache per t, index t-1
    pre_squash: np.ndarray  # x_0 before tanh
    actions: np.ndarray


def run_chain(params: NetParams, condition: np.ndarray, schedule: DiffusionSchedule,
              noise: ChainNoise, embed_dim: int, record: bool = False):
    """Execute the reverse chain from x_N to the squashed action.

    x_{t-1} = (x_t - (1-a_t)/sqrt(1-abar_t) * eps_hat) / sqrt(a_t) + sqrt(b_t) * z_t

    Returns the action batch, or a ChainTape when record=True.
    """
    condition = np.asarray(condition, dtype=float)
    if condition.ndim != 2 or condition.shape[0] != noise.x_init.shape[0]:
        raise ValueError(
            f"condition must be (batch, obs_dim) matching the noise batch, got {condition.shape}")
    n = schedule.n_steps
    x = noise.x_init
    caches = [None] * n
    for t in range(n, 0, -1):
        inp = _denoiser_input(x, t, condition, embed_dim)
        eps_hat, cache = forward(params, inp)
        if record:
            caches[t - 1] = cache
        a_t = schedule.alphas[t - 1]
        abar_t = schedule.alpha_bars[t - 1]
        scale = (1.0 - a_t) / math.sqrt(1.0 - abar_t)
        x = (x - scale * eps_hat) / math.sqrt(a_t)
        if t > 1 or np.any(noise.kicks[t - 1]):
            x = x + math.sqrt(schedule.betas[t - 1]) * noise.kicks[t - 1]
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite chain state at denoising step {t}")
    actions = np.tanh(x)
    if record:
        return ChainTape(noise=noise, caches=caches, pre_squash=x, actions=actions)
    return actions


def denoise_sample(params: NetParams, condition: np.ndarray, schedule: DiffusionSchedule,
                   rng, embed_dim: int, deterministic_final: bool = True) -> np.ndarray:
    """Sample actions for a batch of observations.

    rng=None runs the fully pinned chain (zero seed, zero kicks), the
    deterministic mode used for target-policy evaluation.
    """
    condition = np.asarray(condition, dtype=float)
    noise = draw_chain_noise(schedule, condition.shape[0],
                             _action_dim(params, condition, embed_dim),
                             rng, deterministic_final)
    return run_chain(params, condition, schedule, noise, embed_dim)


def _action_dim(params: NetParams, condition: np.ndarray, embed_dim: int) -> int:
    return params.spec.in_dim - embed_dim - condition.shape[1]


def sample_with_gradient(params: NetParams, condition: np.ndarray,
                         schedule: DiffusionSchedule, rng, embed_dim: int,
                         deterministic_final: bool = True) -> ChainTape:
    """Run the chain recording every intermediate for pathwise backprop."""
    condition = np.asarray(condition, dtype=float)
    noise = draw_chain_noise(schedule, condition.shape[0],
                             _action_dim(params, condition, embed_dim),
                             rng, deterministic_final)
    return run_chain(params, condition, schedule, noise, embed_dim, record=True)


def chain_backward(params: NetParams, tape: ChainTape, action_grad: np.ndarray,
                   schedule: DiffusionSchedule):
    """Backprop dL/d(action) through the recorded chain, noise held fixed.

    Returns accumulated parameter Grads across all denoiser evaluations.
    The chain is differentiated exactly: through the tanh squash, then for
    each step t the linear combination and the denoiser itself (both its
    parameters and its x_t input).
    """
    action_grad = np.asarray(action_grad, dtype=float)
    if action_grad.shape != tape.actions.shape:
        raise ValueError(f"action_grad must have shape {tape.actions.shape}")
    total = zero_grads(params.spec)
    act_dim = tape.actions.shape[1]
    # Through the squash: actions = tanh(x_0).
    g = action_grad * (1.0 - tape.actions ** 2)
    for t in range(1, schedule.n_steps + 1):
        a_t = schedule.alphas[t - 1]
        abar_t = schedule.alpha_bars[t - 1]
        inv_sqrt = 1.0 / math.sqrt(a_t)
        scale = (1.0 - a_t) / math.sqrt(1.0 - abar_t)
        # x_{t-1} = (x_t - scale * eps_hat) / sqrt(a_t) + kick
        eps_upstream = (-inv_sqrt * scale) * g
        grads, input_grad = backward(params, tape.caches[t - 1], eps_upstream)
        total.add_(grads)
        g = inv_sqrt * g + input_grad[:, :act_dim]
    return total
