"""Shared helpers: finite-difference oracles and a cross-test run cache."""

from __future__ import annotations

import numpy as np
import pytest

from mdpgt import decentral, envsim, gradient, policy


def fd_score(params: policy.PolicyParams, state: np.ndarray, action, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of log_prob with respect to theta."""
    theta = params.theta
    grad = np.empty_like(theta)
    for j in range(theta.size):
        bump = np.zeros_like(theta)
        bump[j] = step
        hi = policy.PolicyParams(theta + bump, params.spec)
        lo = policy.PolicyParams(theta - bump, params.spec)
        grad[j] = (
            policy.log_prob_batch(hi, np.atleast_2d(state), np.atleast_1d(action))[0]
            - policy.log_prob_batch(lo, np.atleast_2d(state), np.atleast_1d(action))[0]
        ) / (2.0 * step)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def tracked_gradient_oracle(
    cfg: decentral.LoopConfig, episodes: int, seed: int
) -> list[np.ndarray]:
    """Straight-line vanilla-gradient-with-tracking loop.

    Mirrors the update laws directly on stacked arrays under the same
    derived rng streams, to pin down what the momentum method must reduce
    to at beta = 1.  Returns the parameter stack after every iteration.
    """
    n = cfg.env.n_agents
    theta0 = policy.init_params(cfg.policy, decentral.param_stream(seed))
    x = np.stack([theta0.theta.copy() for _ in range(n)])
    w = cfg.mixing.weights

    def grads(params_stack: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        pols = [policy.PolicyParams(params_stack[i].copy(), cfg.policy) for i in range(n)]
        trajs = envsim.sample_trajectory(cfg.env, pols, rng)
        return np.stack(
            [gradient.pg_estimate(trajs[i], pols[i], cfg.estimator) for i in range(n)]
        )

    init_rng = decentral.init_stream(seed)
    streams = init_rng.spawn(cfg.batch_init)
    pols0 = [policy.PolicyParams(x[i].copy(), cfg.policy) for i in range(n)]
    batch_grads = []
    for st in streams:
        trajs = envsim.sample_trajectory(cfg.env, pols0, st)
        batch_grads.append(
            np.stack([gradient.pg_estimate(trajs[i], pols0[i], cfg.estimator) for i in range(n)])
        )
    u = np.mean(batch_grads, axis=0)
    v = u.copy()
    x = w @ (x + cfg.eta * v)
    history = [x.copy()]
    for k in range(1, episodes):
        u_new = grads(x, decentral.rollout_stream(seed, k))
        v = w @ v + u_new - u
        u = u_new
        x = w @ (x + cfg.eta * v)
        history.append(x.copy())
    return history


@pytest.fixture(scope="session")
def run_cache():
    """Memoizes full training runs across acceptance criteria."""
    cache: dict = {}

    def get(algo: str, cfg: decentral.LoopConfig, episodes: int, seed: int) -> decentral.RunResult:
        key = (
            algo, episodes, seed, cfg.env, cfg.policy,
            cfg.eta, cfg.beta, cfg.batch_init, cfg.estimator,
            cfg.mixing.weights.tobytes(),
        )
        if key not in cache:
            cache[key] = decentral.run(algo, cfg, episodes, seed)
        return cache[key]

    return get
