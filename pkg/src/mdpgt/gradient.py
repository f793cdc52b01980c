"""Policy-gradient estimators and the momentum surrogate update.

The surrogate ``u`` is a convex combination (weight ``beta``) of the fresh
stochastic gradient and a recursive correction term in which the gradient
at the previous parameters is importance-reweighted onto the current
sampling distribution.  ``beta = 1`` degenerates to the plain stochastic
policy gradient; small ``beta`` trades bias for variance like a momentum
coefficient.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import envsim, policy
from .envsim import EnvConfig, Trajectory
from .policy import PolicyParams

__all__ = [
    "Surrogate",
    "NumericsWarning",
    "pg_estimate",
    "importance_weight",
    "surrogate_update",
    "surrogate_from_batch",
    "init_surrogate",
]

LOG_WEIGHT_CLAMP = 50.0
WEIGHT_FAULT_LIMIT = 1e12
ESTIMATORS = ("reinforce", "pgt")


class NumericsWarning(UserWarning):
    """Importance weights pinned at a numeric guard rail."""


@dataclass
class Surrogate:
    """Per-agent surrogate state.

    ``u`` is the current estimate, ``u_prev`` the one before it (needed by
    the gradient tracker), and ``params_prev`` the parameter snapshot the
    next update will re-evaluate the gradient at.  ``clamp_events`` counts
    how often the importance weight hit the log-space clamp so runs can
    report it.
    """

    u: np.ndarray
    u_prev: np.ndarray
    params_prev: PolicyParams
    clamp_events: int = 0

    def __post_init__(self) -> None:
        d = self.params_prev.theta.shape[0]
        if self.u.shape != (d,) or self.u_prev.shape != (d,):
            raise ValueError("surrogate vectors must match the policy dimension")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.u_prev))):
            raise ValueError("surrogate vectors must be finite")


def pg_estimate(
    traj: Trajectory, params: PolicyParams, estimator: str = "pgt"
) -> np.ndarray:
    """Single-trajectory policy-gradient estimate at ``params``.

    ``reinforce`` multiplies the summed scores by the whole discounted
    return; ``pgt`` is the causal form, weighting each step's score by the
    discounted reward-to-go ``sum_{q>=h} gamma^q r_q`` (zero baseline).
    Both are unbiased; the causal form has lower variance.  The trajectory
    may have been generated under any policy; scores are evaluated at
    ``params``.
    """
    if len(traj) == 0:
        raise ValueError("cannot estimate a gradient from an empty trajectory")
    if estimator not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")
    h = len(traj)
    discounted = traj.gamma ** np.arange(h) * traj.rewards
    if estimator == "reinforce":
        weights = np.full(h, discounted.sum())
    else:
        weights = np.cumsum(discounted[::-1])[::-1]
    return policy.score_sum(params, traj.obs, traj.actions, weights)


def importance_weight(
    traj: Trajectory, params_new: PolicyParams, params_old: PolicyParams
) -> float:
    """Trajectory likelihood ratio ``p(tau | params_old) / p(tau | params_new)``.

    Meant for trajectories drawn under ``params_new``; it reweights a
    gradient evaluated at ``params_old`` onto the current sampling
    distribution.  The log ratio is accumulated in log space and clamped to
    ``+-LOG_WEIGHT_CLAMP`` before exponentiation.
    """
    weight, _ = _importance_weight_info(traj, params_new, params_old)
    return weight


def _importance_weight_info(
    traj: Trajectory, params_new: PolicyParams, params_old: PolicyParams
) -> tuple[float, bool]:
    if type(params_new.spec) is not type(params_old.spec):
        raise ValueError("importance weight needs two policies of the same family")
    logp_old = policy.log_prob_batch(params_old, traj.obs, traj.actions)
    logp_new = policy.log_prob_batch(params_new, traj.obs, traj.actions)
    if np.any(np.isneginf(logp_new)):
        raise ValueError("trajectory impossible under the sampling policy")
    if np.any(np.isneginf(logp_old)):
        warnings.warn(
            "action has zero probability under the reweighting target; weight set to 0",
            NumericsWarning,
        )
        return 0.0, False
    log_ratio = float(np.sum(logp_old) - np.sum(logp_new))
    if abs(log_ratio) > LOG_WEIGHT_CLAMP:
        warnings.warn(
            f"importance log-ratio {log_ratio:.2f} clamped to +-{LOG_WEIGHT_CLAMP}",
            NumericsWarning,
        )
        return float(np.exp(np.clip(log_ratio, -LOG_WEIGHT_CLAMP, LOG_WEIGHT_CLAMP))), True
    return float(np.exp(log_ratio)), False


def surrogate_update(
    s: Surrogate,
    traj_k: Trajectory,
    params_k: PolicyParams,
    beta: float,
    estimator: str = "pgt",
) -> Surrogate:
    """One recursion of the momentum surrogate.

    ``u <- beta * g_new + (1 - beta) * (u + g_new - w * g_old)`` where
    ``g_new``/``g_old`` are gradient estimates on the new trajectory at the
    current/previous parameters and ``w`` the importance weight between
    them.  ``traj_k`` must have been sampled under ``params_k``.  At
    ``beta == 1`` the history is ignored entirely and no importance weight
    is computed.
    """
    if not (0.0 < beta <= 1.0):
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    g_new = pg_estimate(traj_k, params_k, estimator)
    if beta == 1.0:
        return Surrogate(
            u=g_new, u_prev=s.u, params_prev=params_k, clamp_events=s.clamp_events
        )
    weight, clamped = _importance_weight_info(traj_k, params_k, s.params_prev)
    g_old = pg_estimate(traj_k, s.params_prev, estimator)
    correction = weight * g_old
    if weight > WEIGHT_FAULT_LIMIT or not np.all(np.isfinite(correction)):
        raise RuntimeError(
            f"importance-weighted gradient blew up (weight={weight:.3e}, "
            f"param gap={np.linalg.norm(params_k.theta - s.params_prev.theta):.3e})"
        )
    u = beta * g_new + (1.0 - beta) * (s.u + g_new - correction)
    return Surrogate(
        u=u,
        u_prev=s.u,
        params_prev=params_k,
        clamp_events=s.clamp_events + int(clamped),
    )


def surrogate_from_batch(
    params: PolicyParams, trajs: Sequence[Trajectory], estimator: str = "pgt"
) -> Surrogate:
    """Fresh surrogate whose estimate averages the batch gradients; the
    previous-estimate slot starts at zero."""
    if len(trajs) < 1:
        raise ValueError("need at least one trajectory")
    u = np.mean([pg_estimate(t, params, estimator) for t in trajs], axis=0)
    return Surrogate(u=u, u_prev=np.zeros_like(u), params_prev=params)


def init_surrogate(
    params_0: PolicyParams,
    cfg: EnvConfig,
    batch: int,
    rng: np.random.Generator,
    estimator: str = "pgt",
) -> list[Surrogate]:
    """Starting surrogates from ``batch`` joint rollouts.

    Every agent runs the shared initial policy ``params_0`` (decentralized
    training starts all agents from one vector), and each builds its
    estimate from its own view of the same rollouts.  Returns one surrogate
    per agent; ``batch == 1`` is the single-trajectory variant.
    """
    if batch < 1:
        raise ValueError("batch must be at least 1")
    policies = [params_0] * cfg.n_agents
    streams = rng.spawn(batch)
    batches = [envsim.sample_trajectory(cfg, policies, st) for st in streams]
    return [
        surrogate_from_batch(params_0, [b[i] for b in batches], estimator)
        for i in range(cfg.n_agents)
    ]
