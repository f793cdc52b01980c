"""Parameterized stochastic policies with analytic score functions.

Two families are provided:

* ``linear_gaussian`` -- a scalar action drawn from a normal distribution
  whose mean is linear in a bounded feature map of the state, with fixed
  standard deviation ``xi``.  Sampled actions are clipped to
  ``[-action_clip, +action_clip]``; densities and scores always use the
  unclipped normal, so the analytic forms stay exact and a small estimator
  bias at the clip boundary is accepted.
* ``mlp_categorical`` -- a discrete action from the softmax output of a
  three-layer dense network with tanh hidden activations.  Gradients are
  explicit layer-by-layer reverse-mode rules, so no autodiff framework is
  involved.

All parameters live in one flat float64 vector so the decentralized
optimizers can gossip them as plain arrays.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np

__all__ = [
    "LinearGaussianSpec",
    "MlpCategoricalSpec",
    "PolicyParams",
    "PolicyWarning",
    "init_params",
    "param_dim",
    "sample_action",
    "log_prob",
    "log_prob_batch",
    "score",
    "score_sum",
    "score_bounds",
    "save_params",
    "load_params",
]


class PolicyWarning(UserWarning):
    """Raised-as-warning numeric edge cases (zero-probability actions)."""


@dataclass(frozen=True)
class LinearGaussianSpec:
    """Scalar-action Gaussian policy: ``a ~ N(theta . phi(s), xi^2)``.

    ``feature_map`` defaults to the identity on the observation vector,
    norm-clipped to ``feature_clip`` so that ``||phi(s)|| <= feature_clip``
    always holds.  A custom map may be supplied; its output is clipped the
    same way.
    """

    feature_dim: int
    xi: float = 1.0
    feature_clip: float = 1.0
    action_clip: float = 1.0
    feature_map: Callable[[np.ndarray], np.ndarray] | None = field(
        default=None, compare=False
    )

    def __post_init__(self) -> None:
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if self.xi <= 0 or self.feature_clip <= 0 or self.action_clip <= 0:
            raise ValueError("xi, feature_clip and action_clip must all be positive")


@dataclass(frozen=True)
class MlpCategoricalSpec:
    """Discrete-action policy: three dense layers, tanh hidden, softmax out."""

    obs_dim: int
    n_actions: int
    hidden: tuple[int, int] = (64, 64)

    def __post_init__(self) -> None:
        if self.obs_dim < 1 or self.n_actions < 2:
            raise ValueError("need obs_dim >= 1 and n_actions >= 2")
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ValueError("hidden must give two positive layer widths")

    @property
    def layer_dims(self) -> tuple[int, int, int, int]:
        return (self.obs_dim, self.hidden[0], self.hidden[1], self.n_actions)


PolicySpec = Union[LinearGaussianSpec, MlpCategoricalSpec]


@dataclass
class PolicyParams:
    """Flat parameter vector bound to its family spec."""

    theta: np.ndarray
    spec: PolicySpec

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=float).ravel()
        expected = param_dim(self.spec)
        if theta.shape[0] != expected:
            raise ValueError(
                f"theta has dimension {theta.shape[0]}, {self.family} spec needs {expected}"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("policy parameters must be finite")
        self.theta = theta

    @property
    def family(self) -> str:
        if isinstance(self.spec, LinearGaussianSpec):
            return "linear_gaussian"
        return "mlp_categorical"


def param_dim(spec: PolicySpec) -> int:
    if isinstance(spec, LinearGaussianSpec):
        return spec.feature_dim
    d0, d1, d2, d3 = spec.layer_dims
    return d0 * d1 + d1 + d1 * d2 + d2 + d2 * d3 + d3


def init_params(spec: PolicySpec, rng: np.random.Generator) -> PolicyParams:
    """Initial parameters: zeros for the Gaussian family, per-layer
    ``uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))`` weights with zero biases
    for the MLP.  All agents are expected to start from one shared draw."""
    if isinstance(spec, LinearGaussianSpec):
        return PolicyParams(np.zeros(spec.feature_dim), spec)
    d0, d1, d2, d3 = spec.layer_dims
    chunks = []
    for fan_in, fan_out in ((d0, d1), (d1, d2), (d2, d3)):
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return PolicyParams(np.concatenate(chunks), spec)


# ---------------------------------------------------------------------------
# linear-Gaussian internals


def _features(spec: LinearGaussianSpec, obs: np.ndarray) -> np.ndarray:
    """Feature rows for a batch of observations, norm-clipped per row."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    if spec.feature_map is None:
        phi = obs
    else:
        phi = np.stack([np.asarray(spec.feature_map(row), dtype=float) for row in obs])
    if phi.shape[1] != spec.feature_dim:
        raise ValueError(
            f"feature dimension {phi.shape[1]} does not match spec {spec.feature_dim}"
        )
    norms = np.linalg.norm(phi, axis=1)
    scale = np.where(norms > spec.feature_clip, spec.feature_clip / np.maximum(norms, 1e-300), 1.0)
    return phi * scale[:, None]


def _gaussian_log_prob(params: PolicyParams, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    spec = params.spec
    phi = _features(spec, obs)
    mu = phi @ params.theta
    a = np.asarray(actions, dtype=float).ravel()
    with np.errstate(over="ignore"):  # a huge residual legitimately gives -inf
        return -0.5 * np.log(2.0 * np.pi) - np.log(spec.xi) - (a - mu) ** 2 / (2.0 * spec.xi**2)


# ---------------------------------------------------------------------------
# MLP internals


def _unpack(spec: MlpCategoricalSpec, theta: np.ndarray):
    d0, d1, d2, d3 = spec.layer_dims
    i = 0
    w1 = theta[i : i + d0 * d1].reshape(d0, d1); i += d0 * d1
    b1 = theta[i : i + d1]; i += d1
    w2 = theta[i : i + d1 * d2].reshape(d1, d2); i += d1 * d2
    b2 = theta[i : i + d2]; i += d2
    w3 = theta[i : i + d2 * d3].reshape(d2, d3); i += d2 * d3
    b3 = theta[i : i + d3]
    return w1, b1, w2, b2, w3, b3


def _mlp_forward(params: PolicyParams, obs: np.ndarray):
    """Log action probabilities for a batch of observations, with the
    intermediate activations needed for the backward pass."""
    spec = params.spec
    x = np.atleast_2d(np.asarray(obs, dtype=float))
    if x.shape[1] != spec.obs_dim:
        raise ValueError(f"observation dimension {x.shape[1]} != spec {spec.obs_dim}")
    w1, b1, w2, b2, w3, b3 = _unpack(spec, params.theta)
    h1 = np.tanh(x @ w1 + b1)
    h2 = np.tanh(h1 @ w2 + b2)
    z = h2 @ w3 + b3
    z_shift = z - z.max(axis=1, keepdims=True)
    log_probs = z_shift - np.log(np.exp(z_shift).sum(axis=1, keepdims=True))
    return log_probs, (x, h1, h2)


def _mlp_score_sum(
    params: PolicyParams, obs: np.ndarray, actions: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Reverse-mode gradient of ``sum_t weights[t] * log pi(a_t | s_t)``."""
    spec = params.spec
    log_probs, (x, h1, h2) = _mlp_forward(params, obs)
    probs = np.exp(log_probs)
    t = x.shape[0]
    acts = np.asarray(actions, dtype=int).ravel()
    dz = -probs * weights[:, None]
    dz[np.arange(t), acts] += weights
    _, _, w2, _, w3, _ = _unpack(spec, params.theta)
    dw3 = h2.T @ dz
    db3 = dz.sum(axis=0)
    dh2 = (dz @ w3.T) * (1.0 - h2**2)
    dw2 = h1.T @ dh2
    db2 = dh2.sum(axis=0)
    dh1 = (dh2 @ w2.T) * (1.0 - h1**2)
    dw1 = x.T @ dh1
    db1 = dh1.sum(axis=0)
    return np.concatenate(
        [dw1.ravel(), db1, dw2.ravel(), db2, dw3.ravel(), db3]
    )


# ---------------------------------------------------------------------------
# public operations


def sample_action(params: PolicyParams, state: np.ndarray, rng: np.random.Generator):
    """Draw one action for ``state``.

    Gaussian family: the raw draw is clipped to the action bound.
    Categorical family: an integer index from the softmax distribution.
    """
    action, _ = sample_with_log_prob(params, state, rng)
    return action


def sample_with_log_prob(params: PolicyParams, state: np.ndarray, rng: np.random.Generator):
    """Sample an action and the log-density realised for it in one pass."""
    if not np.all(np.isfinite(params.theta)):
        raise ValueError("policy parameters must be finite")
    if isinstance(params.spec, LinearGaussianSpec):
        spec = params.spec
        phi = _features(spec, state)[0]
        mu = float(phi @ params.theta)
        raw = mu + spec.xi * rng.standard_normal()
        action = float(np.clip(raw, -spec.action_clip, spec.action_clip))
        logp = float(
            -0.5 * np.log(2.0 * np.pi) - np.log(spec.xi) - (action - mu) ** 2 / (2.0 * spec.xi**2)
        )
        return action, logp
    log_probs, _ = _mlp_forward(params, state)
    action = int(rng.choice(params.spec.n_actions, p=np.exp(log_probs[0])))
    return action, float(log_probs[0, action])


def log_prob(params: PolicyParams, state: np.ndarray, action) -> float:
    """Log density (Gaussian) or log probability (categorical) of ``action``."""
    value = float(log_prob_batch(params, np.atleast_2d(state), np.atleast_1d(action))[0])
    if value == -np.inf:
        warnings.warn("action has zero probability under this policy", PolicyWarning)
    return value


def log_prob_batch(params: PolicyParams, obs: np.ndarray, actions) -> np.ndarray:
    """Vectorized ``log_prob`` over the rows of ``obs``."""
    if isinstance(params.spec, LinearGaussianSpec):
        return _gaussian_log_prob(params, obs, actions)
    acts = np.asarray(actions, dtype=int).ravel()
    if acts.min(initial=0) < 0 or acts.max(initial=0) >= params.spec.n_actions:
        raise ValueError("action index out of range")
    log_probs, _ = _mlp_forward(params, obs)
    return log_probs[np.arange(log_probs.shape[0]), acts]


def score(params: PolicyParams, state: np.ndarray, action) -> np.ndarray:
    """Gradient of the log density with respect to the flat parameters."""
    return score_sum(
        params, np.atleast_2d(state), np.atleast_1d(action), np.ones(1)
    )


def score_sum(
    params: PolicyParams, obs: np.ndarray, actions, weights: np.ndarray
) -> np.ndarray:
    """``sum_t weights[t] * d/dtheta log pi(actions[t] | obs[t])``.

    One fused backward pass; this is the workhorse behind every policy
    gradient estimate.
    """
    weights = np.asarray(weights, dtype=float).ravel()
    if isinstance(params.spec, LinearGaussianSpec):
        spec = params.spec
        phi = _features(spec, obs)
        mu = phi @ params.theta
        a = np.asarray(actions, dtype=float).ravel()
        coef = weights * (a - mu) / spec.xi**2
        return phi.T @ coef
    return _mlp_score_sum(params, obs, actions, weights)


def score_bounds(spec: LinearGaussianSpec, x_max: float) -> tuple[float, float]:
    """Uniform bounds on the score norm and log-density Hessian norm.

    Valid whenever ``||theta|| <= x_max`` and actions are clipped:
    ``c_g = (action_clip + feature_clip * x_max) * feature_clip / xi^2`` and
    ``c_h = feature_clip^2 / xi^2``.
    """
    if x_max < 0:
        raise ValueError("x_max must be nonnegative")
    c_h = spec.feature_clip**2 / spec.xi**2
    c_g = (spec.action_clip + spec.feature_clip * x_max) * spec.feature_clip / spec.xi**2
    return c_g, c_h


# ---------------------------------------------------------------------------
# checkpoint format: JSON object with a flat parameter array


def save_params(params: PolicyParams, path: str | Path) -> None:
    if isinstance(params.spec, LinearGaussianSpec):
        if params.spec.feature_map is not None:
            raise ValueError("cannot serialize a policy with a custom feature map")
        spec_doc = {
            "feature_dim": params.spec.feature_dim,
            "xi": params.spec.xi,
            "feature_clip": params.spec.feature_clip,
            "action_clip": params.spec.action_clip,
        }
    else:
        spec_doc = {
            "obs_dim": params.spec.obs_dim,
            "n_actions": params.spec.n_actions,
            "hidden": list(params.spec.hidden),
        }
    doc = {"family": params.family, "spec": spec_doc, "theta": params.theta.tolist()}
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_params(path: str | Path) -> PolicyParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    spec_doc = doc["spec"]
    spec: PolicySpec
    if doc["family"] == "linear_gaussian":
        spec = LinearGaussianSpec(
            feature_dim=int(spec_doc["feature_dim"]),
            xi=float(spec_doc["xi"]),
            feature_clip=float(spec_doc["feature_clip"]),
            action_clip=float(spec_doc["action_clip"]),
        )
    elif doc["family"] == "mlp_categorical":
        spec = MlpCategoricalSpec(
            obs_dim=int(spec_doc["obs_dim"]),
            n_actions=int(spec_doc["n_actions"]),
            hidden=tuple(int(h) for h in spec_doc["hidden"]),
        )
    else:
        raise ValueError(f"unknown policy family {doc['family']!r}")
    return PolicyParams(np.asarray(doc["theta"], dtype=float), spec)
