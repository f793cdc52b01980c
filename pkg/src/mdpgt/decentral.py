"""Decentralized training loops: DPG, MDPG and MDPGT.

All three share the same skeleton per iteration: every agent samples one
trajectory under its current parameters, forms a local gradient estimate,
and the swarm then gossips through the mixing matrix.  They differ in the
estimate and in what gets tracked:

* ``dpg``   -- plain stochastic policy gradient, gossip on parameters only.
* ``mdpg``  -- momentum surrogate with importance sampling, gossip on
  parameters only.
* ``mdpgt`` -- momentum surrogate plus a tracker ``v`` that gossips the
  running difference of consecutive surrogates; the mean tracker always
  equals the previous mean surrogate, which is checked per iteration as
  the tracking residual.

The objective is maximized, so parameter updates move along ``+eta`` times
the chosen direction.

Randomness is counter-based: every consumer derives its stream from the
root seed and a purpose/iteration key, so runs are reproducible and
independent of execution order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import envsim, gradient, policy
from .envsim import EnvConfig
from .gradient import Surrogate
from .policy import PolicyParams, PolicySpec
from .topology import MixingMatrix

__all__ = [
    "LoopConfig",
    "AgentState",
    "SwarmState",
    "RunRecord",
    "RunResult",
    "ALGORITHMS",
    "derive_rng",
    "param_stream",
    "init_stream",
    "rollout_stream",
    "pick_stream",
    "mdpgt_init",
    "mdpgt_step",
    "mdpg_step",
    "dpg_step",
    "run",
]

ALGORITHMS = ("dpg", "mdpg", "mdpgt")
DIVERGENCE_NORM = 1e6

_PURPOSE_PARAMS = 0
_PURPOSE_INIT = 1
_PURPOSE_ROLLOUT = 2
_PURPOSE_PICK = 3


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for (seed, key...) via seed-sequence spawn keys."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def param_stream(seed: int) -> np.random.Generator:
    """Stream for the shared initial parameter draw."""
    return derive_rng(seed, _PURPOSE_PARAMS)


def init_stream(seed: int) -> np.random.Generator:
    """Stream for the initialization rollouts (spawned per batch element)."""
    return derive_rng(seed, _PURPOSE_INIT)


def rollout_stream(seed: int, k: int) -> np.random.Generator:
    """Stream for the joint rollout of iteration ``k``."""
    return derive_rng(seed, _PURPOSE_ROLLOUT, k)


def pick_stream(seed: int) -> np.random.Generator:
    """Stream for the uniform (agent, iteration) output draw."""
    return derive_rng(seed, _PURPOSE_PICK)


@dataclass(frozen=True)
class LoopConfig:
    """Everything a training loop needs besides the algorithm name."""

    env: EnvConfig
    policy: PolicySpec
    mixing: MixingMatrix
    eta: float
    beta: float = 0.5
    batch_init: int = 1
    estimator: str = "pgt"

    def __post_init__(self) -> None:
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not (0.0 < self.beta <= 1.0):
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.batch_init < 1:
            raise ValueError("batch_init must be at least 1")
        if self.estimator not in gradient.ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.mixing.n_agents != self.env.n_agents:
            raise ValueError(
                f"mixing matrix is {self.mixing.n_agents}x{self.mixing.n_agents} "
                f"but the env has {self.env.n_agents} agents"
            )


@dataclass
class AgentState:
    params: PolicyParams
    surrogate: Surrogate
    tracker: np.ndarray | None = None


@dataclass
class SwarmState:
    """All agents plus the iteration counter.

    ``last_rewards`` carries the per-agent undiscounted episode rewards of
    the most recent sampling pass so the run loop can record them.
    """

    agents: list[AgentState]
    k: int
    mixing: MixingMatrix
    last_rewards: np.ndarray | None = field(default=None, compare=False)

    def params_matrix(self) -> np.ndarray:
        return np.stack([a.params.theta for a in self.agents])

    def surrogate_matrix(self) -> np.ndarray:
        return np.stack([a.surrogate.u for a in self.agents])

    def tracker_matrix(self) -> np.ndarray | None:
        if self.agents[0].tracker is None:
            return None
        return np.stack([a.tracker for a in self.agents])

    def clamp_total(self) -> int:
        return sum(a.surrogate.clamp_events for a in self.agents)


@dataclass
class RunRecord:
    """Per-iteration diagnostics.

    ``consensus_err`` is the squared deviation of the parameter stack from
    its agent-mean; ``tracking_resid`` the norm of (mean tracker - mean
    surrogate), zero for trackerless algorithms; ``clamps`` the number of
    importance-weight clamp events this iteration across the swarm.
    """

    k: int
    rewards: np.ndarray
    mean_reward: float
    consensus_err: float
    tracking_resid: float
    u_norm: float
    clamps: int


@dataclass
class RunResult:
    records: list[RunRecord]
    final: SwarmState
    x_tilde: np.ndarray
    x_tilde_pick: tuple[int, int]  # (iteration, agent)
    failure: str | None = None


def _consensus_error(x: np.ndarray) -> float:
    dev = x - x.mean(axis=0, keepdims=True)
    return float(np.sum(dev * dev))


def _tracking_residual(state: SwarmState) -> float:
    v = state.tracker_matrix()
    if v is None:
        return 0.0
    return float(np.linalg.norm(v.mean(axis=0) - state.surrogate_matrix().mean(axis=0)))


def _init_swarm(
    policies: Sequence[PolicyParams],
    w: MixingMatrix,
    cfg: LoopConfig,
    batch: int,
    rng: np.random.Generator,
    with_tracker: bool,
) -> tuple[SwarmState, np.ndarray]:
    n = cfg.env.n_agents
    if len(policies) != n:
        raise ValueError(f"need {n} policies, got {len(policies)}")
    if w.n_agents != n:
        raise ValueError(f"mixing matrix size {w.n_agents} != agent count {n}")
    theta0 = policies[0].theta
    for p in policies[1:]:
        if not np.array_equal(p.theta, theta0):
            raise ValueError("all agents must start from the identical parameter vector")
    streams = rng.spawn(batch)
    batches = [envsim.sample_trajectory(cfg.env, list(policies), st) for st in streams]
    surrogates = [
        gradient.surrogate_from_batch(policies[i], [b[i] for b in batches], cfg.estimator)
        for i in range(n)
    ]
    u0 = np.stack([s.u for s in surrogates])
    # tracker and previous surrogate start at zero, so the first tracker is
    # the initial surrogate itself
    v1 = u0.copy()
    x0 = np.stack([p.theta for p in policies])
    x1 = w.weights @ (x0 + cfg.eta * v1)
    spec = policies[0].spec
    agents = [
        AgentState(
            params=PolicyParams(x1[i], spec),
            surrogate=surrogates[i],
            tracker=v1[i] if with_tracker else None,
        )
        for i in range(n)
    ]
    init_rewards = np.mean([[t.rewards.sum() for t in b] for b in batches], axis=0)
    return SwarmState(agents=agents, k=1, mixing=w), init_rewards


def mdpgt_init(
    policies: Sequence[PolicyParams],
    w: MixingMatrix,
    cfg: LoopConfig,
    batch: int,
    rng: np.random.Generator,
) -> SwarmState:
    """Initialize surrogates from ``batch`` rollouts, seed the tracker with
    them, and take the first gossip step on the parameters."""
    state, _ = _init_swarm(policies, w, cfg, batch, rng, with_tracker=True)
    return state


def _sample_and_update(
    s: SwarmState, cfg: LoopConfig, rng: np.random.Generator, beta: float | None
) -> tuple[list[Surrogate], np.ndarray]:
    """Shared sampling pass: one joint rollout, then per-agent surrogates.

    ``beta = None`` means the plain gradient without surrogate history."""
    policies = [a.params for a in s.agents]
    trajs = envsim.sample_trajectory(cfg.env, policies, rng)
    new_surrogates = []
    for i, agent in enumerate(s.agents):
        if beta is None:
            new_surrogates.append(
                Surrogate(
                    u=gradient.pg_estimate(trajs[i], agent.params, cfg.estimator),
                    u_prev=agent.surrogate.u,
                    params_prev=agent.params,
                    clamp_events=agent.surrogate.clamp_events,
                )
            )
        else:
            new_surrogates.append(
                gradient.surrogate_update(
                    agent.surrogate, trajs[i], agent.params, beta, cfg.estimator
                )
            )
    rewards = np.array([t.rewards.sum() for t in trajs])
    return new_surrogates, rewards


def mdpgt_step(s: SwarmState, cfg: LoopConfig, rng: np.random.Generator) -> SwarmState:
    """Momentum surrogate, tracker gossip, then parameter gossip."""
    if s.k < 1:
        raise ValueError("step requires an initialized swarm (k >= 1)")
    if s.agents[0].tracker is None:
        raise ValueError("mdpgt_step needs tracker state; initialize with mdpgt_init")
    u_old = s.surrogate_matrix()
    new_surrogates, rewards = _sample_and_update(s, cfg, rng, cfg.beta)
    u_new = np.stack([surr.u for surr in new_surrogates])
    v_new = s.mixing.weights @ s.tracker_matrix() + u_new - u_old
    x_new = s.mixing.weights @ (s.params_matrix() + cfg.eta * v_new)
    spec = s.agents[0].params.spec
    agents = [
        AgentState(PolicyParams(x_new[i], spec), new_surrogates[i], v_new[i])
        for i in range(len(s.agents))
    ]
    return SwarmState(agents, s.k + 1, s.mixing, last_rewards=rewards)


def mdpg_step(s: SwarmState, cfg: LoopConfig, rng: np.random.Generator) -> SwarmState:
    """Momentum surrogate gossiped directly into the parameters."""
    if s.k < 1:
        raise ValueError("step requires an initialized swarm (k >= 1)")
    new_surrogates, rewards = _sample_and_update(s, cfg, rng, cfg.beta)
    u_new = np.stack([surr.u for surr in new_surrogates])
    x_new = s.mixing.weights @ (s.params_matrix() + cfg.eta * u_new)
    spec = s.agents[0].params.spec
    agents = [
        AgentState(PolicyParams(x_new[i], spec), new_surrogates[i], None)
        for i in range(len(s.agents))
    ]
    return SwarmState(agents, s.k + 1, s.mixing, last_rewards=rewards)


def dpg_step(s: SwarmState, cfg: LoopConfig, rng: np.random.Generator) -> SwarmState:
    """Vanilla stochastic gradient with gossip; no momentum, no tracker."""
    if s.k < 1:
        raise ValueError("step requires an initialized swarm (k >= 1)")
    new_surrogates, rewards = _sample_and_update(s, cfg, rng, None)
    u_new = np.stack([surr.u for surr in new_surrogates])
    x_new = s.mixing.weights @ (s.params_matrix() + cfg.eta * u_new)
    spec = s.agents[0].params.spec
    agents = [
        AgentState(PolicyParams(x_new[i], spec), new_surrogates[i], None)
        for i in range(len(s.agents))
    ]
    return SwarmState(agents, s.k + 1, s.mixing, last_rewards=rewards)


_STEPS = {"dpg": dpg_step, "mdpg": mdpg_step, "mdpgt": mdpgt_step}


class _Reservoir:
    """Uniform pick over a stream of (iteration, agent, vector) candidates."""

    def __init__(self, rng: np.random.Generator) -> None:
        self._rng = rng
        self._count = 0
        self.vector: np.ndarray | None = None
        self.pick: tuple[int, int] = (-1, -1)

    def feed(self, k: int, agents: Sequence[AgentState]) -> None:
        for i, agent in enumerate(agents):
            self._count += 1
            if self._rng.random() < 1.0 / self._count:
                self.vector = agent.params.theta.copy()
                self.pick = (k, i)


def _diverged(state: SwarmState) -> str | None:
    x = state.params_matrix()
    if not np.all(np.isfinite(x)):
        return "non-finite parameter"
    norms = np.linalg.norm(x, axis=1)
    if norms.max() > DIVERGENCE_NORM:
        return f"parameter norm {norms.max():.3e} exceeded {DIVERGENCE_NORM:.0e}"
    u = state.surrogate_matrix()
    if not np.all(np.isfinite(u)):
        return "non-finite surrogate"
    v = state.tracker_matrix()
    if v is not None and not np.all(np.isfinite(v)):
        return "non-finite tracker"
    return None


def run(algo: str, cfg: LoopConfig, episodes: int, seed: int) -> RunResult:
    """Train for ``episodes`` sampling iterations from one root seed.

    Iteration 0 is the initialization pass (``batch_init`` rollouts);
    iterations 1..episodes-1 are algorithm steps, so the record stream has
    exactly ``episodes`` entries when the run completes.  Beyond the last
    iterate, the result carries a uniformly drawn (iteration, agent)
    parameter vector.  A divergence guard aborts the run with a partial
    stream and a failure note instead of emitting non-finite records.
    """
    if algo not in ALGORITHMS:
        raise ValueError(f"algo must be one of {ALGORITHMS}, got {algo!r}")
    if episodes < 2:
        raise ValueError("need at least 2 episodes")
    theta0 = policy.init_params(cfg.policy, param_stream(seed))
    policies = [PolicyParams(theta0.theta.copy(), cfg.policy) for _ in range(cfg.env.n_agents)]
    state, init_rewards = _init_swarm(
        policies,
        cfg.mixing,
        cfg,
        cfg.batch_init,
        init_stream(seed),
        with_tracker=(algo == "mdpgt"),
    )
    reservoir = _Reservoir(pick_stream(seed))
    reservoir.feed(1, state.agents)
    records = [
        RunRecord(
            k=0,
            rewards=init_rewards,
            mean_reward=float(init_rewards.mean()),
            consensus_err=0.0,
            tracking_resid=_tracking_residual(state),
            u_norm=float(np.linalg.norm(state.surrogate_matrix().mean(axis=0))),
            clamps=0,
        )
    ]
    step_fn = _STEPS[algo]
    failure = None
    prev_clamps = state.clamp_total()
    for k in range(1, episodes):
        consensus = _consensus_error(state.params_matrix())
        try:
            state = step_fn(state, cfg, rollout_stream(seed, k))
        except (RuntimeError, FloatingPointError, ValueError) as exc:
            failure = f"iteration {k}: {exc}"
            break
        problem = _diverged(state)
        if problem is not None:
            failure = f"iteration {k}: {problem}"
            break
        clamps = state.clamp_total()
        records.append(
            RunRecord(
                k=k,
                rewards=state.last_rewards,
                mean_reward=float(state.last_rewards.mean()),
                consensus_err=consensus,
                tracking_resid=_tracking_residual(state),
                u_norm=float(np.linalg.norm(state.surrogate_matrix().mean(axis=0))),
                clamps=clamps - prev_clamps,
            )
        )
        prev_clamps = clamps
        reservoir.feed(k + 1, state.agents)
    assert reservoir.vector is not None
    return RunResult(
        records=records,
        final=state,
        x_tilde=reservoir.vector,
        x_tilde_pick=reservoir.pick,
        failure=failure,
    )
