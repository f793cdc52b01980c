"""Multi-agent cooperative navigation environments and trajectory sampling.

Two discrete worlds are provided:

* ``lineworld`` -- integer 1-D coordinates in ``[-world_size, world_size]``.
  Every agent tries to reach coordinate 0, may move down/stay/up, and may
  never share a cell with another agent: contested moves are refused for
  the later-indexed agent, which is the one charged the collision penalty.
* ``gridworld`` -- integer 2-D coordinates on a ``world_size x world_size``
  board.  Each agent has its own goal cell drawn at reset, moves
  up/down/left/right (clamped at the walls), overlaps are allowed, and any
  agent sharing a cell with another after the move is charged the penalty.

Per-step reward is the negative Euclidean distance to the agent's goal
plus the collision penalty when applicable.  Observations are the
normalized positions of all agents with the observer's own position first,
so every agent sees the same global state up to ordering.  Velocities are
omitted: with unit steps they are redundant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .policy import PolicyParams, sample_with_log_prob

__all__ = [
    "EnvConfig",
    "EnvState",
    "Trajectory",
    "reset",
    "step",
    "observe",
    "sample_trajectory",
    "obs_dim",
    "n_actions",
    "reward_bound",
]

_LINE_MOVES = (-1, 0, 1)
_GRID_MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0))  # up, down, left, right


@dataclass(frozen=True)
class EnvConfig:
    """Environment settings.

    ``world_size`` means the half-width for lineworld (cells
    ``-world_size..world_size``) and the side length for gridworld.
    ``reward_scale`` multiplies every reward; 0 turns the task reward-free,
    which is useful for isolating the gossip dynamics.
    """

    env: str = "lineworld"
    n_agents: int = 5
    world_size: int = 5
    horizon: int = 50
    gamma: float = 0.99
    collision_penalty: float = -1.0
    reward_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.env not in ("lineworld", "gridworld"):
            raise ValueError(f"unknown env {self.env!r}")
        if self.n_agents < 1:
            raise ValueError("n_agents must be positive")
        if self.world_size < 1:
            raise ValueError("world_size must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")


@dataclass
class EnvState:
    """Agent positions, their goals, and the step counter."""

    positions: np.ndarray  # (N,) for lineworld, (N, 2) for gridworld
    goals: np.ndarray
    t: int = 0


@dataclass
class Trajectory:
    """One agent's view of an episode.

    ``log_probs`` are the log densities realised at sampling time, kept for
    importance-weight reuse.  ``ret`` is the discounted return
    ``sum_h gamma^h * rewards[h]``.
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    log_probs: np.ndarray
    gamma: float
    ret: float

    def __len__(self) -> int:
        return self.rewards.shape[0]


def obs_dim(cfg: EnvConfig) -> int:
    return cfg.n_agents if cfg.env == "lineworld" else 2 * cfg.n_agents


def n_actions(cfg: EnvConfig) -> int:
    return 3 if cfg.env == "lineworld" else 4


def reward_bound(cfg: EnvConfig) -> float:
    """Smallest R with ``|reward| <= R``: world diameter plus the penalty."""
    if cfg.env == "lineworld":
        diameter = float(cfg.world_size)
    else:
        diameter = float(np.sqrt(2.0) * (cfg.world_size - 1))
    return abs(cfg.reward_scale) * (diameter + abs(cfg.collision_penalty))


def reset(cfg: EnvConfig, rng: np.random.Generator) -> EnvState:
    """Place agents on distinct random cells and fix this episode's goals.

    Lineworld goals are always coordinate 0; gridworld goals are drawn per
    agent from the same seeded stream.
    """
    n = cfg.n_agents
    if cfg.env == "lineworld":
        cells = np.arange(-cfg.world_size, cfg.world_size + 1)
        if n > cells.size:
            raise ValueError(f"cannot place {n} agents on {cells.size} distinct cells")
        positions = cells[rng.choice(cells.size, size=n, replace=False)]
        goals = np.zeros(n, dtype=np.int64)
    else:
        side = cfg.world_size
        if n > side * side:
            raise ValueError(f"cannot place {n} agents on {side * side} distinct cells")
        flat = rng.choice(side * side, size=n, replace=False)
        positions = np.stack([flat // side, flat % side], axis=1)
        goals = rng.integers(0, side, size=(n, 2))
    return EnvState(positions=positions.astype(np.int64), goals=goals.astype(np.int64), t=0)


def _line_move(action) -> int:
    if isinstance(action, (int, np.integer)):
        if not 0 <= int(action) < 3:
            raise ValueError(f"lineworld action index {action} out of range 0..2")
        return _LINE_MOVES[int(action)]
    a = float(action)
    if not np.isfinite(a):
        raise ValueError("continuous action must be finite")
    # |a| < 0.5 is read as "stay" (round half to even at the boundary)
    return int(np.round(np.clip(a, -1.0, 1.0)))


def step(
    cfg: EnvConfig, state: EnvState, joint_action: Sequence
) -> tuple[EnvState, np.ndarray]:
    """Advance one step under simultaneous moves; returns per-agent rewards."""
    n = cfg.n_agents
    if len(joint_action) != n:
        raise ValueError(f"expected {n} actions, got {len(joint_action)}")
    if cfg.env == "lineworld":
        pos = state.positions
        proposed = np.array(
            [
                int(np.clip(pos[i] + _line_move(joint_action[i]), -cfg.world_size, cfg.world_size))
                for i in range(n)
            ],
            dtype=np.int64,
        )
        final = pos.copy()
        collided = np.zeros(n, dtype=bool)
        for i in range(n):
            target = proposed[i]
            if target == pos[i]:
                continue
            blocked = any(final[j] == target for j in range(i)) or any(
                pos[j] == target for j in range(i + 1, n)
            )
            if blocked:
                collided[i] = True
            else:
                final[i] = target
        dist = np.abs(final - state.goals).astype(float)
    else:
        moves = np.zeros((n, 2), dtype=np.int64)
        for i, a in enumerate(joint_action):
            if not isinstance(a, (int, np.integer)):
                raise ValueError("gridworld takes discrete action indices")
            if not 0 <= int(a) < 4:
                raise ValueError(f"gridworld action index {a} out of range 0..3")
            moves[i] = _GRID_MOVES[int(a)]
        final = np.clip(state.positions + moves, 0, cfg.world_size - 1)
        collided = np.array(
            [any(np.array_equal(final[i], final[j]) for j in range(n) if j != i) for i in range(n)]
        )
        dist = np.linalg.norm((final - state.goals).astype(float), axis=1)
    rewards = cfg.reward_scale * (-dist + np.where(collided, cfg.collision_penalty, 0.0))
    return EnvState(positions=final, goals=state.goals, t=state.t + 1), rewards


def observe(cfg: EnvConfig, state: EnvState, agent: int) -> np.ndarray:
    """All agents' positions normalized to ``[-1, 1]``, observer first."""
    if not 0 <= agent < cfg.n_agents:
        raise ValueError(f"agent index {agent} out of range")
    order = [agent] + [i for i in range(cfg.n_agents) if i != agent]
    if cfg.env == "lineworld":
        return state.positions[order].astype(float) / cfg.world_size
    side = cfg.world_size
    coords = state.positions[order].astype(float)
    if side > 1:
        coords = 2.0 * coords / (side - 1) - 1.0
    else:
        coords = np.zeros_like(coords)
    return coords.ravel()


def sample_trajectory(
    cfg: EnvConfig, policies: Sequence[PolicyParams], rng: np.random.Generator
) -> list[Trajectory]:
    """Roll one joint episode and return each agent's trajectory view.

    All agents share the common state sequence; actions are sampled in
    agent order from the single stream ``rng``, so a fixed seed gives a
    bitwise-identical episode.
    """
    n = cfg.n_agents
    if len(policies) != n:
        raise ValueError(f"need one policy per agent, got {len(policies)} for {n}")
    state = reset(cfg, rng)
    h = cfg.horizon
    all_obs = [np.empty((h, obs_dim(cfg))) for _ in range(n)]
    categorical = [p.family == "mlp_categorical" for p in policies]
    all_actions = [
        np.empty(h, dtype=np.int64 if categorical[i] else float) for i in range(n)
    ]
    all_rewards = np.empty((h, n))
    all_logp = np.empty((h, n))
    for t in range(h):
        joint = []
        for i in range(n):
            ob = observe(cfg, state, i)
            action, logp = sample_with_log_prob(policies[i], ob, rng)
            all_obs[i][t] = ob
            all_actions[i][t] = action
            all_logp[t, i] = logp
            joint.append(action)
        state, rewards = step(cfg, state, joint)
        all_rewards[t] = rewards
    out = []
    for i in range(n):
        ret = 0.0
        for t in range(h):
            ret += cfg.gamma**t * all_rewards[t, i]
        out.append(
            Trajectory(
                obs=all_obs[i],
                actions=all_actions[i],
                rewards=all_rewards[:, i].copy(),
                log_probs=all_logp[:, i].copy(),
                gamma=cfg.gamma,
                ret=ret,
            )
        )
    return out
