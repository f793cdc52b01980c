"""Closed-form problem constants, step-size conditions and schedules.

Everything here is pure arithmetic on the bounds that characterize the
training problem: score bounds ``c_g``/``c_h``, reward bound ``r_max``,
discount, horizon, the importance-weight variance bound ``m_bound``, agent
count and the mixing-matrix contraction factor ``lam``.  From those the
smoothness constant, gradient bound, gradient variance and the
importance-weight sensitivity coefficient follow, and with them the
admissible step sizes, the momentum coefficient coupling, two
(step-size, momentum, batch) schedules, and the asymptotic error floor.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .policy import LinearGaussianSpec, score_bounds

__all__ = [
    "ProblemConstants",
    "DerivedConstants",
    "ScheduleResult",
    "ScheduleWarning",
    "derive_constants",
    "max_step_size",
    "beta_from_eta",
    "minibatch_schedule",
    "single_trajectory_schedule",
    "steady_state_error",
    "gaussian_constants",
    "gaussian_variance_bound",
]


class ScheduleWarning(UserWarning):
    """A hypothesis behind a schedule or condition is not met."""


@dataclass(frozen=True)
class ProblemConstants:
    """Raw bounds describing one training problem."""

    c_g: float  # score norm bound
    c_h: float  # log-density Hessian norm bound
    r_max: float  # reward magnitude bound
    gamma: float
    horizon: int
    m_bound: float  # importance-weight variance bound
    n_agents: int
    lam: float

    def __post_init__(self) -> None:
        if min(self.c_g, self.c_h, self.r_max) <= 0:
            raise ValueError("c_g, c_h and r_max must be positive")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")
        if self.horizon < 1 or self.n_agents < 1:
            raise ValueError("horizon and n_agents must be positive")
        if self.m_bound < 0:
            raise ValueError("m_bound must be nonnegative")
        if not (0.0 <= self.lam < 1.0):
            raise ValueError("lam must lie in [0, 1)")


@dataclass(frozen=True)
class DerivedConstants:
    """Constants derived from :class:`ProblemConstants`.

    ``smoothness = c_h r / (1-gamma)^2``; ``grad_bound = c_g r / (1-gamma)^2``;
    ``sigma_bar_sq = grad_bound^2`` (the single-trajectory gradient variance
    bound); ``c_upsilon = H (2 H c_g^2 + c_h)(m + 1)`` relates the
    importance-weight variance to the squared parameter gap; and
    ``d_comp = 96 smoothness^2 + 96 grad_bound^2 c_upsilon``.
    """

    smoothness: float  # L
    grad_bound: float  # G
    sigma_bar_sq: float
    c_upsilon: float
    d_comp: float


@dataclass(frozen=True)
class ScheduleResult:
    eta: float
    beta: float
    batch: int
    k_threshold: float
    k_ok: bool


def derive_constants(pc: ProblemConstants) -> DerivedConstants:
    one_minus = (1.0 - pc.gamma) ** 2
    smoothness = pc.c_h * pc.r_max / one_minus
    grad_bound = pc.c_g * pc.r_max / one_minus
    c_upsilon = pc.horizon * (2.0 * pc.horizon * pc.c_g**2 + pc.c_h) * (pc.m_bound + 1.0)
    d_comp = 96.0 * smoothness**2 + 96.0 * grad_bound**2 * c_upsilon
    return DerivedConstants(
        smoothness=smoothness,
        grad_bound=grad_bound,
        sigma_bar_sq=grad_bound**2,
        c_upsilon=c_upsilon,
        d_comp=d_comp,
    )


def _lg2(dc: DerivedConstants) -> float:
    return dc.smoothness**2 + dc.grad_bound**2 * dc.c_upsilon


def max_step_size(dc: DerivedConstants, lam: float, n_agents: int) -> float:
    """Largest admissible ``eta`` for the tracked momentum method.

    The minimum of three ceilings; the two involving ``lam`` degenerate at
    ``lam == 0`` (one diverges, one vanishes), in which case only the
    topology-free ceiling applies and a warning is emitted.
    """
    lg2 = _lg2(dc)
    term3 = 1.0 / (6.0 * math.sqrt(6.0 * lg2))
    if lam == 0.0:
        if n_agents > 1:
            warnings.warn(
                "lam = 0: dropping the degenerate topology-dependent step-size "
                "ceilings and returning the topology-free one",
                ScheduleWarning,
            )
        return term3
    term1 = (1.0 - lam**2) ** 2 / (
        lam * math.sqrt(12844.0 * dc.smoothness**2 + 9792.0 * dc.grad_bound**2 * dc.c_upsilon)
    )
    term2 = math.sqrt(n_agents * (1.0 - lam**2)) * lam / (31.0 * math.sqrt(lg2))
    return min(term1, term2, term3)


def beta_from_eta(dc: DerivedConstants, eta: float, n_agents: int) -> float:
    """Momentum coefficient coupled to the step size: ``d_comp eta^2 / n``.

    Values at or above 1 break the hypotheses of the convergence guarantee
    and are flagged, not rejected."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    beta = dc.d_comp * eta**2 / n_agents
    if beta >= 1.0:
        warnings.warn(
            f"beta = {beta:.4g} >= 1: momentum coupling leaves the admissible range",
            ScheduleWarning,
        )
    return beta


def _threshold_ok(k: int, k_threshold: float, label: str) -> bool:
    if k < k_threshold:
        warnings.warn(
            f"K = {k} is below the {label} threshold {k_threshold:.4g}; the "
            "non-asymptotic rate is not guaranteed",
            ScheduleWarning,
        )
        return False
    return True


def minibatch_schedule(
    dc: DerivedConstants, n_agents: int, k: int, lam: float
) -> ScheduleResult:
    """Step size, momentum and initialization batch for mini-batch starts.

    ``eta = n^(2/3) / (8 L k^(1/3))``, ``beta = d n^(1/3) / (64 L^2 k^(2/3))``
    and ``batch = ceil(k^(1/3) / n^(2/3))``.  The accompanying K-threshold
    is evaluated verbatim and only flagged: at ``lam == 0`` one of its terms
    diverges, which makes it vacuous for perfectly mixing topologies.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    l = dc.smoothness
    eta = n_agents ** (2.0 / 3.0) / (8.0 * l * k ** (1.0 / 3.0))
    beta = dc.d_comp * n_agents ** (1.0 / 3.0) / (64.0 * l**2 * k ** (2.0 / 3.0))
    batch = max(1, math.ceil(k ** (1.0 / 3.0) / n_agents ** (2.0 / 3.0)))
    lg2 = _lg2(dc)
    t1 = n_agents**2 * dc.d_comp**1.5 / (512.0 * l**3)
    if lam == 0.0:
        t2 = math.inf
        t3 = 0.0
    else:
        t2 = 29791.0 * math.sqrt(n_agents) * lg2**1.5 / (
            512.0 * l**3 * lam**3 * (1.0 - lam**2) ** 1.5
        )
        t3 = (
            (12844.0 * l**2 + 9792.0 * dc.grad_bound**2 * dc.c_upsilon) ** 1.5
            * n_agents**2
            * lam**3
            / (512.0 * l**3 * (1.0 - lam**2) ** 6)
        )
    k_threshold = max(t1, t2, t3)
    k_ok = _threshold_ok(k, k_threshold, "mini-batch schedule")
    return ScheduleResult(eta=eta, beta=beta, batch=batch, k_threshold=k_threshold, k_ok=k_ok)


def single_trajectory_schedule(
    dc: DerivedConstants, n_agents: int, k: int, lam: float
) -> ScheduleResult:
    """Step size and momentum for single-trajectory starts (batch fixed at 1).

    ``eta = n^(3/4) / (8 L k^(1/4))`` and ``beta = d n^(1/2) / (64 L^2 k^(1/2))``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    l = dc.smoothness
    eta = n_agents**0.75 / (8.0 * l * k**0.25)
    beta = dc.d_comp * math.sqrt(n_agents) / (64.0 * l**2 * math.sqrt(k))
    lg2 = _lg2(dc)
    t1 = n_agents**3 * dc.d_comp**2 / (4096.0 * l**4)
    if lam == 0.0:
        t2 = math.inf
        t3 = 0.0
    else:
        t2 = 923521.0 * n_agents * lg2**2 / (
            4096.0 * l**4 * (1.0 - lam**2) ** 2 * lam**4
        )
        t3 = (
            (12844.0 * l**2 + 9792.0 * dc.grad_bound**2 * dc.c_upsilon) ** 2
            * lam**4
            * n_agents**3
            / (4096.0 * l**4 * (1.0 - lam**2) ** 8)
        )
    k_threshold = max(t1, t2, t3)
    k_ok = _threshold_ok(k, k_threshold, "single-trajectory schedule")
    return ScheduleResult(eta=eta, beta=beta, batch=1, k_threshold=k_threshold, k_ok=k_ok)


def steady_state_error(
    dc: DerivedConstants, beta: float, lam: float, n_agents: int
) -> float:
    """Asymptotic floor on the expected squared gradient norm:
    ``8 beta sigma^2 / n + 204 lam^2 beta^2 sigma^2 / (1 - lam^2)^3``."""
    if not (0.0 <= lam < 1.0):
        raise ValueError("lam must lie in [0, 1)")
    first = 8.0 * beta * dc.sigma_bar_sq / n_agents
    second = 204.0 * lam**2 * beta**2 * dc.sigma_bar_sq / (1.0 - lam**2) ** 3
    return first + second


def gaussian_constants(
    spec: LinearGaussianSpec,
    x_max: float,
    r_max: float,
    gamma: float,
    horizon: int,
    m_bound: float,
    n_agents: int,
    lam: float,
) -> ProblemConstants:
    """Problem constants for the linear-Gaussian family, with the score
    bounds taken from the policy's closed forms under ``||theta|| <= x_max``."""
    c_g, c_h = score_bounds(spec, x_max)
    return ProblemConstants(
        c_g=c_g,
        c_h=c_h,
        r_max=r_max,
        gamma=gamma,
        horizon=horizon,
        m_bound=m_bound,
        n_agents=n_agents,
        lam=lam,
    )


def gaussian_variance_bound(
    spec: LinearGaussianSpec, r_max: float, gamma: float, horizon: int
) -> float:
    """Closed-form bound on the variance of the causal gradient estimator
    for a linear-Gaussian policy.

    Equals ``r^2 c_f^2 / ((1-gamma)^2 xi^2)`` times
    ``sum_{h<H} gamma^(2h) (1 - gamma^(H-h))^2``, written in closed form.
    Useful as a diagnostic ceiling for the empirical estimator variance.
    """
    if not (0.0 <= gamma < 1.0):
        raise ValueError("gamma must lie in [0, 1)")
    if horizon < 1:
        raise ValueError("horizon must be positive")
    if gamma == 0.0:
        bracket = 1.0
    else:
        g_h = gamma**horizon
        bracket = (
            (1.0 - g_h**2) / (1.0 - gamma**2)
            + horizon * g_h**2
            - 2.0 * g_h * (1.0 - g_h) / (1.0 - gamma)
        )
    return r_max**2 * spec.feature_clip**2 / ((1.0 - gamma) ** 2 * spec.xi**2) * bracket
