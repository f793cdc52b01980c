from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdpgt import envsim, gradient, policy
from mdpgt.theory import (
    DerivedConstants,
    ProblemConstants,
    ScheduleWarning,
    beta_from_eta,
    derive_constants,
    gaussian_constants,
    gaussian_variance_bound,
    max_step_size,
    minibatch_schedule,
    single_trajectory_schedule,
    steady_state_error,
)

PC_HALF = ProblemConstants(
    c_g=1.0, c_h=1.0, r_max=1.0, gamma=0.5, horizon=2, m_bound=0.0, n_agents=1, lam=0.5
)


def _dc(l=1.0, g=1.0, c_upsilon=1.0):
    return DerivedConstants(
        smoothness=l,
        grad_bound=g,
        sigma_bar_sq=g * g,
        c_upsilon=c_upsilon,
        d_comp=96.0 * l * l + 96.0 * g * g * c_upsilon,
    )


class TestDeriveConstants:
    def test_hand_values(self):
        dc = derive_constants(PC_HALF)
        assert dc.smoothness == 4.0
        assert dc.grad_bound == 4.0
        assert dc.sigma_bar_sq == 16.0
        assert dc.c_upsilon == 10.0
        assert dc.d_comp == 96.0 * 16.0 + 96.0 * 16.0 * 10.0

    def test_variance_equals_squared_gradient_bound_exactly(self):
        dc = derive_constants(PC_HALF)
        assert dc.sigma_bar_sq == dc.grad_bound**2

    @given(
        st.floats(0.1, 10.0),
        st.floats(0.1, 10.0),
        st.floats(0.1, 10.0),
        st.floats(0.05, 0.99),
        st.integers(1, 100),
        st.floats(0.0, 10.0),
    )
    @settings(max_examples=80, deadline=None)
    def test_all_derived_constants_positive(self, c_g, c_h, r_max, gamma, horizon, m_bound):
        pc = ProblemConstants(
            c_g=c_g, c_h=c_h, r_max=r_max, gamma=gamma,
            horizon=horizon, m_bound=m_bound, n_agents=3, lam=0.2,
        )
        dc = derive_constants(pc)
        assert dc.smoothness > 0 and dc.grad_bound > 0
        assert dc.sigma_bar_sq > 0 and dc.c_upsilon > 0 and dc.d_comp > 0

    @given(st.floats(0.1, 0.8), st.floats(0.01, 0.15))
    @settings(max_examples=50, deadline=None)
    def test_smoothness_and_gradient_bound_increase_with_gamma(self, gamma, bump):
        lo = derive_constants(
            ProblemConstants(1.0, 1.0, 1.0, gamma, 2, 0.0, 1, 0.0)
        )
        hi = derive_constants(
            ProblemConstants(1.0, 1.0, 1.0, gamma + bump, 2, 0.0, 1, 0.0)
        )
        assert hi.smoothness > lo.smoothness
        assert hi.grad_bound > lo.grad_bound


class TestMaxStepSize:
    def test_third_term_inversion(self):
        # smoothness^2 + grad^2 c_upsilon = 1/216 makes the ceiling exactly 1
        dc = DerivedConstants(
            smoothness=np.sqrt(1 / 432),
            grad_bound=np.sqrt(1 / 432),
            sigma_bar_sq=1 / 432,
            c_upsilon=1.0,
            d_comp=1.0,
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ScheduleWarning)
            assert max_step_size(dc, 0.0, 1) == pytest.approx(1.0)

    def test_vanishes_as_lam_approaches_one(self):
        dc = _dc()
        values = [max_step_size(dc, lam, 4) for lam in (0.9, 0.99, 0.999)]
        assert values[0] > values[1] > values[2]
        assert values[2] < 1e-5

    def test_agent_scaling_when_second_term_binds(self):
        dc = _dc(l=1e-3, g=1e-3, c_upsilon=1.0)
        lam = 0.05  # small lam with tiny constants leaves term2 binding
        base = max_step_size(dc, lam, 1)
        quad = max_step_size(dc, lam, 4)
        assert quad == pytest.approx(2.0 * base)

    def test_lam_zero_flags_and_returns_third_term(self):
        dc = _dc()
        with pytest.warns(ScheduleWarning):
            value = max_step_size(dc, 0.0, 3)
        assert value == pytest.approx(1.0 / (6.0 * np.sqrt(6.0 * 2.0)))


class TestBetaFromEta:
    def test_boundary_case_flagged(self):
        dc = _dc(l=1.0, g=0.0, c_upsilon=0.0)  # d_comp = 96
        with pytest.warns(ScheduleWarning):
            assert beta_from_eta(dc, 1.0, 96) == pytest.approx(1.0)

    def test_eta_quadratic_scaling(self):
        dc = _dc()
        assert beta_from_eta(dc, 0.005, 4) == pytest.approx(beta_from_eta(dc, 0.01, 4) / 4.0)

    def test_agent_inverse_scaling(self):
        dc = _dc()
        assert beta_from_eta(dc, 0.01, 8) == pytest.approx(beta_from_eta(dc, 0.01, 4) / 2.0)


class TestSchedules:
    def test_minibatch_hand_example(self):
        dc = _dc(l=0.125, g=1.0, c_upsilon=1.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ScheduleWarning)
            s = minibatch_schedule(dc, 1, 1, 0.5)
        assert s.eta == pytest.approx(1.0)

    def test_minibatch_k_scalings(self):
        # integer-exact cube roots keep the batch ceiling from rounding
        dc = _dc()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ScheduleWarning)
            s1 = minibatch_schedule(dc, 1, 1000, 0.3)
            s8 = minibatch_schedule(dc, 1, 8000, 0.3)
        assert s8.eta == pytest.approx(s1.eta / 2.0)
        assert s1.batch == 10 and s8.batch == 20

    def test_minibatch_batch_is_one_when_agents_match_iterations(self):
        dc = _dc()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ScheduleWarning)
            for k in (8, 27, 1000):
                assert minibatch_schedule(dc, k, k, 0.3).batch == 1

    def test_single_trajectory_hand_example(self):
        dc = _dc(l=0.125, g=1.0, c_upsilon=1.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ScheduleWarning)
            s = single_trajectory_schedule(dc, 1, 1, 0.5)
        assert s.eta == pytest.approx(1.0)
        assert s.batch == 1

    def test_single_trajectory_k_scaling(self):
        dc = _dc()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ScheduleWarning)
            s1 = single_trajectory_schedule(dc, 2, 1000, 0.3)
            s16 = single_trajectory_schedule(dc, 2, 16000, 0.3)
        assert s16.eta == pytest.approx(s1.eta / 2.0)
        assert s1.beta > 0 and s16.beta > 0

    def test_threshold_flagging(self):
        dc = _dc()
        with pytest.warns(ScheduleWarning, match="threshold"):
            s = minibatch_schedule(dc, 4, 10, 0.3)
        assert not s.k_ok
        assert s.k_threshold > 10

    def test_schedule_eta_within_ceiling_on_grid(self, capsys):
        # logged, not asserted: with desk-scale constants the asymptotic
        # threshold constants do not guarantee containment
        violations = 0
        checked = 0
        for l in (0.5, 2.0):
            for g in (0.5, 2.0):
                for c_u in (1.0, 10.0):
                    for lam in (0.1, 0.5, 0.9):
                        for n in (2, 8):
                            dc = _dc(l=l, g=g, c_upsilon=c_u)
                            with warnings.catch_warnings():
                                warnings.simplefilter("ignore", ScheduleWarning)
                                k = max(2, int(np.ceil(minibatch_schedule(dc, n, 2, lam).k_threshold)))
                                k = min(k, 10**9)
                                s = minibatch_schedule(dc, n, k, lam)
                                ceiling = max_step_size(dc, lam, n)
                            checked += 1
                            if s.k_ok and s.eta > ceiling:
                                violations += 1
                                print(
                                    f"eta {s.eta:.3g} above ceiling {ceiling:.3g} "
                                    f"at l={l} g={g} c_u={c_u} lam={lam} n={n} k={k}"
                                )
        print(f"schedule-vs-ceiling grid: {violations}/{checked} violations")


class TestSteadyStateError:
    def test_lam_zero_keeps_first_term_only(self):
        dc = _dc(g=2.0)
        assert steady_state_error(dc, 0.5, 0.0, 2) == pytest.approx(8 * 0.5 * 4.0 / 2)

    def test_vanishes_with_beta(self):
        dc = _dc()
        assert steady_state_error(dc, 1e-12, 0.5, 2) == pytest.approx(0.0, abs=1e-10)

    def test_first_term_halves_with_agents(self):
        dc = _dc()
        full = steady_state_error(dc, 0.3, 0.0, 2)
        assert steady_state_error(dc, 0.3, 0.0, 4) == pytest.approx(full / 2.0)


class TestGaussianConstants:
    def test_unit_hessian_bound(self):
        spec = policy.LinearGaussianSpec(feature_dim=2, xi=1.0, feature_clip=1.0, action_clip=1.0)
        pc = gaussian_constants(spec, 1.0, 1.0, 0.5, 2, 0.0, 1, 0.0)
        assert pc.c_h == 1.0
        assert pc.c_g == 2.0  # (1 + 1*1) * 1 / 1

    def test_variance_bound_degenerate_discount(self):
        spec = policy.LinearGaussianSpec(feature_dim=1, xi=1.0, feature_clip=1.0, action_clip=1.0)
        assert gaussian_variance_bound(spec, 1.0, 0.0, 1) == 1.0

    def test_variance_bound_is_stepwise_sum_of_squares(self):
        spec = policy.LinearGaussianSpec(feature_dim=1, xi=0.7, feature_clip=1.3, action_clip=1.0)
        gamma, horizon, r = 0.9, 5, 2.0
        direct = sum(
            gamma ** (2 * h) * (1 - gamma ** (horizon - h)) ** 2 for h in range(horizon)
        )
        expected = r**2 * spec.feature_clip**2 / ((1 - gamma) ** 2 * spec.xi**2) * direct
        assert gaussian_variance_bound(spec, r, gamma, horizon) == pytest.approx(expected, rel=1e-12)

    def test_variance_bound_dominates_empirical_estimator_variance(self):
        # Monte Carlo check on a single-agent task at moderate sample size;
        # the acceptance suite repeats this at full scale
        cfg = envsim.EnvConfig(env="lineworld", n_agents=1, world_size=5, horizon=5, gamma=0.9)
        spec = policy.LinearGaussianSpec(feature_dim=1, xi=1.0, feature_clip=1.0, action_clip=1.0)
        params = policy.PolicyParams(np.zeros(1), spec)
        n = 10_000
        grads = np.empty(n)
        for m in range(n):
            traj = envsim.sample_trajectory(cfg, [params], np.random.default_rng(m))[0]
            grads[m] = gradient.pg_estimate(traj, params, "pgt")[0]
        bound = gaussian_variance_bound(spec, envsim.reward_bound(cfg), 0.9, 5)
        assert grads.var(ddof=1) <= bound

    def test_invalid_inputs(self):
        spec = policy.LinearGaussianSpec(feature_dim=1)
        with pytest.raises(ValueError):
            gaussian_variance_bound(spec, 1.0, 1.0, 5)
        with pytest.raises(ValueError):
            gaussian_variance_bound(spec, 1.0, 0.5, 0)


class TestProblemConstantsValidation:
    def test_rejects_bad_ranges(self):
        with pytest.raises(ValueError):
            ProblemConstants(0.0, 1.0, 1.0, 0.5, 2, 0.0, 1, 0.0)
        with pytest.raises(ValueError):
            ProblemConstants(1.0, 1.0, 1.0, 1.0, 2, 0.0, 1, 0.0)
        with pytest.raises(ValueError):
            ProblemConstants(1.0, 1.0, 1.0, 0.5, 2, 0.0, 1, 1.0)
