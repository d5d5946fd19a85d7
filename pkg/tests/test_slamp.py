import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from partsplat.slamp import (
    BlendSchedule, ConstantVelocity, LatentField, LinearFlow, ParameterError, PartialTargetFlow,
    SingularTimeError, ZeroVelocity, blend_step, edit_velocity, default_eta, default_timesteps,
    invert, run_sweep, scheduled_edit, select_ts, ts_sweep,
)


def fields(seed=0, shape=(8, 9, 3)):
    rng = np.random.default_rng(seed)
    return rng.normal(size=shape), rng.normal(size=shape)


def half_mask(h=8, w=9):
    m = np.zeros((h, w))
    m[:, : w // 2] = 1.0
    return m


class TestLatentField:
    def test_two_dimensional_grid_gains_channel(self):
        assert LatentField(np.zeros((4, 5))).shape == (4, 5, 1)

    def test_non_finite_rejected(self):
        g = np.zeros((2, 2, 1))
        g[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            LatentField(g)


class TestBlendSchedule:
    def test_defaults(self):
        s = BlendSchedule()
        assert len(s.timesteps) == 28
        assert s.timesteps[0] == 1.0
        assert (s.alpha_base, s.alpha_last, s.t_s) == (0.1, 1.0, 7)

    def test_last_t_s_steps_use_alpha_last(self):
        s = BlendSchedule(0.2, 0.9, 3, default_timesteps(10))
        weights = [s.blend_weight(i) for i in range(1, 11)]
        assert weights == [0.2] * 7 + [0.9] * 3

    @pytest.mark.parametrize("kwargs", [
        dict(alpha_base=0.5, alpha_last=0.4),
        dict(alpha_base=-0.1),
        dict(t_s=29),
        dict(timesteps=(0.5, 0.7)),
        dict(timesteps=(0.5, 0.5)),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            BlendSchedule(**kwargs)

    def test_default_eta_shape(self):
        eta = default_eta(28)
        assert eta.shape == (28,)
        assert eta[0] == 1.0
        assert np.all(eta[6:] == 0.0)
        assert np.all(np.diff(eta) <= 0)


class TestBlendStep:
    def test_zero_weight_is_identity(self):
        a, b = fields()
        assert_array_equal(blend_step(a, b, 0.0, np.zeros((8, 9))).grid, a)

    def test_full_mask_is_identity(self):
        a, b = fields()
        assert_array_equal(blend_step(a, b, 0.7, np.ones((8, 9))).grid, a)

    def test_full_weight_restores_outside(self):
        a, b = fields()
        assert_array_equal(blend_step(a, b, 1.0, np.zeros((8, 9))).grid, b)

    def test_formula(self):
        a, b = fields()
        m = half_mask()
        expect = a * (1 - 0.3 * (1 - m[..., None])) + b * 0.3 * (1 - m[..., None])
        assert_allclose(blend_step(a, b, 0.3, m).grid, expect, rtol=0, atol=1e-15)

    def test_shape_mismatch(self):
        a, b = fields()
        with pytest.raises(ValueError):
            blend_step(a, b[:-1], 0.5, half_mask())

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.0, 1.0), st.integers(0, 10_000))
    def test_convex_combination(self, F, seed):
        a, b = fields(seed, (4, 4, 2))
        m = (np.random.default_rng(seed).random((4, 4)) < 0.5).astype(float)
        out = blend_step(a, b, F, m).grid
        assert np.all(out >= np.minimum(a, b) - 1e-12)
        assert np.all(out <= np.maximum(a, b) + 1e-12)


class TestInvert:
    def test_gamma_one_lands_on_noise(self):
        z0, noise = fields()
        out = invert(z0, ConstantVelocity(5.0), noise, gamma=1.0, timesteps=np.linspace(0, 1, 29))
        assert_allclose(out.grid, noise, rtol=0, atol=1e-12)
        assert out.t == 1.0

    def test_gamma_zero_with_zero_model_is_identity(self):
        z0, noise = fields()
        assert_array_equal(invert(z0, ZeroVelocity(), noise, gamma=0.0).grid, z0)

    def test_noise_equal_to_start_stays(self):
        z0, _ = fields()
        assert_allclose(invert(z0, ZeroVelocity(), z0, gamma=1.0).grid, z0, rtol=0, atol=1e-15)

    def test_linear_flow_is_exact_for_any_gamma(self):
        z0, noise = fields(3)
        out = invert(z0, LinearFlow(z0, noise), noise, gamma=0.5)
        assert_allclose(out.grid, noise, rtol=0, atol=1e-12)

    def test_singular_time(self):
        z0, noise = fields()
        with pytest.raises(ParameterError):
            invert(z0, ZeroVelocity(), noise, timesteps=[0.0, 1.0, 1.0])

    def test_nonuniform_steps_still_exact(self):
        z0, noise = fields(4)
        ts = np.sort(np.r_[0.0, np.random.default_rng(0).random(12), 1.0])
        assert_allclose(invert(z0, ZeroVelocity(), noise, 1.0, ts).grid, noise, rtol=0, atol=1e-12)


class TestScheduledEdit:
    def test_eta_one_returns_original(self):
        z, zo = fields(1)
        sched = BlendSchedule(0.1, 1.0, 7, tuple(default_timesteps(28)) + (0.0,))
        out = scheduled_edit(z, zo, ConstantVelocity(3.0), None, np.ones(29), sched, half_mask())
        assert_allclose(out.grid, zo, rtol=0, atol=1e-12)

    def test_eta_one_without_terminal_zero(self):
        z, zo = fields(1)
        out = scheduled_edit(z, zo, ZeroVelocity(), None, np.ones(28), BlendSchedule(), half_mask())
        assert_allclose(out.grid, zo, rtol=0, atol=1e-12)

    def test_full_mask_matches_unblended(self):
        z, zo = fields(2)
        sched = BlendSchedule(0.4, 0.9, 5)
        model = PartialTargetFlow(zo * 0.5)
        a = scheduled_edit(z, zo, model, None, default_eta(), sched, np.ones((8, 9)))
        b = scheduled_edit(z, zo, model, None, default_eta(), sched, np.ones((8, 9)), blend=False)
        assert_array_equal(a.grid, b.grid)

    def test_full_restoration_every_step(self):
        z, zo = fields(3)
        m = half_mask()
        traj = []
        sched = BlendSchedule(1.0, 1.0, 4)
        scheduled_edit(z, zo, ZeroVelocity(), None, np.zeros(28), sched, m, trajectory=traj)
        assert len(traj) == 28
        for step in traj:
            assert_array_equal(step.grid[m == 0], zo[m == 0])

    def test_inside_mask_untouched_by_blending(self):
        z, zo = fields(4)
        m = half_mask()
        model = ConstantVelocity(0.3)
        eta = default_eta()
        a = scheduled_edit(z, zo, model, None, eta, BlendSchedule(), m)
        b = scheduled_edit(z, zo, model, None, eta, BlendSchedule(), m, blend=False)
        assert_array_equal(a.grid[m == 1], b.grid[m == 1])
        assert not np.array_equal(a.grid[m == 0], b.grid[m == 0])

    def test_singular_at_zero_with_eta(self):
        z, zo = fields()
        sched = BlendSchedule(0.1, 1.0, 1, (1.0, 0.5, 0.0))
        with pytest.raises(SingularTimeError):
            edit_velocity(z, zo, 0.0, 0.5, ZeroVelocity(), None)
        assert_array_equal(edit_velocity(z, zo, 0.0, 0.0, ZeroVelocity(), None), 0.0)
        # a terminal t = 0 entry is an endpoint, not an evaluation
        scheduled_edit(z, zo, ZeroVelocity(), None, np.ones(3), sched, half_mask())

    def test_eta_length_checked(self):
        z, zo = fields()
        with pytest.raises(ParameterError):
            scheduled_edit(z, zo, ZeroVelocity(), None, np.ones(5), BlendSchedule(), half_mask())

    def test_mask_must_be_binary(self):
        z, zo = fields()
        with pytest.raises(ParameterError):
            scheduled_edit(z, zo, ZeroVelocity(), None, np.zeros(28), BlendSchedule(), half_mask() * 0.5)

    def test_round_trip(self):
        z0, noise = fields(5)
        zi = invert(z0, ZeroVelocity(), noise, gamma=1.0)
        sched = BlendSchedule(0.0, 0.0, 0)
        out = scheduled_edit(zi, z0, ZeroVelocity(), None, np.ones(28), sched, np.zeros((8, 9)))
        assert_allclose(out.grid, z0, rtol=0, atol=1e-6)

    def test_deterministic(self):
        z, zo = fields(6)
        args = (z, zo, PartialTargetFlow(-zo), None, default_eta(), BlendSchedule(), half_mask())
        assert_array_equal(scheduled_edit(*args).grid, scheduled_edit(*args).grid)


class TestSweep:
    def test_identical_outputs_select_largest(self):
        img = np.random.default_rng(0).random((16, 16, 3))
        res = ts_sweep({0: img, 3: img, 7: img}, img)
        assert_allclose(res.ssim, 1.0, atol=1e-12)
        assert res.selected == 7

    def test_rule_walk_through(self):
        assert select_ts([0, 1, 2, 3], [0.5, 0.8, 0.99, 0.995], tol=0.01) == 3
        assert select_ts([0, 1, 2, 3], [0.5, 0.8, 0.995, 0.97], tol=0.01) == 2

    def test_degenerate_images_flagged(self):
        px = np.zeros((1, 1, 1))
        res = ts_sweep({1: px, 2: px}, px)
        assert res.degenerate
        assert all(np.isnan(res.ssim))
        assert res.selected is None

    def test_needs_candidates(self):
        with pytest.raises(ParameterError):
            ts_sweep({}, np.zeros((16, 16)))

    def test_more_restoration_is_more_faithful(self):
        rng = np.random.default_rng(1)
        zo = rng.random((24, 24, 3))
        m = np.zeros((24, 24))
        m[6:18, 6:18] = 1
        target = np.where(m[..., None] > 0, 0.2, 1.0 - zo)
        outs = run_sweep(rng.normal(size=zo.shape), zo, PartialTargetFlow(target), None,
                         default_eta(), BlendSchedule(), m, [0, 7, 28])
        res = ts_sweep(outs, zo)
        assert res.ssim[0] < res.ssim[1] <= res.ssim[2]
