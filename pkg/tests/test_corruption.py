"""Noise algebra, corruption draws, targets, loss, and recovery."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddep.corruption import (
    CorruptionSample,
    FixedGamma,
    FixedSigma,
    Formulation,
    NoiseSpec,
    Target,
    UniformGamma,
    corrupt,
    denoise_target,
    denoising_loss,
    gamma_to_sigma,
    recover_clean,
    sigma_to_gamma,
)
from ddep.errors import InvalidArgumentError


def spec_simple(sigma, target=Target.NOISE):
    return NoiseSpec(Formulation.SIMPLE, target, FixedSigma(sigma))

def spec_scaled(gamma, target=Target.NOISE):
    return NoiseSpec(Formulation.SCALED, target, FixedGamma(gamma))


class FakeRng:
    """Returns a pre-chosen noise tensor; uniform() is a fixed value."""

    def __init__(self, eps, uniform_value=0.5):
        self.eps = np.asarray(eps, dtype=np.float32)
        self.uniform_value = uniform_value

    def standard_normal(self, shape, dtype=np.float32):
        assert tuple(shape) == self.eps.shape
        return self.eps.astype(dtype)

    def uniform(self, lo, hi, size=None):
        return np.full(size, lo + (hi - lo) * self.uniform_value)


class TestSigmaGamma:
    def test_zero_noise(self):
        assert sigma_to_gamma(0.0) == 1.0
        assert gamma_to_sigma(1.0) == 0.0

    def test_paper_operating_point(self):
        # sigma 0.22 lands at the 0.95-ish gamma used with the scaled form
        g = sigma_to_gamma(0.22)
        assert abs(g - 0.95385) < 1e-4
        assert round(g, 2) == 0.95

    def test_hand_values(self):
        assert abs(sigma_to_gamma(0.8) - 1.0 / 1.64) < 1e-12
        assert abs(gamma_to_sigma(0.5) - 1.0) < 1e-12
        assert abs(gamma_to_sigma(0.95) - 0.22941573) < 1e-6

    @given(st.floats(min_value=0.0, max_value=10.0))
    @settings(max_examples=200, deadline=None)
    def test_round_trip(self, sigma):
        # abs floor: below sigma ~1.5e-8, 1 + sigma^2 rounds to 1 in float64
        back = gamma_to_sigma(sigma_to_gamma(sigma))
        assert back == pytest.approx(sigma, rel=1e-6, abs=2e-8)

    def test_monotone_decreasing(self):
        sigmas = np.linspace(0, 10, 101)
        gammas = [sigma_to_gamma(float(s)) for s in sigmas]
        assert all(a > b for a, b in zip(gammas, gammas[1:]))

    @pytest.mark.parametrize("bad", [float("nan"), float("inf"), -0.5])
    def test_sigma_rejects(self, bad):
        with pytest.raises(InvalidArgumentError):
            sigma_to_gamma(bad)

    @pytest.mark.parametrize("bad", [0.0, -1.0, 1.5, float("nan")])
    def test_gamma_rejects(self, bad):
        with pytest.raises(InvalidArgumentError):
            gamma_to_sigma(bad)


class TestNoiseSpec:
    def test_mismatched_pairings_rejected(self):
        with pytest.raises(InvalidArgumentError):
            NoiseSpec(Formulation.SIMPLE, Target.NOISE, FixedGamma(0.9))
        with pytest.raises(InvalidArgumentError):
            NoiseSpec(Formulation.SIMPLE, Target.NOISE, UniformGamma(0.9, 0.95))
        with pytest.raises(InvalidArgumentError):
            NoiseSpec(Formulation.SCALED, Target.NOISE, FixedSigma(0.4))

    def test_magnitude_validation(self):
        with pytest.raises(InvalidArgumentError):
            FixedSigma(-0.1)
        with pytest.raises(InvalidArgumentError):
            FixedGamma(0.0)
        with pytest.raises(InvalidArgumentError):
            FixedGamma(1.1)
        with pytest.raises(InvalidArgumentError):
            UniformGamma(0.9, 0.8)
        with pytest.raises(InvalidArgumentError):
            UniformGamma(0.0, 0.5)
        UniformGamma(0.9, 0.9)  # lo == hi is allowed


class TestCorrupt:
    def test_zero_sigma_is_identity(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 4, 4)).astype(np.float32)
        out = corrupt(x, spec_simple(0.0), np.random.default_rng(1))
        np.testing.assert_array_equal(out.noisy, x)

    def test_scaled_endpoints(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 4, 4)).astype(np.float32)
        out = corrupt(x, spec_scaled(1.0), np.random.default_rng(1))
        np.testing.assert_array_equal(out.noisy, x)
        tiny = corrupt(x, spec_scaled(1e-12), np.random.default_rng(1))
        np.testing.assert_allclose(tiny.noisy, tiny.noise, atol=1e-4)

    def test_injected_noise_arithmetic(self):
        x = np.array([[1.0, -1.0]], dtype=np.float32)
        rng = FakeRng(np.array([[0.5, 0.5]]))
        out = corrupt(x, spec_simple(0.4), rng)
        np.testing.assert_allclose(out.noisy, [[1.2, -0.8]], atol=1e-7)
        assert out.gamma_used == pytest.approx(sigma_to_gamma(0.4))

    def test_pure_function_of_rng_state(self):
        x = np.random.default_rng(0).normal(size=(4, 3, 8, 8)).astype(np.float32)
        a = corrupt(x, spec_scaled(0.7), np.random.default_rng(42))
        b = corrupt(x, spec_scaled(0.7), np.random.default_rng(42))
        np.testing.assert_array_equal(a.noisy, b.noisy)
        np.testing.assert_array_equal(a.noise, b.noise)

    def test_uniform_gamma_per_example(self):
        x = np.zeros((5, 3, 4, 4), dtype=np.float32)
        spec = NoiseSpec(Formulation.SCALED, Target.NOISE, UniformGamma(0.3, 0.9))
        out = corrupt(x, spec, np.random.default_rng(7))
        assert out.gamma_used.shape == (5,)
        assert np.all((out.gamma_used >= 0.3) & (out.gamma_used <= 0.9))
        assert len(np.unique(out.gamma_used)) > 1

    def test_uniform_gamma_degenerate_equals_fixed(self):
        x = np.random.default_rng(3).normal(size=(4, 3, 4, 4)).astype(np.float32)
        uni = NoiseSpec(Formulation.SCALED, Target.NOISE, UniformGamma(0.6, 0.6))
        fix = spec_scaled(0.6)
        a = corrupt(x, uni, np.random.default_rng(11))
        b = corrupt(x, fix, np.random.default_rng(11))
        np.testing.assert_array_equal(a.noisy, b.noisy)

    def test_rejects_nonfinite_input(self):
        x = np.array([[np.nan, 0.0]], dtype=np.float32)
        with pytest.raises(InvalidArgumentError):
            corrupt(x, spec_simple(0.1), np.random.default_rng(0))

    @pytest.mark.parametrize("gamma", [0.2, 0.5, 0.95])
    def test_scaled_variance_preserved(self, gamma):
        rng = np.random.default_rng(123)
        x = rng.normal(size=(4, 3, 100, 100)).astype(np.float32)  # 120k elements
        out = corrupt(x, spec_scaled(gamma), np.random.default_rng(456))
        assert out.noisy.var() == pytest.approx(1.0, abs=0.02)

    @pytest.mark.parametrize("sigma", [0.1, 0.4, 0.8])
    def test_simple_variance_grows(self, sigma):
        rng = np.random.default_rng(123)
        x = rng.normal(size=(4, 3, 100, 100)).astype(np.float32)
        out = corrupt(x, spec_simple(sigma), np.random.default_rng(456))
        expected = 1.0 + sigma * sigma
        assert out.noisy.var() == pytest.approx(expected, rel=0.02)


class TestTargetAndLoss:
    def test_targets_bit_identical(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 4, 4)).astype(np.float32)
        sample = corrupt(x, spec_scaled(0.8), np.random.default_rng(5))
        clean = denoise_target(x, sample, spec_scaled(0.8, Target.CLEAN_IMAGE))
        assert clean is x
        noise = denoise_target(x, sample, spec_scaled(0.8, Target.NOISE))
        assert noise is sample.noise

    def test_injected_noise_target(self):
        x = np.array([[1.0, -1.0]], dtype=np.float32)
        sample = corrupt(x, spec_simple(0.4), FakeRng(np.array([[0.5, 0.5]])))
        tgt = denoise_target(x, sample, spec_simple(0.4, Target.NOISE))
        np.testing.assert_array_equal(tgt, [[0.5, 0.5]])

    def test_target_shape_mismatch(self):
        sample = CorruptionSample(
            noisy=np.zeros((1, 2)), noise=np.zeros((1, 2)), gamma_used=1.0
        )
        with pytest.raises(InvalidArgumentError):
            denoise_target(np.zeros((1, 3)), sample, spec_simple(0.1))

    def test_loss_zero_iff_equal(self):
        p = np.random.default_rng(0).normal(size=(3, 5)).astype(np.float32)
        assert denoising_loss(p, p) == 0.0
        assert denoising_loss(p, p + 1e-3) > 0.0

    def test_loss_mean_of_squares(self):
        assert denoising_loss(np.array([1.0, 1.0]), np.array([0.0, 0.0])) == pytest.approx(1.0)

    def test_loss_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(9)
        for n in (4, 100, 10_000):
            p = rng.normal(size=n)
            t = rng.normal(size=n)
            acc = 0.0
            for i in range(n):  # independent elementwise oracle
                d = p[i] - t[i]
                acc += d * d
            assert denoising_loss(p, t) == pytest.approx(acc / n, rel=1e-6)

    def test_loss_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            denoising_loss(np.zeros(3), np.zeros(4))


class TestRecoverClean:
    def test_true_noise_round_trip_scaled(self):
        x = np.random.default_rng(0).normal(size=(4, 3, 16, 16)).astype(np.float32)
        for gamma in (0.2, 0.64, 0.95, 1.0):
            sample = corrupt(x, spec_scaled(gamma), np.random.default_rng(2))
            back = recover_clean(sample.noisy, sample.noise, gamma)
            np.testing.assert_allclose(back, x, atol=1e-5)

    def test_true_noise_round_trip_simple(self):
        x = np.random.default_rng(0).normal(size=(4, 3, 16, 16)).astype(np.float32)
        for sigma in (0.1, 0.8, 2.0):
            sample = corrupt(x, spec_simple(sigma), np.random.default_rng(2))
            back = recover_clean(
                sample.noisy, sample.noise, sigma_to_gamma(sigma), Formulation.SIMPLE
            )
            np.testing.assert_allclose(back, x, atol=1e-5)

    def test_gamma_one_returns_noisy(self):
        noisy = np.array([0.3, -0.7], dtype=np.float32)
        eps_hat = np.array([5.0, -5.0], dtype=np.float32)
        np.testing.assert_array_equal(recover_clean(noisy, eps_hat, 1.0), noisy)

    def test_worked_inversion(self):
        # noisy [0.8, 0.6] arose from x=[1,0], eps=[0,1] at gamma 0.64
        back = recover_clean(np.array([0.8, 0.6]), np.array([0.0, 1.0]), 0.64)
        np.testing.assert_allclose(back, [1.0, 0.0], atol=1e-7)

    def test_per_example_gamma(self):
        x = np.random.default_rng(1).normal(size=(3, 2, 4, 4)).astype(np.float32)
        spec = NoiseSpec(Formulation.SCALED, Target.NOISE, UniformGamma(0.3, 0.9))
        sample = corrupt(x, spec, np.random.default_rng(8))
        back = recover_clean(sample.noisy, sample.noise, sample.gamma_used)
        np.testing.assert_allclose(back, x, atol=1e-5)

    def test_rejects_bad_gamma(self):
        with pytest.raises(InvalidArgumentError):
            recover_clean(np.zeros(2), np.zeros(2), 0.0)
        with pytest.raises(InvalidArgumentError):
            recover_clean(np.zeros(2), np.zeros(2), -0.3)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            recover_clean(np.zeros(2), np.zeros(3), 0.5)


def test_degenerate_spec_detection():
    assert spec_simple(0.0).is_degenerate()
    assert spec_scaled(1.0).is_degenerate()
    assert not spec_simple(0.1).is_degenerate()
    assert not spec_scaled(0.95).is_degenerate()
