import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from engine.errors import InvalidPotentialError
from engine.potential import Potential
from engine.profile1d import decay_constants, heteroclinic


class TestHeteroclinic:
    """ū для квартики равен tanh(s/√2)"""

    def test_matches_tanh(self, profile):
        s = np.linspace(-10.0, 10.0, 2001)
        assert np.max(np.abs(profile.eval(s) - np.tanh(s / np.sqrt(2.0)))) <= 1e-6

    def test_odd_and_monotone(self, profile):
        assert np.allclose(profile.u, -profile.u[::-1], atol=0.0)
        assert np.all(np.diff(profile.u) >= 0.0)
        assert profile.eval(0.0) == 0.0

    def test_saturates_beyond_grid(self, profile):
        assert profile.eval(25.0) == 1.0
        assert profile.eval(-25.0) == -1.0
        assert profile.eval_deriv(25.0) == 0.0

    def test_derivative_is_even(self, profile):
        s = np.linspace(0.0, 8.0, 81)
        assert np.allclose(profile.eval_deriv(s), profile.eval_deriv(-s))
        exact = 1.0 / (np.sqrt(2.0) * np.cosh(s / np.sqrt(2.0)) ** 2)
        assert np.max(np.abs(profile.eval_deriv(s) - exact)) <= 1e-5

    def test_energy(self, profile):
        assert profile.energy(10.0) == pytest.approx(2.0 * np.sqrt(2.0) / 3.0, abs=1e-3)
        assert profile.energy() == pytest.approx(2.0 * np.sqrt(2.0) / 3.0, abs=1e-3)

    def test_equipartition(self, profile):
        kinetic, potential = profile.equipartition()
        assert kinetic == pytest.approx(potential, abs=1e-4)

    def test_ode_residual_small(self, profile):
        assert profile.ode_residual() <= 1e-3

    def test_ode_residual_second_order(self, quartic):
        coarse = heteroclinic(quartic, l_max=10.0, h=0.01).ode_residual()
        fine = heteroclinic(quartic, l_max=10.0, h=0.005).ode_residual()
        assert coarse / fine == pytest.approx(4.0, rel=0.05)

    def test_window(self, profile):
        s, u, _ = profile.window(5.0)
        assert s[0] == pytest.approx(-5.0)
        assert s[-1] == pytest.approx(5.0)
        assert u.size == s.size

    def test_rejects_shifted_potential(self, quartic):
        with pytest.raises(InvalidPotentialError):
            heteroclinic(quartic.shifted())


class TestDecayConstants:
    def test_rate_is_sqrt_curvature(self, profile):
        assert profile.decay_k == pytest.approx(np.sqrt(2.0), abs=1e-2)
        k, K = decay_constants(profile)
        half = profile.s >= 0
        envelope = np.abs(1.0 - profile.u[half]) + np.abs(profile.du[half])
        assert np.all(envelope <= K * np.exp(-k * profile.s[half]) * (1.0 + 1e-12))

    def test_rescaled_potential_doubles_rate(self, profile):
        fast = heteroclinic(Potential("quartic", scale=4.0), l_max=20.0, h=0.01)
        assert fast.decay_k / profile.decay_k == pytest.approx(2.0, rel=0.02)

    @given(scale=st.floats(min_value=0.5, max_value=3.0))
    @settings(max_examples=5, deadline=None)
    def test_profile_stays_in_wells(self, scale):
        pr = heteroclinic(Potential("quartic", scale=scale), l_max=20.0, h=0.02)
        assert np.all(np.abs(pr.u) <= 1.0)
        # ū(s) = tanh(√a s/√2) для W = a¼(1 - u²)²
        s = np.linspace(-5.0, 5.0, 101)
        assert np.max(np.abs(pr.eval(s) - np.tanh(np.sqrt(scale) * s / np.sqrt(2.0)))) <= 1e-5
