import numpy as np
import pytest
from scipy.special import i0

from engine.comparison import (
    fit_k0,
    monotonicity_check,
    pointwise_bound_check,
    r_bar,
    radial_solve,
)
from engine.errors import ComparisonOverflowError
from engine.geometry import Field, distance_field


class TestRadialSolve:
    """Δφ = c²φ в шаре, φ = q̄ на сфере: явные решения для n = 1, 2, 3"""

    def test_cosh_in_one_dimension(self):
        sol = radial_solve(1.0, 1.0, 2.0, n=1)
        assert sol.center == pytest.approx(1.0 / np.cosh(2.0), rel=1e-6)
        assert sol.center == pytest.approx(0.26580, abs=1e-5)

    @pytest.mark.parametrize("R", [1.0, 5.0, 12.0])
    def test_bessel_in_two_dimensions(self, R):
        sol = radial_solve(1.0, 0.5, R, n=2)
        assert sol.center == pytest.approx(0.5 / i0(R), rel=1e-6)

    def test_three_dimensions(self):
        sol = radial_solve(2.0, 1.0, 3.0, n=3)
        assert sol.center == pytest.approx(6.0 / np.sinh(6.0), rel=1e-6)

    def test_boundary_value_and_monotone(self):
        sol = radial_solve(1.0, 0.3, 6.0)
        assert sol.phi[-1] == 0.3
        assert sol.value_at(6.0) == pytest.approx(0.3)
        assert np.all(np.diff(sol.phi) > 0)
        assert np.all(sol.dphi[1:] > 0)

    def test_residual_is_second_order(self):
        coarse = radial_solve(1.0, 1.0, 5.0, h=0.1).ode_residual()
        fine = radial_solve(1.0, 1.0, 5.0, h=0.05).ode_residual()
        assert coarse / fine == pytest.approx(4.0, rel=0.2)

    def test_log_mode_matches_linear(self):
        logged = radial_solve(1.0, 1.0, 60.0)
        assert logged.log_mode
        plain = radial_solve(1.0, 1.0, 60.0, log_mode=False)
        assert not plain.log_mode
        assert logged.center == pytest.approx(plain.center, rel=1e-6)

    def test_log_mode_far_beyond_overflow(self):
        sol = radial_solve(1.0, 1.0, 800.0, h=0.05)
        assert sol.log_mode
        assert sol.center < 1e-300
        assert sol.phi[-1] == 1.0

    def test_overflow_in_linear_mode(self):
        with pytest.raises(ComparisonOverflowError):
            radial_solve(1.0, 1.0, 800.0, log_mode=False)

    @pytest.mark.parametrize("args", [(0.0, 1.0, 1.0), (1.0, -1.0, 1.0), (1.0, 1.0, 0.0)])
    def test_invalid_arguments(self, args):
        with pytest.raises(ValueError):
            radial_solve(*args)

    def test_invalid_dimension(self):
        with pytest.raises(ValueError):
            radial_solve(1.0, 1.0, 1.0, n=4)

    def test_r_bar(self):
        assert r_bar(0.2, 0.1, 2.0) == pytest.approx(0.05)
        assert radial_solve(1.0, 0.1, 2.0, q_star=0.2, m0=2.0).R_bar == pytest.approx(0.05)


class TestDecayFit:
    def test_one_dimension_rate(self):
        k0, K0 = fit_k0(1.0, 1.0, 1, (5.0, 20.0), points=16)
        assert k0 == pytest.approx(1.0, abs=1e-3)
        assert K0 == pytest.approx(2.0, rel=1e-2)

    def test_two_dimension_rate(self):
        k0, K0 = fit_k0(1.0, 1.0, 2, (5.0, 20.0))
        assert k0 == pytest.approx(0.954, abs=0.01)
        radii = np.linspace(5.0, 20.0, 31)
        centers = 1.0 / i0(radii)
        assert np.all(centers <= K0 * np.exp(-k0 * radii) * (1 + 1e-5))

    def test_rescaling_in_c(self):
        k1, _ = fit_k0(1.0, 1.0, 2, (5.0, 20.0), points=16)
        k2, _ = fit_k0(2.0, 1.0, 2, (2.5, 10.0), points=16)
        assert k2 == pytest.approx(2.0 * k1, rel=1e-3)

    def test_solution_carries_fitted_rate(self):
        solution = radial_solve(1.0, 1.0, 20.0, q_star=1.0, m0=2.0)
        assert solution.k0 is None
        assert solution.R_bar == 0.0
        k0, _ = solution.fit_decay((5.0, 20.0), points=16)
        assert solution.k0 == k0
        assert k0 == pytest.approx(fit_k0(1.0, 1.0, 2, (5.0, 20.0), points=16)[0])

    def test_center_decay_is_bessel_like(self):
        # φ(0, R) ~ √(2πR) e^{-R} при больших R
        scaled = [radial_solve(1.0, 1.0, R).center * np.exp(R) / np.sqrt(R) for R in (10.0, 20.0, 40.0)]
        assert max(scaled) / min(scaled) <= 1.02
        assert scaled[-1] == pytest.approx(np.sqrt(2.0 * np.pi), rel=1e-2)


class TestMonotonicity:
    def test_larger_ball_is_smaller_inside(self):
        assert monotonicity_check(1.0, 0.5, 2, lam=1.0, R1=3.0, R2=6.0)
        assert monotonicity_check(1.0, 0.5, 2, lam=1.0, R1=6.0, R2=3.0)

    def test_equal_radii_and_zero_shift(self):
        assert monotonicity_check(1.0, 0.5, 2, lam=1.0, R1=4.0, R2=4.0)
        assert monotonicity_check(1.0, 0.5, 2, lam=0.0, R1=2.0, R2=5.0)


class TestPointwiseBound:
    def field(self, grid, value):
        values = grid.empty_values()
        values[grid.interior] = value
        return Field(grid, values)

    def test_zero_field_passes(self, tall_strip):
        dist = distance_field(tall_strip)
        report = pointwise_bound_check(self.field(tall_strip, 0.0), dist, 1.0, 0.18, R0=0.5)
        assert report.passed
        assert report.nodes_checked > 0
        assert np.all(np.diff(report.phi0) < 0)
        assert report.as_dict()["R0"] == 0.5

    def test_saturated_field_fails(self, tall_strip):
        dist = distance_field(tall_strip)
        report = pointwise_bound_check(self.field(tall_strip, 0.18), dist, 1.0, 0.18, R0=0.5, slack=0.0)
        assert not report.passed
        assert report.worst_margin < 0
        assert report.empirical[0] == pytest.approx(0.18)

    def test_no_eligible_nodes(self, small_strip):
        dist = distance_field(small_strip)
        report = pointwise_bound_check(self.field(small_strip, 0.0), dist, 1.0, 0.18, R0=5.0)
        assert report.passed
        assert report.nodes_checked == 0
