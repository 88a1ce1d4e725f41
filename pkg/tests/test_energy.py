import numpy as np
import pytest

from engine.energy import (
    El_energy,
    annulus_energy_bound,
    annulus_interpolate,
    annulus_support,
    el_energy,
    energy_gradient,
    excise_to_profile,
    interpolation_inequality,
    reassemble_energy,
    slice_decompose,
    total_energy,
)
from engine.errors import EnergyRegionError, GeometryError
from engine.geometry import Cylinder, Field, SymmetricDomain, build_grid
from tests.conftest import odd_random_field, profile_field


def bump(grid, center, radius):
    r = np.hypot(grid.X1 - center[0], grid.X2 - center[1]) / radius
    return np.where(r < 1.0, (1.0 - r * r) ** 2, 0.0)


class TestTotalEnergy:
    def test_constant_wells(self, small_strip, quartic):
        ones = Field(small_strip, np.where(small_strip.defined, 1.0, np.nan))
        assert total_energy(ones, quartic).total == 0.0

    def test_zero_field_is_area_times_w0(self, small_strip, quartic):
        zero = Field(small_strip, np.where(small_strip.defined, 0.0, np.nan))
        e = total_energy(zero, quartic)
        # ячейки [-1, 1] x [0, 1]: площадь 2
        assert e.potential_part == pytest.approx(0.5)
        assert e.gradient_part == 0.0

    def test_region_must_be_defined(self, small_strip, quartic):
        f = Field(small_strip, np.where(small_strip.defined, 0.0, np.nan))
        with pytest.raises(EnergyRegionError):
            total_energy(f, quartic, region=np.ones(small_strip.shape, dtype=bool))

    def test_odd_reflection_invariance(self, small_strip, quartic):
        f = odd_random_field(small_strip, np.random.default_rng(3))
        mirrored = f.with_values(-f.values[:, ::-1])
        assert total_energy(f, quartic).total == pytest.approx(total_energy(mirrored, quartic).total, rel=1e-13)


class TestGradient:
    def test_matches_central_differences(self, small_strip, quartic):
        """∂J/∂u_i = h² r_i по 20 случайным направлениям"""
        rng = np.random.default_rng(4)
        g = small_strip
        f = odd_random_field(g, rng, scale=0.5)
        r = energy_gradient(f, quartic)
        eps = 1e-6
        for _ in range(20):
            direction = np.zeros(g.shape)
            direction[g.interior] = rng.normal(size=int(g.interior.sum()))
            plus = total_energy(f.with_values(f.values + eps * direction), quartic).total
            minus = total_energy(f.with_values(f.values - eps * direction), quartic).total
            numeric = (plus - minus) / (2 * eps)
            exact = g.h ** 2 * np.sum(r.values[g.interior] * direction[g.interior])
            assert numeric == pytest.approx(exact, rel=1e-6)

    def test_residual_nan_outside_interior(self, small_strip, quartic):
        f = odd_random_field(small_strip, np.random.default_rng(5))
        r = energy_gradient(f, quartic)
        assert np.all(np.isfinite(r.values[small_strip.interior]))
        assert np.all(np.isnan(r.values[~small_strip.interior]))


class TestOneDimensional:
    def test_el_of_profile(self, profile, quartic):
        _, u, _ = profile.window(10.0)
        assert el_energy(u, quartic, profile.h) == pytest.approx(2.0 * np.sqrt(2.0) / 3.0, abs=1e-3)

    def test_El_vanishes_at_zero(self, profile):
        s = np.linspace(-10.0, 10.0, 2001)
        assert El_energy(np.zeros_like(s), profile, s) == 0.0

    def test_El_matches_difference(self, profile, quartic):
        s = np.linspace(-10.0, 10.0, 2001)
        h = s[1] - s[0]
        v = 0.01 * np.sin(np.pi * s / 10.0)
        ubar = profile.eval(s)
        direct = el_energy(ubar + v, quartic, h) - el_energy(ubar, quartic, h)
        assert El_energy(v, profile, s) == pytest.approx(direct, rel=1e-8)


@pytest.fixture(scope="module")
def slab():
    """|x1| < 4, 0 < x2 < 3, h = 0.1"""
    return build_grid(SymmetricDomain.strip(4.0, 0.0, 3.0), 0.1)


class TestSliceDecomposition:
    def test_profile_field_has_no_deviation(self, slab, profile):
        f = profile_field(slab, profile)
        decomp = slice_decompose(f, profile, Cylinder(3.0, 1.0, 1.5))
        assert np.max(decomp.q) == 0.0
        assert not np.any(decomp.defined)

    def test_reassembly_matches_direct_energy(self, slab, profile, quartic):
        f = profile_field(slab, profile)
        values = f.values + 0.2 * bump(slab, (0.8, 1.4), 0.9) - 0.2 * bump(slab, (-0.8, 1.4), 0.9)
        f = f.with_values(values)
        c = Cylinder(3.0, 1.0, 1.5)
        region = c.check_inside(slab)
        decomp = slice_decompose(f, profile, c)
        direct = total_energy(f, quartic, region).total
        assert reassemble_energy(decomp, profile) == pytest.approx(direct, rel=1e-10)

    def test_unit_norm_directions(self, slab, profile):
        f = profile_field(slab, profile)
        f = f.with_values(f.values + 0.1 * bump(slab, (1.0, 1.5), 0.8))
        decomp = slice_decompose(f, profile, Cylinder(3.0, 1.0, 1.5))
        for nu in decomp.nu:
            if nu is not None:
                weights = np.ones(nu.size)
                weights[0] = weights[-1] = 0.5
                assert np.sqrt(decomp.h * np.sum(weights * nu * nu)) == pytest.approx(1.0)

    def test_interpolation_inequality(self, slab, profile):
        f = profile_field(slab, profile)
        f = f.with_values(f.values + 0.3 * bump(slab, (0.5, 1.5), 1.0))
        result = interpolation_inequality(slice_decompose(f, profile, Cylinder(3.0, 1.0, 1.5)))
        assert result["rows_checked"] > 0
        assert result["passed"]
        assert result["max_ratio"] <= 1.0 / np.sqrt(2.0) + 1e-12


class TestCompetitors:
    def test_excision_of_profile_is_identity(self, slab, profile):
        f = profile_field(slab, profile)
        excised = excise_to_profile(f, Cylinder(2.0, 0.5, 1.5), profile)
        assert np.array_equal(excised.values[slab.defined], f.values[slab.defined])

    def test_excision_removes_bump_energy(self, slab, profile, quartic):
        f = profile_field(slab, profile)
        f = f.with_values(f.values + 0.3 * bump(slab, (0.5, 1.5), 0.5))
        excised = excise_to_profile(f, Cylinder(2.0, 1.0, 1.5), profile)
        assert total_energy(excised, quartic).total < total_energy(f, quartic).total

    def test_excision_drop_equals_bump_energy(self, slab, profile, quartic):
        """Нечётная пара бампов строго внутри цилиндра: разность J есть энергия бампов в цилиндре"""
        base = profile_field(slab, profile)
        odd = 0.3 * (bump(slab, (0.8, 1.5), 0.5) - bump(slab, (-0.8, 1.5), 0.5))
        f = base.with_values(base.values + np.where(slab.interior, odd, 0.0))
        c = Cylinder(2.0, 1.0, 1.5)
        region = c.check_inside(slab)
        excised = excise_to_profile(f, c, profile)
        assert np.array_equal(excised.values[slab.defined], base.values[slab.defined])

        drop = total_energy(f, quartic).total - total_energy(excised, quartic).total
        inside = total_energy(f, quartic, region).total - total_energy(base, quartic, region).total
        assert drop == pytest.approx(inside, rel=1e-10)
        rows = reassemble_energy(slice_decompose(f, profile, c), profile) - reassemble_energy(
            slice_decompose(base, profile, c), profile
        )
        assert drop == pytest.approx(rows, rel=1e-8)

        # строки с q >= q̄/2 дают не меньше |A| · ½c²(q̄/2)², c² = 3/4
        q_bar = 0.1
        decomp = slice_decompose(f, profile, c)
        measure = np.count_nonzero(decomp.q >= 0.5 * q_bar) * slab.h
        assert measure > 0
        assert drop >= measure * 0.5 * 0.75 * (0.5 * q_bar) ** 2

    @pytest.mark.parametrize("q_bar", [0.3, 0.5, 0.7])
    def test_annulus_energy_increase_is_bounded(self, quartic, q_bar):
        g = build_grid(SymmetricDomain.strip(8.0, 0.0, 8.0), 0.25)
        m0 = 0.9
        f = Field(g, np.where(g.defined, m0, np.nan))
        center, R, lam = (0.0, 4.0), 1.0, 1.0
        support = annulus_support(f, center, R, lam, q_bar)
        out = annulus_interpolate(f, center, R, lam, q_bar)
        increase = total_energy(out, quartic).total - total_energy(f, quartic).total
        w_bar = float(np.max(quartic.eval_w(np.linspace(q_bar, m0, 101))))
        area = np.count_nonzero(support) * g.h ** 2
        assert area > 0
        assert 0.0 < increase <= annulus_energy_bound(m0, lam, q_bar, w_bar) * area

    def test_annulus_midcircle_value(self, quartic):
        g = build_grid(SymmetricDomain.strip(8.0, 0.0, 8.0), 0.25)
        f = Field(g, np.where(g.defined, 0.9, np.nan))
        out = annulus_interpolate(f, (0.0, 4.0), 1.0, 1.0, 0.5)
        j = int(np.argmin(np.abs(g.x2 - 4.0)))
        i = g.nx + 6
        assert g.x1[i] == 1.5
        assert out.values[j, i] == pytest.approx(0.5)
        # на окружностях R и R + λ значение не меняется
        assert out.values[j, g.nx + 4] == pytest.approx(0.9)
        assert out.values[j, g.nx + 8] == pytest.approx(0.9)
        assert out.values[j, g.nx + 12] == 0.9

    def test_annulus_support_respects_level(self, quartic):
        g = build_grid(SymmetricDomain.strip(8.0, 0.0, 8.0), 0.25)
        f = Field(g, np.where(g.defined, 0.3, np.nan))
        assert not np.any(annulus_support(f, (0.0, 4.0), 1.0, 1.0, 0.5))

    def test_annulus_outside_grid(self, small_strip):
        f = Field(small_strip, np.where(small_strip.defined, 0.9, np.nan))
        with pytest.raises(GeometryError):
            annulus_interpolate(f, (0.0, 0.5), 1.0, 1.0, 0.5)

    def test_energy_bound_formula(self):
        assert annulus_energy_bound(2.0, 1.0, 0.5, 0.25) == pytest.approx(0.5 * (2.0 + 3.0) ** 2 + 0.25)
