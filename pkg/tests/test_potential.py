import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from engine.errors import InvalidPotentialError, PotentialDomainError
from engine.potential import Potential, lemma41_constants
from utils.helpers import write_csv


def quartic_table(path, lo=-3.0, hi=3.0, n=601):
    u = np.linspace(lo, hi, n)
    write_csv(path, [u, 0.25 * (1 - u ** 2) ** 2, (u ** 2 - 1) * u, 3 * u ** 2 - 1], ("u", "w", "dw", "ddw"))
    return path


class TestQuartic:
    """Значения и производные W = ¼(1 - u²)²"""

    def test_values_at_wells(self, quartic):
        assert quartic.eval_w(1.0) == 0.0
        assert quartic.eval_w(-1.0) == 0.0
        assert quartic.eval_w(0.0) == pytest.approx(0.25)
        assert quartic.eval_ddw(1.0) == pytest.approx(2.0)
        assert quartic.eval_ddw(0.0) == pytest.approx(-1.0)

    def test_scalar_in_scalar_out(self, quartic):
        assert isinstance(quartic.eval_dw(0.3), float)
        assert quartic.eval_dw(np.array([0.3, 0.4])).shape == (2,)

    @given(u=st.floats(min_value=-5.0, max_value=5.0, allow_nan=False))
    @settings(max_examples=100, deadline=None)
    def test_even_and_derivatives_consistent(self, u):
        p = Potential("quartic")
        assert p.eval_w(u) == pytest.approx(p.eval_w(-u), abs=1e-12)
        eps = 1e-6
        fd = (p.eval_w(u + eps) - p.eval_w(u - eps)) / (2 * eps)
        assert fd == pytest.approx(p.eval_dw(u), rel=1e-5, abs=1e-5)

    def test_scale_multiplies_curvature(self):
        p = Potential("quartic", scale=4.0)
        assert p.eval_ddw(1.0) == pytest.approx(8.0)
        assert p.validate()

    def test_validate_passes(self, quartic):
        assert quartic.validate()

    def test_bad_kind_and_scale(self):
        with pytest.raises(InvalidPotentialError):
            Potential("sextic")
        with pytest.raises(InvalidPotentialError):
            Potential("quartic", scale=-1.0)


class TestTabulated:
    def test_matches_quartic(self, tmp_path, quartic):
        p = Potential.from_csv(quartic_table(tmp_path / "w.csv"))
        u = np.linspace(-2.5, 2.5, 77)
        assert np.allclose(p.eval_w(u), quartic.eval_w(u), atol=1e-8)
        assert np.allclose(p.eval_dw(u), quartic.eval_dw(u), atol=1e-6)
        assert p.validate()

    def test_query_outside_table(self, tmp_path):
        p = Potential.from_csv(quartic_table(tmp_path / "w.csv", lo=-2.0, hi=2.0))
        with pytest.raises(PotentialDomainError):
            p.eval_w(2.5)

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        write_csv(path, [[0.0, 1.0], [1.0, 2.0]], ("x", "y"))
        with pytest.raises(InvalidPotentialError):
            Potential.from_csv(path)

    def test_not_even_rejected(self, tmp_path):
        u = np.linspace(-3.0, 3.0, 601)
        w = 0.25 * (1 - u ** 2) ** 2 + 0.1 * u
        path = tmp_path / "odd.csv"
        write_csv(path, [u, w, (u ** 2 - 1) * u + 0.1, 3 * u ** 2 - 1], ("u", "w", "dw", "ddw"))
        with pytest.raises(InvalidPotentialError):
            Potential.from_csv(path).validate()


class TestConvexityConstants:
    """c, q*, W̄ сдвинутой квартики"""

    def test_shifted_quartic(self, quartic):
        constants = lemma41_constants(quartic.shifted(), m0=2.5)
        assert constants.c == pytest.approx(1.0)
        # W''(1 + q) >= 1 ⇔ |1 + q| >= sqrt(2/3)
        assert constants.q_star == pytest.approx(1.0 - np.sqrt(2.0 / 3.0), abs=2e-4)
        assert constants.w_bar == pytest.approx(0.25 * (1 - 3.5 ** 2) ** 2, rel=1e-6)

    def test_convexity_holds_below_q_star(self, quartic):
        p = quartic.shifted()
        constants = lemma41_constants(p, m0=2.5)
        q = np.linspace(-constants.q_star, constants.q_star, 501)
        assert np.all(p.eval_ddw(q) >= constants.c_sq - 1e-9)
        assert np.all(np.sign(q) * p.eval_dw(q) >= constants.c_sq * np.abs(q) - 1e-9)

    def test_cached_on_potential(self, quartic):
        p = quartic.shifted()
        assert p.constants(2.5) is p.constants(2.5)

    def test_bad_m0(self, quartic):
        with pytest.raises(InvalidPotentialError):
            lemma41_constants(quartic.shifted(), m0=0.0)

    def test_unshifted_well_is_not_convex(self, quartic):
        with pytest.raises(InvalidPotentialError):
            lemma41_constants(quartic, m0=2.5)
