from types import SimpleNamespace

import numpy as np
import pytest

from engine.energy import El_energy, el_gradient
from engine.errors import GridTooShortError
from engine.spectral import (
    TridiagonalOperator,
    build_operator,
    lemma31_constants,
    parity_eigen,
    quadratic_form,
    sample_lemma31,
    spectrum,
)


@pytest.fixture(scope="module")
def spectral_result(profile):
    return spectrum(profile, l=15.0, h=0.01)


class TestConstantOperator:
    """-d²/ds² + κ: дискретные собственные значения известны точно"""

    @pytest.mark.parametrize("kappa,l,h", [(0.0, 1.0, 0.05), (2.0, 3.0, 0.01), (-0.5, 5.0, 0.1)])
    def test_exact_eigenvalues(self, kappa, l, h):
        op = TridiagonalOperator.constant(kappa, l, h)
        lam_even, _ = parity_eigen(op, "even")
        lam_odd, _ = parity_eigen(op, "odd")
        assert lam_even == pytest.approx(kappa + 4.0 / h ** 2 * np.sin(np.pi * h / (4 * l)) ** 2, rel=1e-8, abs=1e-9)
        assert lam_odd == pytest.approx(kappa + 4.0 / h ** 2 * np.sin(np.pi * h / (2 * l)) ** 2, rel=1e-8, abs=1e-9)

    def test_quadratic_form_of_eigenvector(self):
        op = TridiagonalOperator.constant(1.0, 2.0, 0.02)
        for parity in ("even", "odd"):
            lam, vec = parity_eigen(op, parity)
            assert quadratic_form(op, vec) == pytest.approx(lam, rel=1e-8)
            padded = np.concatenate([[0.0], vec, [0.0]])
            assert quadratic_form(op, padded) == pytest.approx(lam, rel=1e-8)

    def test_vectors_have_parity(self):
        op = TridiagonalOperator.constant(0.0, 2.0, 0.05)
        _, even = parity_eigen(op, "even")
        _, odd = parity_eigen(op, "odd")
        assert np.allclose(even, even[::-1], atol=1e-14)
        assert np.allclose(odd, -odd[::-1], atol=1e-14)
        assert even[op.center] > 0
        assert op.h * np.sum(even ** 2) == pytest.approx(1.0)

    def test_unknown_parity(self):
        with pytest.raises(ValueError):
            parity_eigen(TridiagonalOperator.constant(0.0, 1.0, 0.1), "mixed")

    def test_full_nodes_reach_ends(self):
        op = TridiagonalOperator.constant(0.0, 1.0, 0.1)
        assert op.full_nodes[0] == pytest.approx(-1.0)
        assert op.full_nodes[-1] == pytest.approx(1.0)
        assert op.l == pytest.approx(1.0)


class TestProfileSpectrum:
    """Для квартики L = -d² + 2 - 3 sech²(s/√2): собственные значения 0 и 3/2"""

    def test_values(self, spectral_result):
        assert spectral_result.lambda_even == pytest.approx(0.0, abs=1e-3)
        assert spectral_result.lambda_odd == pytest.approx(1.5, abs=1e-2)
        assert spectral_result.c1_sq == pytest.approx(0.5 * spectral_result.lambda_odd)
        assert spectral_result.essential_edge == pytest.approx(2.0)

    def test_even_vector_is_profile_derivative(self, spectral_result, profile):
        shape = profile.eval_deriv(spectral_result.s)
        shape = shape / np.sqrt(spectral_result.h * np.sum(shape ** 2))
        assert np.max(np.abs(shape - spectral_result.vec_even)) <= 1e-2

    def test_stable_in_l(self, profile, spectral_result):
        longer = spectrum(profile, l=20.0, h=0.01)
        assert longer.lambda_odd == pytest.approx(spectral_result.lambda_odd, abs=1e-6)
        assert longer.c1_sq == pytest.approx(spectral_result.c1_sq, abs=1e-6)

    def test_q0_positive_and_capped(self, spectral_result):
        assert 0.0 < spectral_result.q0 < 1.0
        assert spectral_result.m_dprime == 2.0

    def test_as_dict(self, spectral_result):
        data = spectral_result.as_dict()
        assert set(data) >= {"lambda_even", "lambda_odd", "c1_sq", "q0"}

    def test_grid_too_short(self, profile):
        with pytest.raises(GridTooShortError):
            build_operator(profile, 0.1, 0.1)


class TestLemmaConstants:
    def test_flat_third_derivative_keeps_cap(self):
        stub = SimpleNamespace(eval_dddw=lambda t: np.zeros_like(t))
        sr = SimpleNamespace(lambda_odd=1.5)
        c1_sq, q0, c_sq = lemma31_constants(sr, 4.0, stub, q_cap=0.7)
        assert c1_sq == pytest.approx(0.75)
        assert q0 == pytest.approx(0.7)
        assert c_sq == c1_sq

    def test_q0_satisfies_smallness(self, quartic):
        sr = SimpleNamespace(lambda_odd=1.5)
        _, q0, _ = lemma31_constants(sr, 2.0, quartic)
        C = 2.0
        w3 = 6.0 * (1.0 + C * np.sqrt(q0))
        assert C * w3 * np.sqrt(q0) <= 3.0 * 0.75 * (1 + 1e-9)

    def test_sampled_energy_bounds(self, spectral_result, profile):
        sample = sample_lemma31(spectral_result, profile, n_samples=200, seed=0)
        assert sample.samples == 200
        assert sample.passed
        assert sample.curvature_min >= spectral_result.lambda_odd * (1 - 1e-9)

    def test_small_constraint_ball_rejected(self, spectral_result, profile):
        with pytest.raises(ValueError):
            sample_lemma31(spectral_result, profile, n_samples=5, M_dprime=1.0)


class TestQuadraticExpansion:
    """E_l(qν)/q² → ½⟨Lν, ν⟩ при q → 0"""

    @pytest.fixture(scope="class")
    def setup(self, profile, spectral_result):
        op = build_operator(profile, 15.0, 0.01)
        nu = np.pad(spectral_result.vec_odd, 1)
        return op, nu

    @pytest.mark.parametrize("q", [1e-4, 1e-3])
    def test_centered_quotient(self, setup, profile, q):
        op, nu = setup
        expected = 0.5 * quadratic_form(op, nu)
        assert El_energy(q * nu, profile, op.full_nodes, centered=True) / q ** 2 == pytest.approx(expected, rel=1e-3)

    def test_symmetric_quotient(self, setup, profile):
        op, nu = setup
        q = 1e-4
        s = op.full_nodes
        even_part = (El_energy(q * nu, profile, s) + El_energy(-q * nu, profile, s)) / (2 * q * q)
        assert even_part == pytest.approx(0.5 * quadratic_form(op, nu), rel=1e-6)

    def test_centering_removes_linear_term(self, setup, profile):
        op, nu = setup
        s = op.full_nodes
        v = 1e-3 * nu
        linear = float(np.dot(el_gradient(profile, s), v))
        plain = El_energy(v, profile, s)
        assert El_energy(v, profile, s, centered=True) == pytest.approx(plain - linear, rel=1e-9, abs=1e-15)
        # дискретный ū не критичен, но невязка порядка h²
        assert np.max(np.abs(el_gradient(profile, s)[1:-1])) <= 1e-3 * op.h
