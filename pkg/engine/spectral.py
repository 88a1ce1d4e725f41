import logging
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal, solve_banded
from tqdm import tqdm

from engine.energy import El_energy, norm_1l, norm_l
from engine.errors import EigenConvergenceError, GridTooShortError

logger = logging.getLogger(__name__)

PARITIES = ("even", "odd")


@dataclass
class TridiagonalOperator:
    """L = -d²/ds² + V(s) на узлах s_i = i h, |i| < n, с нулём Дирихле в ±l"""

    s: np.ndarray
    h: float
    potential_diag: np.ndarray

    @property
    def l(self):
        return float(self.s[-1] + self.h)

    @property
    def diag(self):
        return 2.0 / self.h ** 2 + self.potential_diag

    @property
    def off(self):
        return np.full(self.s.size - 1, -1.0 / self.h ** 2)

    @property
    def center(self):
        return self.s.size // 2

    @property
    def full_nodes(self):
        """Узлы вместе с концами ±l"""
        return np.concatenate([[self.s[0] - self.h], self.s, [self.s[-1] + self.h]])

    def apply(self, v):
        out = self.diag * v
        out[1:] += self.off * v[:-1]
        out[:-1] += self.off * v[1:]
        return out

    @classmethod
    def constant(cls, kappa, l, h):
        n = int(round(l / h))
        s = np.arange(-n + 1, n) * h
        return cls(s=s, h=float(h), potential_diag=np.full(s.size, float(kappa)))


def build_operator(pr, l, h):
    n = int(round(l / h))
    if n < 2:
        raise GridTooShortError(f"Spectral grid too short: l={l}, h={h}")
    s = np.arange(-n + 1, n) * h
    potential_diag = pr.potential.eval_ddw(pr.eval(s))
    logger.debug(f"Operator built on [-{n * h}, {n * h}] with {s.size} interior nodes")
    return TridiagonalOperator(s=s, h=float(h), potential_diag=potential_diag)


def _half_problem(op, parity):
    """Полуинтервал s >= 0; для чётной задачи симметризация первой пары"""
    c = op.center
    d = op.diag[c:].copy()
    e = op.off[c:].copy()
    if parity == "odd":
        return d[1:], e[1:]
    e[0] = -np.sqrt(2.0) / op.h ** 2
    return d, e


def _inverse_iteration(d, e, lam, vec, tol=1e-10, max_sweeps=50):
    n = d.size
    shift = lam - 1e-9 * max(1.0, abs(lam))
    banded = np.zeros((3, n))
    banded[0, 1:] = e
    banded[1] = d - shift
    banded[2, :-1] = e
    x = vec / np.linalg.norm(vec)
    for sweep in range(max_sweeps):
        y = solve_banded((1, 1), banded, x)
        x = y / np.linalg.norm(y)
        ax = d * x
        ax[1:] += e * x[:-1]
        ax[:-1] += e * x[1:]
        new_lam = float(x @ ax)
        if abs(new_lam - lam) < tol:
            return new_lam, x, sweep + 1
        lam = new_lam
    raise EigenConvergenceError(f"Inverse iteration did not reach {tol:.0e} in {max_sweeps} sweeps")


def parity_eigen(op, parity):
    """Нижнее собственное значение L на чётных или нечётных функциях"""
    if parity not in PARITIES:
        raise ValueError(f"Unknown parity '{parity}', expected one of {PARITIES}")
    d, e = _half_problem(op, parity)
    lam, vec = eigh_tridiagonal(d, e, select="i", select_range=(0, 0))
    lam, half, sweeps = _inverse_iteration(d, e, float(lam[0]), vec[:, 0])

    if parity == "even":
        half = half.copy()
        half[0] *= np.sqrt(2.0)
        full = np.concatenate([half[:0:-1], half])
        if full[op.center] < 0:
            full = -full
    else:
        full = np.concatenate([-half[::-1], [0.0], half])
        if half[0] < 0:
            full = -full
    full = full / np.sqrt(op.h * np.sum(full * full))
    logger.debug(f"{parity} eigenvalue {lam:.12f} after {sweeps} inverse-iteration sweeps")
    return lam, full


def quadratic_form(op, nu):
    """⟨Lν, ν⟩ со скалярным произведением трапеций; ν на op.s или на op.full_nodes"""
    nu = np.asarray(nu, dtype=float)
    if nu.size == op.s.size + 2:
        nu = nu[1:-1]
    return float(op.h * np.dot(op.apply(nu), nu))


@dataclass
class SpectralResult:
    l: float
    h: float
    s: np.ndarray
    lambda_even: float
    vec_even: np.ndarray
    lambda_odd: float
    vec_odd: np.ndarray
    essential_edge: float
    c1_sq: float
    q0: Optional[float] = None
    m_dprime: Optional[float] = None

    def as_dict(self):
        return {
            "l": self.l,
            "h": self.h,
            "lambda_even": self.lambda_even,
            "lambda_odd": self.lambda_odd,
            "essential_edge": self.essential_edge,
            "c1_sq": self.c1_sq,
            "q0": self.q0,
            "m_dprime": self.m_dprime,
        }


def default_m_dprime(pr, l=None):
    """2 e_l(ū), округлённое вверх"""
    return float(np.ceil(2.0 * pr.energy(l)))


def _w3_bar(p, reach, n=2001):
    t = np.linspace(-reach, reach, n)
    return float(np.max(np.abs(p.eval_dddw(t))))


def lemma31_constants(sr, M_dprime, p, q_cap=1.0, iterations=60):
    """(c1², q0, c²): q0 есть наибольшее q <= q_cap с √(2M″) W̄‴(q) √q <= 3 c1²"""
    c1_sq = 0.5 * sr.lambda_odd
    C = np.sqrt(2.0 * M_dprime)

    def holds(q):
        return C * _w3_bar(p, 1.0 + C * np.sqrt(q)) * np.sqrt(q) <= 3.0 * c1_sq

    if holds(q_cap):
        q0 = float(q_cap)
    else:
        lo, hi = 0.0, float(q_cap)
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            if holds(mid):
                lo = mid
            else:
                hi = mid
        q0 = lo
    logger.info(f"Spectral constants: c1^2={c1_sq:.6f}, q0={q0:.6f} (M''={M_dprime})")
    return c1_sq, q0, c1_sq


def spectrum(pr, l=20.0, h=0.005, M_dprime=None):
    op = build_operator(pr, l, h)
    lam_even, vec_even = parity_eigen(op, "even")
    lam_odd, vec_odd = parity_eigen(op, "odd")
    if lam_odd <= 0:
        raise EigenConvergenceError(f"Odd-sector eigenvalue {lam_odd:.3e} is not positive")
    m_dprime = M_dprime or default_m_dprime(pr, min(l, pr.l_max))
    result = SpectralResult(
        l=op.l,
        h=op.h,
        s=op.s,
        lambda_even=lam_even,
        vec_even=vec_even,
        lambda_odd=lam_odd,
        vec_odd=vec_odd,
        essential_edge=float(pr.potential.eval_ddw(1.0)),
        c1_sq=0.5 * lam_odd,
        m_dprime=m_dprime,
    )
    _, result.q0, _ = lemma31_constants(result, m_dprime, pr.potential)
    logger.info(f"Spectrum: lambda_even={lam_even:.3e}, lambda_odd={lam_odd:.6f}, edge={result.essential_edge}")
    return result


@dataclass
class Lemma31Sample:
    samples: int
    min_ratio: float
    lower_ok: bool
    far_min: float
    far_ok: bool
    curvature_min: float
    curvature_ok: bool

    @property
    def passed(self):
        return self.lower_ok and self.far_ok and self.curvature_ok


def random_odd_direction(s, l, rng, max_mode=8, width_range=(1.0, 4.0)):
    """Нечётная ν с ν(±l) = 0: синусы низких мод плюс локализованные в ядре"""
    nu = np.zeros_like(s)
    for m in range(1, max_mode + 1):
        nu += rng.normal() / m * np.sin(m * np.pi * s / l)
    width = rng.uniform(*width_range)
    nu += rng.normal() * 3.0 * s / width * np.exp(-(s / width) ** 2)
    nu[0] = nu[-1] = 0.0
    return nu


def sample_lemma31(sr, pr, n_samples=200, seed=0, M_dprime=None, margin=1e-3):
    """Выборочная проверка E_l(qν) >= ½ c1² q² (q <= q0), E_l(qν) >= ½ c1² q0² (q >= q0) и ⟨Lν,ν⟩ >= 2 c1²"""
    M_dprime = M_dprime or sr.m_dprime
    if M_dprime <= 1.0:
        raise ValueError(f"M'' must exceed 1 for unit-norm directions, got {M_dprime}")
    c1_sq, q0 = sr.c1_sq, sr.q0
    op = build_operator(pr, sr.l, sr.h)
    s = op.full_nodes
    h = op.h
    rng = np.random.default_rng(seed)

    ratios, far_values, curvatures = [], [], []
    accepted = drawn = 0
    with tqdm(total=n_samples, desc="Odd directions", disable=not sys.stderr.isatty()) as bar:
        while accepted < n_samples:
            drawn += 1
            if drawn > 100 * n_samples:
                raise ValueError(f"Constraint ball ‖ν‖_1,l <= {M_dprime} rejects almost every direction")
            nu = random_odd_direction(s, sr.l, rng)
            nu /= norm_l(nu, h)
            h1 = norm_1l(nu, h)
            if h1 > M_dprime:
                continue
            accepted += 1
            q = q0 * rng.uniform(0.05, 1.0)
            ratios.append(El_energy(q * nu, pr, s) / (0.5 * c1_sq * q * q))
            q_far = rng.uniform(q0, M_dprime / h1)
            far_values.append(El_energy(q_far * nu, pr, s))
            curvatures.append(quadratic_form(op, nu))
            bar.update(1)

    min_ratio = float(min(ratios))
    far_min = float(min(far_values))
    curvature_min = float(min(curvatures))
    sample = Lemma31Sample(
        samples=accepted,
        min_ratio=min_ratio,
        lower_ok=min_ratio >= 1.0 - margin,
        far_min=far_min,
        far_ok=far_min >= 0.5 * c1_sq * q0 * q0 * (1.0 - margin),
        curvature_min=curvature_min,
        curvature_ok=curvature_min >= 2.0 * c1_sq * (1.0 - 1e-9),
    )
    logger.info(f"Odd-direction energy sampling: {sample}")
    return sample
