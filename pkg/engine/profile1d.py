import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from engine.energy import el_energy, trapezoid_weights
from engine.errors import GridTooShortError, InvalidPotentialError
from utils.helpers import fit_log_linear

logger = logging.getLogger(__name__)

# 1 - u = exp(-tau); дальше tau_cap значения W(u) теряют точность
TAU_CAP = 30.0
TAU_CHECK = 20.0
TAIL_FLOOR = 1e-12


@dataclass
class Profile1D:
    """Нечётный гетероклиник ū на равномерной сетке [-l_max, l_max]"""

    potential: object
    s: np.ndarray
    u: np.ndarray
    du: np.ndarray
    h: float
    l_max: float
    decay_k: Optional[float] = None
    decay_K: Optional[float] = None
    _u_spline: object = field(init=False, repr=False, compare=False)
    _du_spline: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        half = self.s >= -1e-12 * self.h
        s_pos, u_pos, du_pos = self.s[half], self.u[half], self.du[half]
        # монотонный кубический Эрмит: производные точные из первого интеграла
        self._u_spline = CubicHermiteSpline(s_pos, u_pos, du_pos)
        self._du_spline = PchipInterpolator(s_pos, du_pos)

    def eval(self, s):
        s = np.asarray(s, dtype=float)
        a = np.abs(s)
        value = np.where(a >= self.l_max, 1.0, self._u_spline(np.minimum(a, self.l_max)))
        value = np.sign(s) * value
        return float(value) if value.ndim == 0 else value

    def eval_deriv(self, s):
        s = np.asarray(s, dtype=float)
        a = np.abs(s)
        value = np.where(a >= self.l_max, 0.0, self._du_spline(np.minimum(a, self.l_max)))
        return float(value) if value.ndim == 0 else value

    def window(self, l):
        """Узлы с |s| <= l"""
        mask = np.abs(self.s) <= l + 1e-9 * self.h
        return self.s[mask], self.u[mask], self.du[mask]

    def energy(self, l=None):
        """e_l(ū)"""
        _, u, _ = self.window(self.l_max if l is None else l)
        return el_energy(u, self.potential, self.h)

    def equipartition(self):
        """(∫½ū'², ∫W(ū)) по формуле трапеций"""
        weights = trapezoid_weights(self.s.size) * self.h
        kinetic = float(np.sum(weights * 0.5 * self.du ** 2))
        potential = float(np.sum(weights * self.potential.eval_w(self.u)))
        return kinetic, potential

    def ode_residual(self):
        """max |ū'' - W'(ū)| во внутренних узлах (трёхточечная разность)"""
        second = (self.u[2:] - 2.0 * self.u[1:-1] + self.u[:-2]) / self.h ** 2
        return float(np.max(np.abs(second - self.potential.eval_dw(self.u[1:-1]))))


def _integrand(potential, tau):
    gap = np.exp(-tau)
    w = potential.eval_w(1.0 - gap)
    if np.any(w <= 0):
        bad = float((1.0 - gap)[np.argmin(w)])
        raise InvalidPotentialError(f"W(v) <= 0 at v = {bad:.6f} in (0, 1): no heteroclinic connection")
    return gap / np.sqrt(2.0 * w)


def _midpoint_cumulative(potential, tau_max, n):
    dtau = tau_max / n
    mids = (np.arange(n) + 0.5) * dtau
    return np.concatenate([[0.0], np.cumsum(_integrand(potential, mids) * dtau)])


def _inverse_quadrature(potential, tau_max, n0=20000, tol=1e-10, max_halvings=5):
    """s(u) = ∫ dv / sqrt(2W(v)) в переменной u = 1 - exp(-tau), с экстраполяцией Ричардсона"""
    n = n0
    coarse = _midpoint_cumulative(potential, tau_max, n)
    fine = _midpoint_cumulative(potential, tau_max, 2 * n)
    current = (4.0 * fine[::2] - coarse) / 3.0
    # при tau > TAU_CHECK округление 1 - exp(-tau) доминирует над ошибкой квадратуры
    checked = np.linspace(0.0, tau_max, n + 1) <= TAU_CHECK
    for _ in range(max_halvings):
        n *= 2
        coarse, fine = fine, _midpoint_cumulative(potential, tau_max, 2 * n)
        refined = (4.0 * fine[::2] - coarse) / 3.0
        change = float(np.max(np.abs(refined[::2] - current)[checked]))
        current = refined
        checked = np.linspace(0.0, tau_max, n + 1) <= TAU_CHECK
        logger.debug(f"Quadrature refinement n={n}: max change {change:.2e}")
        if change < tol:
            break
    else:
        logger.warning(f"Profile quadrature stopped at n={n} without reaching tolerance {tol:.0e}")
    return np.linspace(0.0, tau_max, n + 1), current


def heteroclinic(p, l_max=20.0, h=0.01):
    """Гетероклиник v'' = W'(v), v(0) = 0, v(+inf) = 1 через первый интеграл"""
    if p.shift != 0:
        raise InvalidPotentialError("heteroclinic expects the unshifted double well")
    if h <= 0 or l_max <= h:
        raise GridTooShortError(f"Invalid profile grid: l_max={l_max}, h={h}")
    w2 = p.eval_ddw(1.0)
    if w2 <= 0:
        raise InvalidPotentialError(f"W''(1) = {w2:.3e} <= 0")

    rate = np.sqrt(w2)
    tau_max = min(TAU_CAP, rate * l_max + 5.0)
    tau, s_nodes = _inverse_quadrature(p, tau_max)
    u_nodes = 1.0 - np.exp(-tau)
    du_nodes = np.sqrt(2.0 * np.maximum(p.eval_w(u_nodes), 0.0))

    n = int(round(l_max / h))
    s_pos = np.arange(n + 1) * h
    inside = s_pos <= s_nodes[-1]
    spline = CubicHermiteSpline(s_nodes, u_nodes, du_nodes)
    u_pos = np.ones_like(s_pos)
    u_pos[inside] = spline(s_pos[inside])
    if not np.all(inside):
        logger.debug(
            f"Profile saturated beyond s={s_nodes[-1]:.3f}; matching gap {1.0 - u_nodes[-1]:.1e} to the constant 1"
        )
    u_pos[0] = 0.0
    du_pos = np.sqrt(2.0 * np.maximum(p.eval_w(u_pos), 0.0))
    du_pos[~inside] = 0.0

    s = np.concatenate([-s_pos[:0:-1], s_pos])
    u = np.concatenate([-u_pos[:0:-1], u_pos])
    du = np.concatenate([du_pos[:0:-1], du_pos])
    profile = Profile1D(potential=p, s=s, u=u, du=du, h=float(h), l_max=float(n * h))

    try:
        k, K = decay_constants(profile)
        profile.decay_k, profile.decay_K = k, K
    except GridTooShortError as e:
        logger.warning(f"Decay constants unavailable: {str(e)}")

    logger.info(
        f"Heteroclinic built: l_max={profile.l_max}, h={h}, nodes={s.size}, k={profile.decay_k}, K={profile.decay_K}"
    )
    return profile


def decay_constants(pr):
    """(k, K): |ū-1| + |ū'| <= K exp(-k s) во всех узлах s >= 0"""
    half = pr.s >= 0
    s, u, du = pr.s[half], pr.u[half], pr.du[half]
    gap = np.abs(1.0 - u)
    if gap[-1] >= 1e-8:
        raise GridTooShortError(f"|ū(l_max) - 1| = {gap[-1]:.1e} >= 1e-8: profile grid too short")

    usable = np.nonzero(gap >= TAIL_FLOOR)[0]
    s_tail = float(s[usable[-1]]) if usable.size else 0.0
    s_half = 0.5 * s_tail
    window = (s >= s_half) & (s <= s_tail) & (gap >= TAIL_FLOOR)
    if np.count_nonzero(window) < 10:
        raise GridTooShortError(f"Only {np.count_nonzero(window)} usable tail samples for the decay fit")

    envelope = gap + np.abs(du)
    slope, _ = fit_log_linear(s[window], envelope[window])
    k = -slope
    K = float(np.max(envelope * np.exp(k * s)))
    logger.debug(f"Profile decay fit on s in [{s_half:.2f}, {s_tail:.2f}]: k={k:.5f}, K={K:.4f}")
    return float(k), K
