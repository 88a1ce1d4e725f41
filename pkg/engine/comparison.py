import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from engine.errors import ComparisonOverflowError
from utils.helpers import fit_log_linear

logger = logging.getLogger(__name__)

LOG_MODE_THRESHOLD = 50.0
OVERFLOW_THRESHOLD = 700.0


@dataclass
class ComparisonSolution:
    """Радиальное решение Δφ = c²φ в шаре B_R, φ = q̄ на границе"""

    c: float
    q_bar: float
    R: float
    n: int
    r: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    log_mode: bool = False
    k0: Optional[float] = None
    R_bar: Optional[float] = None

    @property
    def center(self):
        return float(self.phi[0])

    def value_at(self, radius):
        return float(np.interp(radius, self.r, self.phi))

    def fit_decay(self, R_range=(5.0, 20.0), points=31, h=0.01):
        """k0 по кривой R -> φ(0, R) с теми же c, q̄, n; сохраняется в self.k0"""
        k0, K0 = fit_k0(self.c, self.q_bar, self.n, R_range, points, h)
        self.k0 = k0
        return k0, K0

    def ode_residual(self):
        """max |φ'' + (n-1)/r φ' - c²φ| во внутренних точках (центральные разности)"""
        h = self.r[1] - self.r[0]
        r = self.r[1:-1]
        second = (self.phi[2:] - 2.0 * self.phi[1:-1] + self.phi[:-2]) / h ** 2
        first = (self.phi[2:] - self.phi[:-2]) / (2.0 * h)
        return float(np.max(np.abs(second + (self.n - 1) * first / r - self.c ** 2 * self.phi[1:-1])))


def r_bar(q_star, q_bar, m0):
    """R̄ = (q* - q̄) / M₀"""
    return (q_star - q_bar) / m0


def _series(c, n, r):
    c2 = c * c
    phi = 1.0 + c2 * r ** 2 / (2 * n) + c2 * c2 * r ** 4 / (8 * n * (n + 2))
    dphi = c2 * r / n + c2 * c2 * r ** 3 / (2 * n * (n + 2))
    return phi, dphi


def radial_solve(c, q_bar, R, n=2, h=0.01, log_mode=None, q_star=None, m0=None):
    if c <= 0 or q_bar <= 0 or R <= 0:
        raise ValueError(f"radial_solve needs c, q_bar, R > 0 (got c={c}, q_bar={q_bar}, R={R})")
    if n not in (1, 2, 3):
        raise ValueError(f"Dimension n must be 1, 2 or 3, got {n}")
    cR = c * R
    if log_mode is None:
        log_mode = cR > LOG_MODE_THRESHOLD
    if not log_mode and cR > OVERFLOW_THRESHOLD:
        raise ComparisonOverflowError(f"cR = {cR:.1f} > {OVERFLOW_THRESHOLD}: use the log-scaled mode")

    steps = max(int(np.ceil(R / h)), 2)
    r = np.linspace(0.0, R, steps + 1)
    # ряд у r = 0 обходит особенность (n-1)/r
    r0 = min(r[1], 1e-3 / c)
    tail = r[r > r0]
    t_eval = np.concatenate([[r0], tail])

    if log_mode:
        # p = φ'/φ: p' = c² - p² - (n-1) p / r, L' = p, L = log φ - log φ(0)
        phi0, dphi0 = _series(c, n, r0)
        sol = solve_ivp(
            lambda t, y: [c * c - y[0] ** 2 - (n - 1) * y[0] / t, y[0]],
            (r0, R), [dphi0 / phi0, np.log(phi0)], t_eval=t_eval, method="DOP853", rtol=1e-12, atol=1e-14,
        )
        p_tail, log_tail = sol.y[0][1:], sol.y[1][1:]
        head = r[r <= r0]
        phi_head, dphi_head = _series(c, n, head)
        log_phi = np.concatenate([np.log(phi_head), log_tail])
        p = np.concatenate([dphi_head / phi_head, p_tail])
        log_phi = log_phi - log_phi[-1] + np.log(q_bar)
        phi = np.exp(log_phi)
        dphi = p * phi
    else:
        phi0, dphi0 = _series(c, n, r0)
        sol = solve_ivp(
            lambda t, y: [y[1], c * c * y[0] - (n - 1) * y[1] / t],
            (r0, R), [phi0, dphi0], t_eval=t_eval, method="DOP853", rtol=1e-12, atol=1e-14,
        )
        head = r[r <= r0]
        phi_head, dphi_head = _series(c, n, head)
        phi = np.concatenate([phi_head, sol.y[0][1:]])
        dphi = np.concatenate([dphi_head, sol.y[1][1:]])
        scale = q_bar / phi[-1]
        phi, dphi = phi * scale, dphi * scale
    if not sol.success:
        raise ComparisonOverflowError(f"Radial integration failed: {sol.message}")
    phi[-1] = q_bar

    rb = r_bar(q_star, q_bar, m0) if q_star is not None and m0 else None
    solution = ComparisonSolution(c=c, q_bar=q_bar, R=R, n=n, r=r, phi=phi, dphi=dphi, log_mode=log_mode, R_bar=rb)
    logger.debug(f"Radial solve c={c}, R={R}, n={n}, log_mode={log_mode}: phi(0)={solution.center:.6e}")
    return solution


def center_values(c, q_bar, n, radii, h=0.01):
    return np.array([radial_solve(c, q_bar, R, n, h).center for R in radii])


def fit_k0(c, q_bar, n, R_range, points=31, h=0.01):
    """(k0, K0): φ(0, R) <= K0 exp(-k0 R) на окне R_range"""
    radii = np.linspace(R_range[0], R_range[1], points)
    centers = center_values(c, q_bar, n, radii, h)
    slope, _ = fit_log_linear(radii, centers)
    k0 = -slope
    K0 = float(np.max(centers * np.exp(k0 * radii)))
    logger.info(f"Comparison decay fit on R in [{R_range[0]}, {R_range[1]}]: k0={k0:.5f}, K0={K0:.5f}")
    return float(k0), K0


def monotonicity_check(c, q_bar, n, lam, R1, R2, h=0.01):
    """R1 < R2 ⇒ φ(R1 - λ; R1) > φ(R2 - λ; R2)"""
    first = radial_solve(c, q_bar, R1, n, h).value_at(R1 - lam)
    second = radial_solve(c, q_bar, R2, n, h).value_at(R2 - lam)
    if R1 == R2 or lam == 0:
        return abs(first - second) <= 1e-12
    return first > second if R1 < R2 else second > first


@dataclass
class PointwiseBoundReport:
    passed: bool
    R0: float
    R: np.ndarray
    empirical: np.ndarray
    phi0: np.ndarray
    worst_margin: float
    nodes_checked: int

    def as_dict(self):
        return {
            "passed": self.passed,
            "R0": self.R0,
            "worst_margin": self.worst_margin,
            "nodes_checked": self.nodes_checked,
        }


def pointwise_bound_check(f, dist, c, q_star, R0, n=2, R_min=1.0, slack=None, step=0.05, h=0.01):
    """|û(x)| <= φ(0, d(x) - R0) + slack для узлов с d(x) >= R0 + R_min"""
    grid = f.grid
    slack = 10.0 * grid.h ** 2 if slack is None else slack
    mask = np.isfinite(f.values) & np.isfinite(dist.values) & grid.interior
    d = dist.values[mask]
    values = np.abs(f.values[mask])
    eligible = d >= R0 + R_min
    if not np.any(eligible):
        logger.warning(f"No nodes at distance >= R0 + {R_min} = {R0 + R_min:.3f}")
        return PointwiseBoundReport(True, R0, np.array([]), np.array([]), np.array([]), np.inf, 0)

    reach = float(np.max(d[eligible]) - R0)
    radii = np.arange(R_min, reach + step, step)
    log_centers = np.log(center_values(c, q_star, n, radii, h))
    bound = np.exp(np.interp(d[eligible] - R0, radii, log_centers))
    margins = bound + slack - values[eligible]
    worst = float(np.min(margins))

    empirical = np.array([float(np.max(values[d >= R0 + R], initial=0.0)) for R in radii])
    report = PointwiseBoundReport(
        passed=worst >= 0.0,
        R0=float(R0),
        R=radii,
        empirical=empirical,
        phi0=np.exp(log_centers),
        worst_margin=worst,
        nodes_checked=int(np.count_nonzero(eligible)),
    )
    logger.info(f"Pointwise comparison bound: passed={report.passed}, worst margin {worst:.3e} over {report.nodes_checked} nodes")
    return report
