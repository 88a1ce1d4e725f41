import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from engine.comparison import fit_k0, pointwise_bound_check
from engine.errors import GeometryError, InsufficientSamplesError
from engine.geometry import distance_field
from engine.potential import lemma41_constants
from utils.helpers import fit_log_linear

logger = logging.getLogger(__name__)

MIN_SAMPLES = 20
SATURATED = 1e-14


@dataclass
class DecayFit:
    """Огибающая e <= K exp(-k d), выполненная в каждой сохранённой точке"""

    d: np.ndarray
    e: np.ndarray
    k: float
    K: float
    bin_width: float
    near_exclusion: float
    degenerate: bool = False

    def bound(self, d):
        d = np.asarray(d, dtype=float)
        if self.degenerate:
            return np.full(d.shape, self.K)
        return self.K * np.exp(-self.k * d)

    @property
    def envelope_holds(self):
        return bool(np.all(self.e <= self.bound(self.d) * (1.0 + 1e-12) + 1e-300))

    def as_dict(self):
        return {
            "k": self.k,
            "K": self.K,
            "samples": int(self.d.size),
            "bin_width": self.bin_width,
            "near_exclusion": self.near_exclusion,
            "degenerate": self.degenerate,
            "envelope_holds": self.envelope_holds,
        }


def bin_maxima(d, e, bin_width):
    """Максимум e в каждой непустой корзине по d и его абсцисса"""
    edges = np.arange(d.min(), d.max() + bin_width, bin_width)
    index = np.clip(np.digitize(d, edges) - 1, 0, max(edges.size - 2, 0))
    xs, ys = [], []
    for b in np.unique(index):
        members = np.nonzero(index == b)[0]
        best = members[np.argmax(e[members])]
        xs.append(d[best])
        ys.append(e[best])
    return np.array(xs), np.array(ys)


def fit_envelope(d, e, near_exclusion=0.0, bin_width=None):
    d = np.asarray(d, dtype=float).ravel()
    e = np.abs(np.asarray(e, dtype=float).ravel())
    keep = d > near_exclusion
    d, e = d[keep], e[keep]
    if d.size < MIN_SAMPLES:
        raise InsufficientSamplesError(
            f"Envelope fit needs at least {MIN_SAMPLES} samples beyond d={near_exclusion:.3f}, got {d.size}"
        )
    if bin_width is None:
        bin_width = max((d.max() - d.min()) / 50.0, 1e-12)

    if np.max(e) < SATURATED:
        logger.info("All samples below saturation floor: degenerate envelope, k = inf")
        return DecayFit(d, e, np.inf, float(np.max(e)), bin_width, near_exclusion, degenerate=True)

    xs, ys = bin_maxima(d, e, bin_width)
    usable = ys > SATURATED
    xs, ys = xs[usable], ys[usable]
    if np.unique(xs).size >= 2:
        slope, _ = fit_log_linear(xs, ys)
        k = -slope
    else:
        k = 0.0
    K = float(np.max(e * np.exp(k * d)))
    fit = DecayFit(d, e, float(k), K, float(bin_width), float(near_exclusion))
    logger.debug(f"Envelope fit over {d.size} samples ({xs.size} bins): k={fit.k:.5f}, K={fit.K:.5f}")
    return fit


def gradient_magnitude(f):
    """|∇_h u| центральными разностями во внутренних узлах"""
    grid = f.grid
    u = np.where(grid.defined, f.values, 0.0)
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2 * grid.h)
    gy[1:-1, :] = (u[2:, :] - u[:-2, :]) / (2 * grid.h)
    out = np.full(u.shape, np.nan)
    out[grid.interior] = np.hypot(gx, gy)[grid.interior]
    return out


@dataclass
class Theorem11Report:
    fit: DecayFit
    min_positive: float
    k_min: float
    gradient_mode: bool
    passed: bool
    continuum_rate: Optional[float] = None

    def as_dict(self):
        return {
            "check": "thm11",
            "pass": self.passed,
            "min_positive": self.min_positive,
            "k_min": self.k_min,
            "gradient_mode": self.gradient_mode,
            "continuum_rate": self.continuum_rate,
            "constants": self.fit.as_dict(),
        }


def check_theorem_1_1(u, pr=None, gradient_mode=False, k_min=1.0, tol=1e-8, near_exclusion=None, bin_width=None, dist=None):
    """|u - 1| (или |u - 1| + |∇u|) на Ω⁺ против d(x, ∂(Ω⁺))"""
    grid = u.grid
    h = grid.h
    near_exclusion = 2.0 * np.sqrt(2.0) * h if near_exclusion is None else near_exclusion
    bin_width = 4.0 * h if bin_width is None else bin_width
    dist = distance_field(grid, "positive") if dist is None else dist

    mask = grid.positive
    e = np.abs(u.values[mask] - 1.0)
    if gradient_mode:
        e = e + gradient_magnitude(u)[mask]
    d = dist.values[mask]
    min_positive = float(np.min(u.values[mask]))

    fit = fit_envelope(d, e, near_exclusion, bin_width)
    passed = (fit.degenerate or fit.k >= k_min) and min_positive >= -10.0 * tol and fit.envelope_holds
    rate = float(np.sqrt(pr.potential.eval_ddw(1.0))) if pr is not None else None
    report = Theorem11Report(fit, min_positive, k_min, gradient_mode, bool(passed), rate)
    logger.info(f"Decay check on the positive half: k={fit.k:.4f} (min {k_min}), min u={min_positive:.3e}, pass={passed}")
    return report


@dataclass
class ProfileDistanceCurve:
    R: np.ndarray
    q_emp: np.ndarray
    eps_target: float
    monotone: bool
    strict_decreases: int
    passed: bool

    def as_dict(self):
        return {
            "check": "thm12",
            "pass": self.passed,
            "eps_target": self.eps_target,
            "q_emp_at_r_max": float(self.q_emp[-1]),
            "r_max": float(self.R[-1]),
            "monotone": self.monotone,
            "strict_decreases": self.strict_decreases,
            "constants": {
                "eps_target": self.eps_target,
                "r_max": float(self.R[-1]),
                "q_emp_at_r_max": float(self.q_emp[-1]),
            },
        }


def _tail_max(d, values, radii):
    """max values по узлам с d >= R для каждого R; NaN на пустых множествах"""
    order = np.argsort(d)
    d_sorted = d[order]
    suffix = np.maximum.accumulate(values[order][::-1])[::-1]
    start = np.searchsorted(d_sorted, radii - 1e-12, side="left")
    out = np.full(radii.size, np.nan)
    present = start < d_sorted.size
    out[present] = suffix[start[present]]
    return out


def check_theorem_1_2(u, pr, eps_target=1e-2, r_max=None, bin_width=None, dist=None):
    """q_emp(R) = max |u(x) - ū(x1)| по узлам с d(x, ∂Ω) >= R"""
    grid = u.grid
    dist = distance_field(grid, "whole") if dist is None else dist
    mask = grid.interior
    d = dist.values[mask]
    deviation = np.abs(u.values[mask] - pr.eval(grid.X1[mask]))

    bin_width = 4.0 * grid.h if bin_width is None else bin_width
    depth = float(np.max(d))
    r_max = depth if r_max is None else float(r_max)
    if r_max > depth + 1e-12:
        raise InsufficientSamplesError(
            f"No interior node at distance >= r_max={r_max:.3f} from the boundary (deepest node at {depth:.3f})"
        )
    radii = np.arange(0.0, r_max + 1e-12, bin_width)
    if radii[-1] < r_max - 1e-12:
        radii = np.append(radii, r_max)
    q_emp = _tail_max(d, deviation, radii)

    steps = np.diff(q_emp)
    monotone = bool(np.all(steps <= 0.0))
    strict = int(np.count_nonzero(steps < 0.0))
    at_end = q_emp[-1] <= eps_target
    # строгое убывание требуется, только если кривая начинается выше цели
    needs_decay = q_emp[0] > eps_target
    passed = bool(at_end and monotone and (strict >= 3 or not needs_decay))
    curve = ProfileDistanceCurve(radii, q_emp, eps_target, monotone, strict, passed)
    logger.info(
        f"Profile distance curve: q_emp({r_max:.2f})={q_emp[-1]:.3e} "
        f"(target {eps_target}), strict decreases={strict}, pass={passed}"
    )
    return curve


def lemma32_hypothesis(s, f, k, K, tol=1e-9):
    """|f| + |f'| <= K exp(-k|s|)"""
    s = np.asarray(s, dtype=float)
    f = np.asarray(f, dtype=float)
    df = np.gradient(f, s)
    return bool(np.all(np.abs(f) + np.abs(df) <= K * np.exp(-k * np.abs(s)) * (1.0 + tol) + tol))


def sup_bound(s, f, K):
    """(‖f‖_∞, (3K)^{1/3} ‖f‖_l^{2/3}) с весами трапеций"""
    s = np.asarray(s, dtype=float)
    f = np.asarray(f, dtype=float)
    h = float(s[1] - s[0])
    weights = np.ones(s.size)
    weights[0] = weights[-1] = 0.5
    norm = np.sqrt(h * np.sum(weights * f * f))
    return float(np.max(np.abs(f))), float((3.0 * K) ** (1.0 / 3.0) * norm ** (2.0 / 3.0))


def check_lemma_3_2(s, f, k_K):
    """‖f‖_∞ <= (3K)^{1/3} ‖f‖_l^{2/3}"""
    k, K = k_K
    sup, bound = sup_bound(s, f, K)
    holds = sup <= bound * (1.0 + 1e-12)
    if not lemma32_hypothesis(s, f, k, K):
        logger.warning(f"Decay hypothesis |f| + |f'| <= {K} exp(-{k}|s|) fails on the sample")
    logger.debug(f"Sup bound: {sup:.6e} <= {bound:.6e} -> {holds}")
    return bool(holds)


def lemma32_rows(decomp):
    """check_lemma_3_2 на отклонениях строк v - ū, K = max(|f| + |f'|) при k = 0"""
    failed = []
    rows = {"x2": [], "sup": [], "bound": [], "K": []}
    for x2, s, v, ubar in zip(decomp.x2, decomp.s, decomp.v, decomp.ubar):
        if s.size < 3:
            continue
        f = v - ubar
        K = float(np.max(np.abs(f) + np.abs(np.gradient(f, s))))
        sup, bound = sup_bound(s, f, K)
        for key, value in zip(("x2", "sup", "bound", "K"), (float(x2), sup, bound, K)):
            rows[key].append(value)
        if not check_lemma_3_2(s, f, (0.0, K)):
            failed.append(float(x2))
    checked = len(rows["x2"])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.array(rows["sup"]) / np.array(rows["bound"])
    finite = ratios[np.isfinite(ratios)]
    result = {
        "check": "lemma32",
        "pass": not failed,
        "rows_checked": checked,
        "failed_rows": failed,
        "constants": {"k": 0.0, "max_ratio": float(np.max(finite)) if finite.size else 0.0},
        "rows": rows,
    }
    logger.info(f"Sup bound on {checked} deviation rows: {len(failed)} failures")
    return result


@dataclass
class LevelSetDiagnostic:
    """σ_j = площадь {|u| > q̄} ∩ B(x0, R̄ + jλ)"""

    center: tuple
    lam: float
    q_bar: float
    r_bar: float
    sigma: np.ndarray

    @property
    def ratios(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.sigma[1:] / self.sigma[:-1]

    def growth_demand_met(self, k, K):
        """(1 + k/K)^{j-1} σ_0 <= σ_j для всех j >= 1"""
        j = np.arange(1, self.sigma.size)
        return bool(np.all((1.0 + k / K) ** (j - 1) * self.sigma[0] <= self.sigma[1:] * (1.0 + 1e-12)))

    def as_dict(self):
        return {
            "check": "sigma",
            "pass": bool(self.sigma[0] == 0.0),
            "center": list(self.center),
            "lambda": self.lam,
            "q_bar": self.q_bar,
            "r_bar": self.r_bar,
            "sigma": self.sigma,
            "constants": {
                "center": list(self.center),
                "lambda": self.lam,
                "q_bar": self.q_bar,
                "r_bar": self.r_bar,
                "sigma_0": float(self.sigma[0]),
            },
        }


def level_set_growth(u, x0, q_bar, lam, j_max=3, r_bar=0.0):
    grid = u.grid
    r = np.hypot(grid.X1 - x0[0], grid.X2 - x0[1])
    outer = r_bar + (j_max + 1) * lam
    ball = r <= outer + grid.eps
    if (
        x0[0] - outer <= grid.x1[0] or x0[0] + outer >= grid.x1[-1]
        or x0[1] - outer <= grid.x2[0] or x0[1] + outer >= grid.x2[-1]
        or np.any(ball & ~grid.interior)
    ):
        raise GeometryError(f"Ball of radius {outer} around {tuple(x0)} leaves the domain interior")

    above = np.abs(np.nan_to_num(u.values)) > q_bar
    sigma = np.array([
        np.count_nonzero(above & (r <= r_bar + j * lam + grid.eps)) * grid.h ** 2
        for j in range(j_max + 1)
    ], dtype=float)
    diagnostic = LevelSetDiagnostic(tuple(float(x) for x in x0), float(lam), float(q_bar), float(r_bar), sigma)
    logger.info(f"Level-set areas around {diagnostic.center}: {np.array2string(sigma, precision=4)}")
    return diagnostic


def shifted_positive_part(u):
    """û = u - 1 на узлах с x1 > 0, NaN на остальных"""
    grid = u.grid
    values = grid.empty_values()
    mask = grid.defined & (grid.X1 > grid.eps)
    values[mask] = u.values[mask] - 1.0
    return u.with_values(values)


def saturation_radius(u_hat, dist, q):
    """Наибольшее d(x) среди внутренних узлов с |û(x)| >= q; 0, если таких нет"""
    mask = u_hat.grid.interior & np.isfinite(u_hat.values) & np.isfinite(dist.values)
    hits = mask & (np.abs(u_hat.values) >= q)
    return float(np.max(dist.values[hits])) if np.any(hits) else 0.0


@dataclass
class RqCurve:
    q: np.ndarray
    R: np.ndarray
    monotone: bool
    k: Optional[float] = None
    K: Optional[float] = None
    fitted: int = 0

    def as_dict(self):
        return {"monotone": self.monotone, "k": self.k, "K": self.K, "fitted_points": self.fitted}


def empirical_Rq_curve(u, dist, q_grid):
    q_grid = np.sort(np.asarray(q_grid, dtype=float))
    R = np.array([saturation_radius(u, dist, q) for q in q_grid])
    monotone = bool(np.all(np.diff(R) <= 0.0))

    mask = u.grid.interior & np.isfinite(dist.values)
    d_max = float(np.max(dist.values[mask]))
    # R = d_max означает, что уровень достигнут в самой глубокой точке
    usable = (R > 0.0) & (R < d_max - u.grid.h)
    curve = RqCurve(q_grid, R, monotone, fitted=int(np.count_nonzero(usable)))
    if np.unique(R[usable]).size >= 2:
        slope, _ = fit_log_linear(R[usable], q_grid[usable])
        curve.k = -slope
        curve.K = float(np.max(q_grid[usable] * np.exp(curve.k * R[usable])))
    logger.info(f"R(q) curve over {q_grid.size} levels: monotone={monotone}, k={curve.k}")
    return curve


@dataclass
class Theorem14Report:
    R0: float
    q_star: float
    c: float
    k0: float
    K0: float
    bound: object
    rq: RqCurve
    sigma: Optional[LevelSetDiagnostic] = None
    notes: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(self.bound.passed and self.rq.monotone)

    def as_dict(self):
        return {
            "check": "thm14",
            "pass": self.passed,
            "constants": {"R0": self.R0, "q_star": self.q_star, "c": self.c, "k0": self.k0, "K0": self.K0},
            "pointwise": self.bound.as_dict(),
            "rq": self.rq.as_dict(),
            "notes": self.notes,
        }


def check_theorem_1_4(u, pr, m0, n=2, R_range=(5.0, 20.0), points=31, c=None, q_grid=None, ode_h=0.01):
    """Сдвинутая задача û = u - 1 на Ω⁺: R0 по измерению, затем |û| <= φ(0, d - R0)"""
    u_hat = shifted_positive_part(u)
    dist = distance_field(u.grid, "positive")
    constants = lemma41_constants(pr.potential.shifted(), m0)
    c = constants.c if not c else float(c)
    R0 = saturation_radius(u_hat, dist, constants.q_star)
    bound = pointwise_bound_check(u_hat, dist, c, constants.q_star, R0, n=n, h=ode_h)
    k0, K0 = fit_k0(c, constants.q_star, n, R_range, points, ode_h)
    if q_grid is None:
        q_grid = np.geomspace(1e-2, min(0.3, constants.q_star), 12)
    rq = empirical_Rq_curve(u_hat, dist, q_grid)
    report = Theorem14Report(R0, constants.q_star, c, k0, K0, bound, rq, notes={"R_range": list(R_range), "n": n})
    logger.info(f"Shifted-problem check: R0={R0:.3f}, q*={constants.q_star:.4f}, c={c:.4f}, pass={report.passed}")
    return report


@dataclass
class VerifyReport:
    checks: dict = field(default_factory=dict)

    def add(self, name, result):
        self.checks[name] = result

    @property
    def passed(self):
        return all(bool(r.get("pass", False)) for r in self.checks.values())

    def as_dict(self):
        return {"pass": self.passed, "checks": self.checks}
