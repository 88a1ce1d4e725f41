import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from engine.errors import EnergyRegionError, GeometryError

logger = logging.getLogger(__name__)

NU_FLOOR = 1e-14


@dataclass
class EnergyBreakdown:
    gradient_part: float
    potential_part: float
    total: float
    region: str = "domain"

    def as_dict(self):
        return {
            "gradient_part": self.gradient_part,
            "potential_part": self.potential_part,
            "total": self.total,
            "region": self.region,
        }


def trapezoid_weights(n):
    weights = np.ones(n)
    if n > 1:
        weights[0] = weights[-1] = 0.5
    return weights


def cell_mask(region):
    """Ячейки, у которых все четыре угла лежат в region"""
    return region[:-1, :-1] & region[1:, :-1] & region[:-1, 1:] & region[1:, 1:]


def _cell_parts(values, p, h):
    dx = values[:, 1:] - values[:, :-1]
    dy = values[1:, :] - values[:-1, :]
    # ½|∇u|² h²: среднее двух горизонтальных и двух вертикальных разностей
    gradient = 0.25 * (dx[:-1] ** 2 + dx[1:] ** 2) + 0.25 * (dy[:, :-1] ** 2 + dy[:, 1:] ** 2)
    w = p.eval_w(values)
    potential = 0.25 * h * h * (w[:-1, :-1] + w[1:, :-1] + w[:-1, 1:] + w[1:, 1:])
    return gradient, potential


def total_energy(f, p, region=None, tag=None):
    """J_A(u) = ∫_A ½|∇u|² + W(u), A: замкнутое множество узлов"""
    grid = f.grid
    if region is None:
        region = grid.defined
        tag = tag or "domain"
    if np.any(region & ~grid.defined) or np.any(~np.isfinite(f.values[region])):
        raise EnergyRegionError("Energy region touches nodes without finite values")

    values = np.where(region, f.values, 0.0)
    cells = cell_mask(region)
    gradient, potential = _cell_parts(values, p, grid.h)
    gradient_part = float(np.sum(np.where(cells, gradient, 0.0)))
    potential_part = float(np.sum(np.where(cells, potential, 0.0)))
    return EnergyBreakdown(gradient_part, potential_part, gradient_part + potential_part, tag or "region")


def laplacian(values, h):
    lap = np.full(values.shape, np.nan)
    lap[1:-1, 1:-1] = (
        values[1:-1, 2:] + values[1:-1, :-2] + values[2:, 1:-1] + values[:-2, 1:-1] - 4.0 * values[1:-1, 1:-1]
    ) / (h * h)
    return lap


def energy_gradient(f, p):
    """r = -Δ_h u + W'(u) во внутренних узлах; ∂J/∂u_i = h² r_i"""
    grid = f.grid
    values = np.where(grid.defined, f.values, 0.0)
    residual = grid.empty_values()
    lap = laplacian(values, grid.h)
    residual[grid.interior] = -lap[grid.interior] + p.eval_dw(values[grid.interior])
    return f.with_values(residual)


def el_energy(v, p, h):
    """e_l(w) на равномерной сетке: разностный градиент плюс трапеции для W"""
    v = np.asarray(v, dtype=float)
    kinetic = 0.5 * np.sum(np.diff(v) ** 2) / h
    potential = h * np.sum(trapezoid_weights(v.size) * p.eval_w(v))
    return float(kinetic + potential)


def el_gradient(pr, s):
    """∇e_l(ū) на сетке s: дискретная невязка профиля, O(h²) внутри"""
    s = np.asarray(s, dtype=float)
    h = float(s[1] - s[0])
    ubar = pr.eval(s)
    du = np.diff(ubar) / h
    grad = h * trapezoid_weights(s.size) * pr.potential.eval_dw(ubar)
    grad[:-1] -= du
    grad[1:] += du
    return grad


def El_energy(v, pr, s, centered=False):
    """E_l(v) = e_l(ū + v) - e_l(ū), разность собрана поузлово

    centered=True вычитает ⟨∇e_l(ū), v⟩: дискретный ū не критичен для e_l,
    и без поправки E_l(qν)/q² содержит член порядка h²/q.
    """
    v = np.asarray(v, dtype=float)
    s = np.asarray(s, dtype=float)
    h = float(s[1] - s[0])
    ubar = pr.eval(s)
    dv, du = np.diff(v), np.diff(ubar)
    kinetic = 0.5 * np.sum(dv * (2.0 * du + dv)) / h
    p = pr.potential
    potential = h * np.sum(trapezoid_weights(v.size) * (p.eval_w(ubar + v) - p.eval_w(ubar)))
    if centered:
        return float(0.5 * np.sum(dv * dv) / h + potential - h * np.sum(trapezoid_weights(v.size) * p.eval_dw(ubar) * v))
    return float(kinetic + potential)


def norm_l(w, h):
    return float(np.sqrt(h * np.sum(trapezoid_weights(w.size) * w * w)))


def norm_1l(w, h):
    """‖w‖_{1,l}: L² плюс разностная производная"""
    return float(np.sqrt(norm_l(w, h) ** 2 + np.sum(np.diff(w) ** 2) / h))


@dataclass
class SliceDecomposition:
    """v(·, x2) = ū + q(x2) ν(·, x2) по строкам сетки"""

    h: float
    rows: np.ndarray
    x2: np.ndarray
    l: np.ndarray
    q: np.ndarray
    s: List[np.ndarray]
    v: List[np.ndarray]
    ubar: List[np.ndarray]
    nu: List[Optional[np.ndarray]]
    orthogonality_residual: float = 0.0
    uniform: bool = False

    @property
    def defined(self):
        return np.array([nu is not None for nu in self.nu], dtype=bool)


def _row_span(defined_row, nx):
    """Наибольший симметричный отрезок заданных узлов вокруг x1 = 0"""
    if not defined_row[nx]:
        return -1
    span = 0
    while nx + span + 1 < defined_row.size and defined_row[nx + span + 1] and defined_row[nx - span - 1]:
        span += 1
    return span


def slice_decompose(f, pr, cylinder=None):
    grid = f.grid
    nx, h = grid.nx, grid.h
    if cylinder is not None:
        region = cylinder.check_inside(grid)
        rows = np.nonzero(np.any(region, axis=1))[0]
        span = int(np.floor(cylinder.l / h + 1e-9))
        if span < 1 or span > nx:
            raise GeometryError(f"{cylinder} half-width does not fit the grid")
        spans = np.full(rows.size, span)
    else:
        spans_all = np.array([_row_span(grid.defined[j], nx) for j in range(grid.shape[0])])
        rows = np.nonzero(spans_all > 0)[0]
        spans = spans_all[rows]

    q = np.zeros(rows.size)
    s_rows, v_rows, ubar_rows, nu_rows = [], [], [], []
    for k, (j, span) in enumerate(zip(rows, spans)):
        cols = nx + np.arange(-span, span + 1)
        s = grid.x1[cols]
        v = f.values[j, cols]
        ubar = pr.eval(s)
        deviation = v - ubar
        q[k] = norm_l(deviation, h)
        s_rows.append(s)
        v_rows.append(v)
        ubar_rows.append(ubar)
        nu_rows.append(deviation / q[k] if q[k] >= NU_FLOOR else None)

    # ∫ν_{x2} ν dx1 = 0: проверка в средней точке между соседними строками
    residual = 0.0
    for k in range(rows.size - 1):
        a, b = nu_rows[k], nu_rows[k + 1]
        if a is None or b is None or a.size != b.size or rows[k + 1] != rows[k] + 1:
            continue
        inner = h * np.sum(trapezoid_weights(a.size) * (b - a) / h * 0.5 * (a + b))
        residual = max(residual, abs(float(inner)))
    if residual > 1e-8:
        logger.warning(f"Slice orthogonality residual {residual:.2e} exceeds 1e-8")

    decomp = SliceDecomposition(
        h=h,
        rows=rows,
        x2=grid.x2[rows],
        l=spans * h,
        q=q,
        s=s_rows,
        v=v_rows,
        ubar=ubar_rows,
        nu=nu_rows,
        orthogonality_residual=residual,
        uniform=bool(np.all(spans == spans[0])) if spans.size else True,
    )
    logger.debug(f"Slice decomposition: {rows.size} rows, max q={float(np.max(q, initial=0.0)):.3e}")
    return decomp


def reassemble_energy(decomp, pr):
    """Энергия цилиндра в группировке (q, ν); совпадает с total_energy на том же замкнутом множестве"""
    if not decomp.uniform:
        raise GeometryError("Energy reassembly needs rows of equal half-width")
    h = decomp.h
    p = pr.potential
    n = decomp.rows.size
    row_weights = trapezoid_weights(n)

    transverse = 0.0
    for k in range(n - 1):
        dq = decomp.q[k + 1] - decomp.q[k]
        a, b = decomp.nu[k], decomp.nu[k + 1]
        coupling = 0.0
        if a is not None and b is not None:
            coupling = decomp.q[k] * decomp.q[k + 1] * norm_l(b - a, h) ** 2
        transverse += (dq * dq + coupling) / (2.0 * h)

    along = 0.0
    for k in range(n):
        base = el_energy(decomp.ubar[k], p, h)
        along += row_weights[k] * h * (El_energy(decomp.v[k] - decomp.ubar[k], pr, decomp.s[k]) + base)
    return float(transverse + along)


def interpolation_inequality(decomp, end_tol=1e-12):
    """‖w‖_∞ <= √2 ‖w‖_l^{1/2} ‖w‖_{1,l}^{1/2} на строках, где w(±l) = 0"""
    h = decomp.h
    ratios = []
    for v, ubar in zip(decomp.v, decomp.ubar):
        w = v - ubar
        if w.size < 3 or abs(w[0]) > end_tol or abs(w[-1]) > end_tol:
            continue
        sup = float(np.max(np.abs(w)))
        if sup == 0.0:
            ratios.append(0.0)
            continue
        bound = np.sqrt(2.0) * np.sqrt(norm_l(w, h)) * np.sqrt(norm_1l(w, h))
        ratios.append(sup / bound)
    max_ratio = max(ratios) if ratios else 0.0
    result = {"rows_checked": len(ratios), "max_ratio": max_ratio, "passed": max_ratio <= 1.0 + 1e-12}
    logger.debug(f"Interpolation inequality: {result}")
    return result


def excise_to_profile(f, c, pr, tol=1e-6):
    """ū(x1) внутри открытого цилиндра, f снаружи"""
    grid = f.grid
    closed = c.check_inside(grid)
    inside = c.mask(grid, closed=False) & grid.interior
    rim = closed & ~inside
    ubar = pr.eval(grid.X1)
    mismatch = float(np.max(np.abs(f.values[rim] - ubar[rim]), initial=0.0))
    if mismatch > tol:
        logger.warning(f"Excision boundary mismatch {mismatch:.2e} > {tol:.0e}: competitor carries a jump energy")
    values = f.values.copy()
    values[inside] = ubar[inside]
    return f.with_values(values)


def _radius(grid, center):
    return np.hypot(grid.X1 - center[0], grid.X2 - center[1])


def annulus_support(f, center, R, lam, q_bar):
    """S = {|u| > q̄} ∩ {R <= r <= R + λ}; шар B(center, R + λ) должен лежать внутри сетки"""
    grid = f.grid
    outer = R + lam
    if (
        abs(center[0]) + outer >= grid.x1[-1]
        or center[1] - outer <= grid.x2[0]
        or center[1] + outer >= grid.x2[-1]
    ):
        raise GeometryError(f"Ball of radius {outer} around {tuple(center)} exceeds the grid box")
    r = _radius(grid, center)
    ball = r <= outer + grid.eps
    if np.any(ball & ~grid.interior):
        raise GeometryError(f"Ball of radius {outer} around {tuple(center)} leaves the grid interior")
    annulus = (r >= R - grid.eps) & ball
    return annulus & (np.abs(np.nan_to_num(f.values)) > q_bar)


def annulus_interpolate(f, center, R, lam, q_bar):
    """Срезка в кольце R <= r <= R + λ: на средней окружности значение sign(u) q̄"""
    S = annulus_support(f, center, R, lam, q_bar)
    r = _radius(f.grid, center)
    u = f.values
    weight = np.abs(1.0 - 2.0 * (r - R) / lam)
    values = u.copy()
    values[S] = (1.0 - weight[S]) * np.sign(u[S]) * q_bar + weight[S] * u[S]
    logger.debug(f"Annulus interpolation touched {int(S.sum())} nodes")
    return f.with_values(values)


def annulus_energy_bound(m0, lam, q_bar, w_bar):
    """Плотность энергии срезки: ½(M₀ + 2(M₀ - q̄)/λ)² + W̄"""
    return 0.5 * (m0 + 2.0 * (m0 - q_bar) / lam) ** 2 + w_bar
