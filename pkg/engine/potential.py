import logging
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from engine.errors import InvalidPotentialError, PotentialDomainError

logger = logging.getLogger(__name__)

POTENTIAL_KINDS = ("quartic", "table")
TABLE_COLUMNS = ("u", "w", "dw", "ddw")


class ConvexityConstants(NamedTuple):
    c: float
    q_star: float
    w_bar: float
    c_sq: float


class Potential:
    """Чётный двухъямный потенциал W и его производные.

    shift=1 означает работу с W(v+1) (сдвинутая задача для u-1).
    После создания объект не меняется.
    """

    def __init__(self, kind="quartic", shift=0.0, M=1.0, scale=1.0, table=None, source=None):
        if kind not in POTENTIAL_KINDS:
            raise InvalidPotentialError(f"Unknown potential kind '{kind}', expected one of {POTENTIAL_KINDS}")
        if scale <= 0:
            raise InvalidPotentialError(f"Potential scale must be positive, got {scale}")
        self.kind = kind
        self.shift = float(shift)
        self.M = float(M)
        self.scale = float(scale)
        self.source = source
        self._table = table
        self._constants = {}

        if kind == "table":
            if table is None:
                raise InvalidPotentialError("Tabulated potential requires u,w,dw,ddw columns")
            u = np.asarray(table["u"], dtype=float)
            if u.size < 4 or np.any(np.diff(u) <= 0):
                raise InvalidPotentialError("Potential table must have at least 4 rows with strictly increasing u")
            self._u_min, self._u_max = float(u[0]), float(u[-1])
            self._w = CubicHermiteSpline(u, table["w"], table["dw"], extrapolate=False)
            self._dw = CubicHermiteSpline(u, table["dw"], table["ddw"], extrapolate=False)
            # W''' берём разностью: столбца третьей производной в таблице нет
            self._ddw = CubicSpline(u, table["ddw"], extrapolate=False)
            self._dddw = self._ddw.derivative()
        else:
            self._u_min, self._u_max = -np.inf, np.inf

    def __repr__(self):
        return f"Potential(kind={self.kind!r}, shift={self.shift}, M={self.M}, scale={self.scale})"

    @classmethod
    def from_csv(cls, path, shift=0.0, M=1.0):
        """Загрузка таблицы с заголовком u,w,dw,ddw"""
        path = Path(path)
        try:
            data = np.genfromtxt(path, delimiter=",", names=True)
        except Exception as e:
            logger.error(f"Failed to read potential table {path}: {str(e)}")
            raise InvalidPotentialError(f"Cannot read potential table {path}: {e}") from e
        names = tuple(data.dtype.names or ())
        if names != TABLE_COLUMNS:
            raise InvalidPotentialError(f"Potential table header must be {','.join(TABLE_COLUMNS)}, got {names}")
        table = {name: np.atleast_1d(data[name]).astype(float) for name in TABLE_COLUMNS}
        logger.info(f"Loaded tabulated potential from {path} ({table['u'].size} rows)")
        return cls(kind="table", shift=shift, M=M, table=table, source=str(path))

    def shifted(self):
        return Potential(self.kind, shift=1.0, M=self.M, scale=self.scale, table=self._table, source=self.source)

    def unshifted(self):
        return Potential(self.kind, shift=0.0, M=self.M, scale=self.scale, table=self._table, source=self.source)

    @property
    def table_range(self):
        return self._u_min, self._u_max

    def _argument(self, u):
        x = np.asarray(u, dtype=float) + self.shift
        if self.kind == "table":
            if np.any(x < self._u_min - 1e-12) or np.any(x > self._u_max + 1e-12):
                raise PotentialDomainError(
                    f"Query outside potential table range [{self._u_min}, {self._u_max}]"
                )
            x = np.clip(x, self._u_min, self._u_max)
        return x

    @staticmethod
    def _out(value, u):
        return float(value) if np.ndim(u) == 0 else value

    def eval_w(self, u):
        x = self._argument(u)
        if self.kind == "quartic":
            value = 0.25 * self.scale * (1.0 - x * x) ** 2
        else:
            value = self._w(x)
        return self._out(value, u)

    def eval_dw(self, u):
        x = self._argument(u)
        if self.kind == "quartic":
            value = self.scale * (x * x - 1.0) * x
        else:
            value = self._dw(x)
        return self._out(value, u)

    def eval_ddw(self, u):
        x = self._argument(u)
        if self.kind == "quartic":
            value = self.scale * (3.0 * x * x - 1.0)
        else:
            value = self._ddw(x)
        return self._out(value, u)

    def eval_dddw(self, u):
        x = self._argument(u)
        if self.kind == "quartic":
            value = 6.0 * self.scale * x
        else:
            value = self._dddw(x)
        return self._out(value, u)

    def _scan(self, lo, hi, n=4001):
        lo = max(lo, self._u_min - self.shift)
        hi = min(hi, self._u_max - self.shift)
        return np.linspace(lo, hi, n)

    def validate(self):
        """Проверка h1-h2 на несдвинутом потенциале"""
        base = self.unshifted()
        tol = 1e-12 if self.kind == "quartic" else 1e-9
        reach = min(base.M + 2.0, base._u_max, -base._u_min)

        u = np.linspace(0.0, reach, 2001)
        symmetry = float(np.max(np.abs(base.eval_w(u) - base.eval_w(-u))))
        if symmetry > tol:
            raise InvalidPotentialError(f"W is not even: symmetry residual {symmetry:.3e}")

        w1, dw1, ddw1 = base.eval_w(1.0), base.eval_dw(1.0), base.eval_ddw(1.0)
        if abs(w1) > 1e-10 or abs(dw1) > 1e-10:
            raise InvalidPotentialError(f"u=1 is not a zero of W and W' (W(1)={w1:.3e}, W'(1)={dw1:.3e})")
        if ddw1 <= 0:
            raise InvalidPotentialError(f"Minimum at u=1 is degenerate: W''(1)={ddw1:.3e}")

        inner = u[(u >= 0.0) & (np.abs(u - 1.0) > 1e-3)]
        if np.any(base.eval_w(inner) <= 0):
            raise InvalidPotentialError("W must be positive on u >= 0 away from u = 1")

        if base.M < reach:
            tail = np.linspace(base.M, reach, 1001)
            if np.any(base.eval_dw(tail) < -tol):
                raise InvalidPotentialError(f"W' must be non-negative for u >= M={base.M}")

        logger.debug(f"Potential {self!r} passed h1-h2 validation (symmetry residual {symmetry:.1e})")
        return True

    def constants(self, m0, grid_step=1e-4):
        key = (float(m0), float(grid_step))
        if key not in self._constants:
            self._constants[key] = lemma41_constants(self, m0, grid_step)
        return self._constants[key]


def lemma41_constants(p, m0, grid_step=1e-4, c_sq=None, q_cap=None):
    """Константы c, q*, W̄ для сдвинутой ямы (минимум в нуле)."""
    if m0 <= 0:
        raise InvalidPotentialError(f"m0 must be positive, got {m0}")
    w2_0 = p.eval_ddw(0.0)
    if w2_0 <= 0:
        raise InvalidPotentialError(f"W''(0) = {w2_0:.3e} <= 0: well is not convex at its minimum")
    if c_sq is None:
        c_sq = 0.5 * w2_0
    if q_cap is None:
        q_cap = m0

    n = int(np.ceil(q_cap / grid_step))
    q = np.minimum(np.arange(n + 1) * grid_step, q_cap)
    q_star = q_cap
    for side in (1.0, -1.0):
        values = p.eval_ddw(np.clip(side * q, *_admissible(p, m0 + 1.0)))
        failing = np.nonzero(values < c_sq)[0]
        if failing.size:
            q_star = min(q_star, float(q[max(failing[0] - 1, 0)]))

    lo, hi = _admissible(p, m0)
    while q_star > grid_step:
        right = np.arange(q_star, hi + grid_step, grid_step)
        right = right[right <= hi]
        left = np.arange(-q_star, lo - grid_step, -grid_step)
        left = left[left >= lo]
        ok = True
        if right.size:
            ok &= bool(np.all(p.eval_w(right) >= p.eval_w(q_star) - 1e-14))
        if left.size:
            ok &= bool(np.all(p.eval_w(left) >= p.eval_w(-q_star) - 1e-14))
        if ok:
            break
        q_star -= grid_step
        logger.debug(f"Shrinking q* to {q_star:.4f} to keep W(q*·sign q) <= W(q)")

    full_lo = max(-m0, p.table_range[0] - p.shift)
    full_hi = min(m0, p.table_range[1] - p.shift)
    ring = np.concatenate([
        np.arange(full_lo, -q_star + grid_step / 2, grid_step),
        np.arange(q_star, full_hi + grid_step / 2, grid_step),
        [full_lo, full_hi],
    ])
    w_bar = float(np.max(p.eval_w(ring)))
    constants = ConvexityConstants(c=float(np.sqrt(c_sq)), q_star=float(q_star), w_bar=w_bar, c_sq=float(c_sq))
    logger.info(f"Convexity constants: c^2={c_sq:.4f}, q*={q_star:.4f}, W_bar={w_bar:.4f} (m0={m0})")
    return constants


def _admissible(p, reach):
    """Допустимый диапазон q: для сдвинутой задачи u = q + shift >= 0"""
    lo = -reach if p.shift == 0 else max(-reach, -p.shift)
    lo = max(lo, p.table_range[0] - p.shift)
    hi = min(reach, p.table_range[1] - p.shift)
    return lo, hi
