import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from engine.errors import DegenerateDomainError, GeometryError, ResolutionError
from utils.helpers import write_csv

logger = logging.getLogger(__name__)

DOMAIN_KINDS = ("strip", "dumbbell", "trapezoid", "table")
DISTANCE_TARGETS = ("whole", "positive")


@dataclass(frozen=True, eq=False)
class SymmetricDomain:
    """Ω = {|x1| < w(x2), a < x2 < b}: симметрична и x1-выпукла по построению"""

    kind: str
    a: float
    b: float
    params: dict = field(default_factory=dict)
    tag: str = ""

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise DegenerateDomainError(f"Unknown domain kind '{self.kind}', expected one of {DOMAIN_KINDS}")
        if not self.b > self.a:
            raise DegenerateDomainError(f"Empty x2 interval ({self.a}, {self.b})")
        object.__setattr__(self, "params", dict(self.params))
        if self.kind == "table" and "x2" not in self.params:
            table = np.genfromtxt(self.params["path"], delimiter=",", names=True)
            if tuple(table.dtype.names or ()) != ("x2", "w"):
                raise DegenerateDomainError("Width table header must be x2,w")
            self.params["x2"] = np.atleast_1d(table["x2"]).astype(float)
            self.params["w"] = np.atleast_1d(table["w"]).astype(float)
        if self.w_min <= 0:
            raise DegenerateDomainError(f"Width must stay positive on ({self.a}, {self.b}), min is {self.w_min}")

    @classmethod
    def strip(cls, w0, a, b):
        return cls("strip", float(a), float(b), {"w0": float(w0)}, tag=f"strip w={w0}")

    @classmethod
    def dumbbell(cls, w0, w1, a, b):
        return cls("dumbbell", float(a), float(b), {"w0": float(w0), "w1": float(w1)}, tag=f"dumbbell w0={w0} w1={w1}")

    @classmethod
    def trapezoid(cls, w_a, w_b, a, b):
        return cls("trapezoid", float(a), float(b), {"w_a": float(w_a), "w_b": float(w_b)}, tag="trapezoid")

    def width(self, x2):
        x2 = np.asarray(x2, dtype=float)
        p = self.params
        if self.kind == "strip":
            w = np.full_like(x2, p["w0"])
        elif self.kind == "dumbbell":
            w = p["w0"] + p["w1"] * np.cos(np.pi * (x2 - self.a) / (self.b - self.a)) ** 2
        elif self.kind == "trapezoid":
            w = p["w_a"] + (p["w_b"] - p["w_a"]) * (x2 - self.a) / (self.b - self.a)
        else:
            w = np.interp(x2, p["x2"], p["w"])
        return float(w) if w.ndim == 0 else w

    @cached_property
    def w_min(self):
        return float(np.min(self.width(np.linspace(self.a, self.b, 2001))))

    @cached_property
    def w_max(self):
        return float(np.max(self.width(np.linspace(self.a, self.b, 2001))))

    def contains(self, x1, x2):
        x1, x2 = np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)
        return (np.abs(x1) < self.width(x2)) & (x2 > self.a) & (x2 < self.b)

    def boundary_segments(self, n=400, half=False):
        """Ломаная ∂Ω (или её часть с x1 >= 0): массивы начал и концов формы (m, 2)"""
        x2 = np.linspace(self.a, self.b, n + 1)
        w = self.width(x2)
        right = np.column_stack([w, x2])
        left_end = 0.0 if half else -1.0
        starts = [right[:-1], [[left_end * w[0], self.a]], [[left_end * w[-1], self.b]]]
        ends = [right[1:], [[w[0], self.a]], [[w[-1], self.b]]]
        if not half:
            left = np.column_stack([-w, x2])
            starts.append(left[:-1])
            ends.append(left[1:])
        return np.vstack(starts), np.vstack(ends)


@dataclass(eq=False)
class Grid:
    domain: SymmetricDomain
    h: float
    x1: np.ndarray
    x2: np.ndarray
    interior: np.ndarray
    band: np.ndarray

    @property
    def shape(self):
        return self.interior.shape

    @property
    def nx(self):
        return (self.x1.size - 1) // 2

    @property
    def eps(self):
        return 1e-9 * self.h

    @property
    def X1(self):
        return np.broadcast_to(self.x1[None, :], self.shape)

    @property
    def X2(self):
        return np.broadcast_to(self.x2[:, None], self.shape)

    @property
    def defined(self):
        return self.interior | self.band

    @property
    def positive(self):
        """Внутренние узлы Ω⁺"""
        return self.interior & (self.X1 > self.eps)

    def nodes(self, mask):
        return np.column_stack([self.X1[mask], self.X2[mask]])

    def empty_values(self):
        return np.full(self.shape, np.nan)


@dataclass(eq=False)
class Field:
    grid: Grid
    values: np.ndarray

    def copy(self):
        return Field(self.grid, self.values.copy())

    def with_values(self, values):
        return Field(self.grid, values)

    def interior_values(self):
        return self.values[self.grid.interior]


@dataclass(frozen=True)
class Cylinder:
    """C = {|x1| < l, |x2 - eta| < r}"""

    l: float
    r: float
    eta: float

    def mask(self, grid, closed=True):
        tol = grid.eps if closed else -grid.eps
        return (np.abs(grid.X1) <= self.l + tol) & (np.abs(grid.X2 - self.eta) <= self.r + tol)

    def check_inside(self, grid):
        region = self.mask(grid, closed=True)
        if not np.any(region) or np.any(region & ~grid.defined):
            raise GeometryError(f"{self} is not covered by grid nodes with values")
        return region


def build_grid(d, h):
    h = float(h)
    if h <= 0:
        raise ResolutionError(f"Grid spacing must be positive, got {h}")
    w_min = d.w_min
    if w_min <= 2 * h:
        raise ResolutionError(f"Degenerate domain: w_min={w_min} <= 2h={2 * h}")
    if h > w_min / 4:
        raise ResolutionError(f"grid.h={h} exceeds w_min/4={w_min / 4}")

    eps = 1e-9 * h
    nx = int(np.floor(d.w_max / h + 1e-9)) + 1
    ny = int(np.ceil((d.b - d.a) / h - 1e-9))
    x1 = np.arange(-nx, nx + 1) * h
    x2 = d.a + np.arange(ny + 1) * h
    X1, X2 = np.meshgrid(x1, x2)

    interior = (np.abs(X1) < d.width(X2) - eps) & (X2 > d.a + eps) & (X2 < d.b - eps)
    if not np.any(interior):
        raise DegenerateDomainError(f"No interior nodes for {d.tag or d.kind} at h={h}")
    band = ndimage.binary_dilation(interior, structure=np.ones((3, 3), dtype=bool)) & ~interior

    grid = Grid(domain=d, h=h, x1=x1, x2=x2, interior=interior, band=band)
    logger.info(
        f"Grid built for {d.tag or d.kind}: h={h}, shape={grid.shape}, "
        f"interior={int(interior.sum())}, band={int(band.sum())}"
    )
    return grid


def reflect_field(f):
    return f.with_values(f.values[:, ::-1].copy())


def oddness_residual(f):
    defined = f.grid.defined
    total = f.values + f.values[:, ::-1]
    if not np.any(defined):
        return 0.0
    return float(np.max(np.abs(total[defined])))


def _segment_distance(points, starts, ends, chunk=512):
    seg = ends - starts
    length_sq = np.maximum(np.sum(seg ** 2, axis=1), 1e-300)
    result = np.empty(points.shape[0])
    for lo in range(0, points.shape[0], chunk):
        p = points[lo:lo + chunk, None, :]
        t = np.clip(np.sum((p - starts[None]) * seg[None], axis=2) / length_sq[None], 0.0, 1.0)
        closest = starts[None] + t[..., None] * seg[None]
        result[lo:lo + chunk] = np.sqrt(np.min(np.sum((p - closest) ** 2, axis=2), axis=1))
    return result


def distance_field(g, target="whole"):
    """Евклидово расстояние до ∂Ω или до ∂(Ω⁺); 0 на полосе, NaN вне сетки"""
    if target not in DISTANCE_TARGETS:
        raise ValueError(f"Unknown distance target '{target}', expected one of {DISTANCE_TARGETS}")
    d = g.domain
    n = max(400, int(np.ceil(4 * (d.b - d.a) / g.h)))
    points = g.nodes(g.interior)

    if target == "positive":
        # ∂(Ω⁺) = (∂Ω ∩ {x1 >= 0}) ∪ ({x1 = 0} ∩ Ω); узлы Ω⁻ отражаются
        starts, ends = d.boundary_segments(n, half=True)
        mirrored = np.column_stack([np.abs(points[:, 0]), points[:, 1]])
        dist = np.minimum(_segment_distance(mirrored, starts, ends), mirrored[:, 0])
    else:
        starts, ends = d.boundary_segments(n)
        dist = _segment_distance(points, starts, ends)

    values = g.empty_values()
    values[g.band] = 0.0
    values[g.interior] = dist
    logger.debug(f"Distance field ({target}) computed over {points.shape[0]} nodes and {starts.shape[0]} segments")
    return Field(g, values)


def box_region(grid, x1_range, x2_range):
    """Замкнутый прямоугольник узлов"""
    eps = grid.eps
    return (
        (grid.X1 >= x1_range[0] - eps) & (grid.X1 <= x1_range[1] + eps)
        & (grid.X2 >= x2_range[0] - eps) & (grid.X2 <= x2_range[1] + eps)
    )


def write_field_csv(f, path):
    mask = f.grid.defined
    return write_csv(path, [f.grid.X1[mask], f.grid.X2[mask], f.values[mask]], ("x1", "x2", "value"))


def read_field_csv(grid, path):
    path = Path(path)
    data = np.genfromtxt(path, delimiter=",", names=True)
    if tuple(data.dtype.names or ()) != ("x1", "x2", "value"):
        raise GeometryError(f"Field CSV {path} must have header x1,x2,value")
    i = np.rint(np.atleast_1d(data["x1"]) / grid.h).astype(int) + grid.nx
    j = np.rint((np.atleast_1d(data["x2"]) - grid.domain.a) / grid.h).astype(int)
    inside = (i >= 0) & (i < grid.shape[1]) & (j >= 0) & (j < grid.shape[0])
    if not np.all(inside):
        raise GeometryError(f"Field CSV {path} has nodes outside the grid")
    values = grid.empty_values()
    values[j, i] = np.atleast_1d(data["value"])
    logger.info(f"Loaded field from {path} ({i.size} nodes)")
    return Field(grid, values)
