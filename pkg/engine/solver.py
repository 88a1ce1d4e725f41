import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg
from tqdm import tqdm

from engine.energy import energy_gradient, total_energy
from engine.errors import BoundaryDataError, ConfigError, StepUnderflowError
from engine.geometry import Field, oddness_residual
from engine.profile1d import heteroclinic

logger = logging.getLogger(__name__)

SCHEMES = ("semi-implicit", "explicit")
BC_KINDS = ("profile", "sign", "table")
MIN_TAU = 1e-8
ENERGY_SLACK = 1e-13


@dataclass
class SolveConfig:
    tol: float = 1e-8
    max_iter: int = 2000
    scheme: str = "semi-implicit"
    tau0: float = 1.0
    project: bool = True
    clamp: bool = True
    seed: int = 0
    checkpoint_every: int = 0
    m_prime: Optional[float] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("solver.tol", f"must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError("solver.max_iter", f"must be >= 1, got {self.max_iter}")
        if self.scheme not in SCHEMES:
            raise ConfigError("solver.scheme", f"unknown scheme '{self.scheme}', expected one of {SCHEMES}")
        if not self.tau0 > 0:
            raise ConfigError("solver.tau0", f"must be positive, got {self.tau0}")

    @classmethod
    def from_dict(cls, section, seed=0):
        keys = {"tol", "max_iter", "scheme", "tau0", "project", "clamp", "checkpoint_every"}
        return cls(seed=seed, **{k: v for k, v in section.items() if k in keys})


@dataclass(eq=False)
class BoundaryData:
    """Значения g на граничной полосе; g(x̂) = -g(x), g >= 0 при x1 > 0"""

    grid: object
    values: np.ndarray
    kind: str = "profile"

    def __post_init__(self):
        self.validate()

    @property
    def g_m(self):
        side = self.grid.band & (self.grid.X1 >= 0)
        return float(np.max(self.values[side], initial=0.0))

    def validate(self):
        band = self.grid.band
        if np.any(~np.isfinite(self.values[band])):
            raise BoundaryDataError("Boundary data missing on some band nodes")
        asymmetry = float(np.max(np.abs(self.values + self.values[:, ::-1])[band], initial=0.0))
        if asymmetry > 1e-12:
            raise BoundaryDataError(f"Boundary data is not odd in x1: max |g(x) + g(x̂)| = {asymmetry:.2e}")
        right = band & (self.grid.X1 > self.grid.eps)
        if np.any(self.values[right] < -1e-12):
            raise BoundaryDataError("Boundary data must be non-negative on the x1 > 0 side")
        return True

    @classmethod
    def from_profile(cls, grid, pr):
        values = grid.empty_values()
        values[grid.band] = pr.eval(grid.X1[grid.band])
        return cls(grid, values, kind="profile")

    @classmethod
    def from_sign(cls, grid, g0=1.0):
        values = grid.empty_values()
        values[grid.band] = g0 * np.sign(grid.X1[grid.band])
        return cls(grid, values, kind="sign")

    @classmethod
    def from_table(cls, grid, path):
        path = Path(path)
        data = np.genfromtxt(path, delimiter=",", names=True)
        if tuple(data.dtype.names or ()) != ("x1", "x2", "value"):
            raise BoundaryDataError(f"Boundary table {path} must have header x1,x2,value")
        values = grid.empty_values()
        i = np.rint(np.atleast_1d(data["x1"]) / grid.h).astype(int) + grid.nx
        j = np.rint((np.atleast_1d(data["x2"]) - grid.domain.a) / grid.h).astype(int)
        ok = (i >= 0) & (i < grid.shape[1]) & (j >= 0) & (j < grid.shape[0])
        values[j[ok], i[ok]] = np.atleast_1d(data["value"])[ok]
        values[~grid.band] = np.nan
        logger.info(f"Boundary data loaded from {path}: {int(ok.sum())} rows")
        return cls(grid, values, kind="table")


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual: float
    energy: float
    energy_trace: List[float] = field(default_factory=list)
    oddness_residual: float = 0.0
    clamp_activations: int = 0
    co_activations: int = 0
    step_halvings: int = 0
    final_tau: float = 0.0
    m_prime: float = 0.0
    m0_observed: float = 0.0
    min_positive: float = 0.0
    scheme: str = "semi-implicit"

    def as_dict(self, with_trace=False):
        data = asdict(self)
        if not with_trace:
            data.pop("energy_trace")
        return data


def observed_m0(f):
    """sup |u| + |∇_h u| по внутренним узлам (центральные разности)"""
    grid = f.grid
    u = np.where(grid.defined, f.values, 0.0)
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2 * grid.h)
    gy[1:-1, :] = (u[2:, :] - u[:-2, :]) / (2 * grid.h)
    m0 = np.abs(u) + np.hypot(gx, gy)
    return float(np.max(m0[grid.interior]))


def clamp_competitor(f, m_prime):
    """Срезка на [-M', M'] во внутренних узлах, граничная полоса без изменений"""
    values = f.values.copy()
    interior = f.grid.interior
    values[interior] = np.clip(values[interior], -m_prime, m_prime)
    return f.with_values(values)


def positivity_competitor(f):
    """|f| на Ω⁺ и -|f| на Ω⁻"""
    values = f.values.copy()
    interior = f.grid.interior
    values[interior] = np.sign(f.grid.X1[interior]) * np.abs(values[interior])
    return f.with_values(values)


class DirichletSolver:
    """Симметричный дискретный минимизатор J с данными Дирихле на полосе"""

    def __init__(self, grid, potential, bd, cfg=None, monitor=None):
        self.logger = logging.getLogger(__name__)
        self.grid = grid
        self.potential = potential
        self.bd = bd
        self.cfg = cfg or SolveConfig()
        self.monitor = monitor
        self.m_prime = self.cfg.m_prime if self.cfg.m_prime is not None else max(potential.M, bd.g_m)

        interior = grid.interior
        self.index = np.full(grid.shape, -1, dtype=int)
        self.index[interior] = np.arange(int(interior.sum()))
        j, i = np.nonzero(interior)
        self.rows, self.cols = j, i
        self.mirror = self.index[j, grid.shape[1] - 1 - i]
        self.laplacian, self.boundary_term = self._assemble()
        self._operators = {}
        self.logger.debug(f"Solver assembled: {j.size} unknowns, M'={self.m_prime}")

    def _assemble(self):
        """A (5-точечный лапласиан на внутренних узлах) и вклад полосы b: Δ_h u = A u + b"""
        grid = self.grid
        n = self.rows.size
        inv_h2 = 1.0 / grid.h ** 2
        g = np.where(grid.band, self.bd.values, 0.0)
        data, rr, cc = [np.full(n, -4.0 * inv_h2)], [np.arange(n)], [np.arange(n)]
        b = np.zeros(n)
        for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            nj, ni = self.rows + dj, self.cols + di
            neighbor = self.index[nj, ni]
            inner = neighbor >= 0
            data.append(np.full(int(inner.sum()), inv_h2))
            rr.append(np.nonzero(inner)[0])
            cc.append(neighbor[inner])
            b[~inner] += g[nj[~inner], ni[~inner]] * inv_h2
        A = sparse.csr_matrix((np.concatenate(data), (np.concatenate(rr), np.concatenate(cc))), shape=(n, n))
        return A, b

    def _operator(self, tau):
        if tau not in self._operators:
            identity = sparse.identity(self.rows.size, format="csr")
            self._operators[tau] = (identity - tau * self.laplacian).tocsr()
        return self._operators[tau]

    def field(self, u):
        values = self.grid.empty_values()
        values[self.grid.band] = self.bd.values[self.grid.band]
        values[self.rows, self.cols] = u
        return Field(self.grid, values)

    def residual(self, u):
        return -(self.laplacian @ u + self.boundary_term) + self.potential.eval_dw(u)

    def energy(self, u):
        return total_energy(self.field(u), self.potential).total

    def _project(self, u):
        return 0.5 * (u - u[self.mirror])

    def _advance(self, u, tau):
        if self.cfg.scheme == "explicit":
            return u - tau * self.residual(u)
        rhs = u - tau * self.potential.eval_dw(u) + tau * self.boundary_term
        norm = float(np.linalg.norm(rhs)) or 1.0
        rtol = max(1e-14, min(1e-10, 0.01 * self.cfg.tol * tau / norm))
        u_next, info = cg(self._operator(tau), rhs, x0=u, rtol=rtol, atol=0.0, maxiter=10 * self.rows.size)
        if info != 0:
            self.logger.warning(f"Conjugate gradients stopped with info={info} at tau={tau:.3e}")
        return u_next

    def initial_state(self, init=None, profile=None):
        """По умолчанию ū(x1) во внутренних узлах"""
        if init is None:
            if profile is None:
                profile = heteroclinic(self.potential.unshifted())
            u = np.asarray(profile.eval(self.grid.x1[self.cols]), dtype=float)
        else:
            u = np.asarray(init.values[self.rows, self.cols], dtype=float)
        if np.any(~np.isfinite(u)):
            raise ValueError("Initial field must be finite on interior nodes")
        return self._project(u) if self.cfg.project else u

    def solve(self, init=None, profile=None):
        cfg = self.cfg
        u = self.initial_state(init, profile)
        tau = cfg.tau0 if cfg.scheme == "semi-implicit" else min(cfg.tau0, 0.2 * self.grid.h ** 2)
        tau_max = tau

        energy = self.energy(u)
        trace = [energy]
        res = float(np.max(np.abs(self.residual(u)), initial=0.0))
        clamp_total = co_total = halvings = accepted_run = 0
        iteration = 0
        self.logger.info(f"Solve started | scheme={cfg.scheme}, tol={cfg.tol:.1e}, J0={energy:.10f}, r0={res:.3e}")

        with tqdm(total=cfg.max_iter, desc="Solve", disable=not sys.stderr.isatty()) as bar:
            while res > cfg.tol and iteration < cfg.max_iter:
                candidate = self._advance(u, tau)
                clamped = 0
                if cfg.clamp:
                    clamped = int(np.count_nonzero(np.abs(candidate) > self.m_prime))
                    candidate = np.clip(candidate, -self.m_prime, self.m_prime)
                if cfg.project:
                    candidate = self._project(candidate)
                new_energy = self.energy(candidate)

                if new_energy > energy + ENERGY_SLACK * max(1.0, abs(energy)):
                    tau *= 0.5
                    halvings += 1
                    accepted_run = 0
                    self.logger.warning(f"Energy increased ({new_energy - energy:.2e}); halving step to {tau:.3e}")
                    if tau < MIN_TAU:
                        raise StepUnderflowError(f"Step size underflow below {MIN_TAU:.0e} at iteration {iteration}")
                    continue

                u, energy = candidate, new_energy
                iteration += 1
                clamp_total += clamped
                if clamped and cfg.project:
                    co_total += 1
                    self.logger.warning(f"Clamp and symmetry projection both active at iteration {iteration}")
                trace.append(energy)
                res = float(np.max(np.abs(self.residual(u)), initial=0.0))
                accepted_run += 1
                if accepted_run >= 5 and tau < tau_max:
                    tau = min(2.0 * tau, tau_max)
                    accepted_run = 0

                self.logger.debug(f"Iteration {iteration} | J={energy:.12f} | r={res:.3e} | tau={tau:.3e}")
                if self.monitor is not None:
                    self.monitor.log_iteration(iteration, energy, res, tau, clamped)
                    if cfg.checkpoint_every and iteration % cfg.checkpoint_every == 0:
                        self.monitor.checkpoint(self.field(u), iteration)
                bar.update(1)
                bar.set_postfix(residual=f"{res:.2e}")

        result = self.field(u)
        converged = res <= cfg.tol
        report = SolveReport(
            converged=converged,
            iterations=iteration,
            residual=res,
            energy=energy,
            energy_trace=trace,
            oddness_residual=oddness_residual(result),
            clamp_activations=clamp_total,
            co_activations=co_total,
            step_halvings=halvings,
            final_tau=tau,
            m_prime=self.m_prime,
            m0_observed=observed_m0(result),
            min_positive=float(np.min(result.values[self.grid.positive], initial=np.inf)),
            scheme=cfg.scheme,
        )
        if self.monitor is not None:
            self.monitor.save()
        if converged:
            self.logger.info(f"Solve complete | iterations={iteration}, residual={res:.3e}, J={energy:.10f}")
        else:
            self.logger.warning(f"Solve did not converge in {iteration} iterations (residual {res:.3e})")
        return result, report


def solve_dirichlet(g, p, bd, cfg=None, init=None, profile=None, monitor=None):
    return DirichletSolver(g, p, bd, cfg, monitor=monitor).solve(init=init, profile=profile)


def local_minimality_probe(f, p, trials=100, radius=1.0, seed=0, amplitude=0.05, m_prime=None):
    """J(f + φ) >= J(f) - slack для случайных финитных возмущений и детерминированных конкурентов"""
    grid = f.grid
    base = total_energy(f, p).total
    slack = 1e-10 * abs(base)
    rng = np.random.default_rng(seed)
    worst = np.inf

    competitors = [("positivity", positivity_competitor(f))]
    if m_prime is not None:
        competitors.append(("clamp", clamp_competitor(f, m_prime)))
    gradient = energy_gradient(f, p)
    step = f.values.copy()
    step[grid.interior] -= 0.1 * grid.h ** 2 * gradient.values[grid.interior]
    competitors.append(("gradient-step", f.with_values(step)))

    for name, competitor in competitors:
        margin = total_energy(competitor, p).total - base
        worst = min(worst, margin)
        if margin < -slack:
            logger.info(f"Minimality probe: {name} competitor lowers J by {-margin:.3e}")
            return False

    nodes = np.argwhere(grid.interior)
    for _ in tqdm(range(trials), desc="Probe", disable=not sys.stderr.isatty()):
        j, i = nodes[rng.integers(nodes.shape[0])]
        r = np.hypot(grid.X1 - grid.x1[i], grid.X2 - grid.x2[j]) / radius
        bump = np.where((r < 1.0) & grid.interior, (1.0 - r * r) ** 2, 0.0)
        perturbed = f.values + amplitude * rng.choice((-1.0, 1.0)) * bump
        margin = total_energy(f.with_values(perturbed), p).total - base
        worst = min(worst, margin)
        if margin < -slack:
            logger.info(f"Minimality probe: random bump at ({grid.x1[i]:.2f}, {grid.x2[j]:.2f}) lowers J by {-margin:.3e}")
            return False

    logger.info(f"Minimality probe passed: {trials} bumps, worst margin {worst:.3e}")
    return True
