import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np
from tqdm import tqdm

from engine.comparison import r_bar, radial_solve
from engine.energy import (
    excise_to_profile,
    interpolation_inequality,
    reassemble_energy,
    slice_decompose,
    total_energy,
)
from engine.errors import AclabError, ConfigError, DegenerateDomainError, ResolutionError
from engine.geometry import Cylinder, SymmetricDomain, build_grid, distance_field, read_field_csv, write_field_csv
from engine.monitor import SolveMonitor
from engine.potential import Potential, lemma41_constants
from engine.profile1d import heteroclinic
from engine.solver import BoundaryData, SolveConfig, local_minimality_probe, solve_dirichlet
from engine.spectral import sample_lemma31, spectrum
from engine.verify import (
    VerifyReport,
    check_theorem_1_1,
    check_theorem_1_2,
    check_theorem_1_4,
    lemma32_rows,
    level_set_growth,
    shifted_positive_part,
)
from utils.helpers import CHECK_NAMES, load_config, write_csv, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_NOT_CONVERGED = 2
EXIT_CONFIG_ERROR = 3


class AcLab:
    """Эксперимент: потенциал → профиль → область → решатель → проверки"""

    def __init__(self, config_path=None, overrides=None, config=None):
        self.logger = logging.getLogger(__name__)
        try:
            self.config = config if config is not None else load_config(config_path, overrides=overrides)
            self.config_path = str(config_path) if config_path else None
            self.output_dir = Path(self.config["output_dir"])
            self.timings = {}

            self.logger.info("Initializing potential...")
            self.potential = self._build_potential()

            self.logger.info("Initializing domain...")
            self.domain = self._build_domain()

            self.logger.info("Initializing grid...")
            self.grid = self._build_grid()

            self._profile = None
            self.field = None
            self.solve_report = None
            self.logger.info("AcLab initialization complete")
        except ConfigError:
            raise
        except Exception as e:
            self.logger.critical(f"Initialization failed: {str(e)}", exc_info=True)
            raise

    def _build_potential(self):
        cfg = self.config["potential"]
        try:
            if cfg["kind"] == "table":
                p = Potential.from_csv(cfg["table"], M=cfg["M"])
            else:
                p = Potential("quartic", M=cfg["M"], scale=cfg["scale"])
            p.validate()
        except AclabError as e:
            raise ConfigError("potential", str(e)) from e
        return p

    def _build_domain(self):
        cfg = self.config["domain"]
        try:
            return SymmetricDomain(cfg["kind"], float(cfg["a"]), float(cfg["b"]), cfg["params"], tag=cfg["kind"])
        except KeyError as e:
            raise ConfigError("domain.params", f"missing parameter {e}") from e
        except (DegenerateDomainError, OSError) as e:
            raise ConfigError("domain", str(e)) from e

    def _build_grid(self):
        h = self.config["grid"]["h"]
        if h > self.domain.w_min / 4:
            raise ConfigError("grid.h", f"{h} exceeds w_min/4 = {self.domain.w_min / 4:.4f}")
        try:
            return build_grid(self.domain, h)
        except (ResolutionError, DegenerateDomainError) as e:
            raise ConfigError("grid.h", str(e)) from e

    def _timed(self, stage, func, *args, **kwargs):
        start = time.perf_counter()
        try:
            return func(*args, **kwargs)
        finally:
            self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - start

    @property
    def profile(self):
        if self._profile is None:
            cfg = self.config["profile"]
            self.logger.info("Initializing profile...")
            self._profile = self._timed("profile", heteroclinic, self.potential, cfg["l_max"], cfg["h"])
        return self._profile

    def boundary_data(self):
        cfg = self.config["bc"]
        if cfg["kind"] == "profile":
            return BoundaryData.from_profile(self.grid, self.profile)
        if cfg["kind"] == "sign":
            return BoundaryData.from_sign(self.grid, cfg["g0"])
        return BoundaryData.from_table(self.grid, cfg["table"])

    def solve(self, monitor=True):
        """Минимизация J с данными Дирихле; результат кэшируется"""
        try:
            cfg = SolveConfig.from_dict(self.config["solver"], seed=self.config["seed"])
            mon = SolveMonitor(self.output_dir / "logs", run_name="solve") if monitor else None
            self.field, self.solve_report = self._timed(
                "solve", solve_dirichlet, self.grid, self.potential, self.boundary_data(), cfg,
                profile=self.profile, monitor=mon,
            )
            return self.field, self.solve_report
        except Exception as e:
            self.logger.error(f"Solve failed: {str(e)}", exc_info=True)
            raise

    def load_field(self, path):
        self.field = read_field_csv(self.grid, path)
        return self.field

    def spectrum(self):
        cfg = self.config["spectral"]
        return self._timed("spectrum", spectrum, self.profile, cfg["l"], cfg["h"], cfg["m_dprime"] or None)

    def energy(self, cylinder=None):
        """Энергия поля, а для цилиндра ещё разложение по строкам и конкурент-вырезка"""
        f = self.field if self.field is not None else self.solve()[0]
        result = total_energy(f, self.potential).as_dict()
        if cylinder is not None:
            c = Cylinder(*cylinder)
            region = c.check_inside(self.grid)
            decomp = slice_decompose(f, self.profile, c)
            excised = excise_to_profile(f, c, self.profile)
            result["cylinder"] = {
                "l": c.l,
                "r": c.r,
                "eta": c.eta,
                "energy": total_energy(f, self.potential, region, tag="cylinder").total,
                "reassembled": reassemble_energy(decomp, self.profile),
                "orthogonality_residual": decomp.orthogonality_residual,
                "max_q": float(np.max(decomp.q, initial=0.0)),
                "interpolation": interpolation_inequality(decomp),
                "excised_total": total_energy(excised, self.potential).total,
            }
        return result

    def comparison_constants(self):
        """c и q* из выпуклости сдвинутой ямы; c из конфигурации, если задано"""
        constants = lemma41_constants(self.potential.shifted(), self.config["verify"]["m0"])
        c = self.config["comparison"]["c"] or constants.c
        return float(c), constants

    def comparison(self):
        cfg = self.config["comparison"]
        c, constants = self.comparison_constants()
        m0 = self.config["verify"]["m0"]
        radii = np.linspace(cfg["r_min"], cfg["r_max"], cfg["points"])
        phi0 = np.array([radial_solve(c, constants.q_star, R, cfg["n"], cfg["h"]).center for R in radii])
        largest = radial_solve(c, constants.q_star, cfg["r_max"], cfg["n"], cfg["h"], q_star=constants.q_star, m0=m0)
        k0, K0 = self._timed("comparison", largest.fit_decay, (cfg["r_min"], cfg["r_max"]), cfg["points"], cfg["h"])
        return {
            "c": c,
            "q_star": constants.q_star,
            "w_bar": constants.w_bar,
            "n": cfg["n"],
            "k0": k0,
            "K0": K0,
            "R_bar": r_bar(constants.q_star, 0.5 * constants.q_star, self.config["verify"]["m0"]),
            "R": radii,
            "phi0": phi0,
        }

    def validate_checks(self, checks=None):
        checks = list(checks if checks is not None else self.config["checks"])
        unknown = [c for c in checks if c not in CHECK_NAMES]
        if unknown:
            raise ConfigError("checks", f"unknown check(s) {unknown}; valid checks: {', '.join(CHECK_NAMES)}")
        return checks

    def verify(self, checks=None):
        checks = self.validate_checks(checks)
        report = VerifyReport()
        artifacts = {}
        for name in checks:
            self.logger.info(f"Running check {name}...")
            try:
                result, files = self._timed(f"check_{name}", getattr(self, f"_check_{name}"))
            except Exception as e:
                self.logger.error(f"Check {name} failed with an error: {str(e)}", exc_info=True)
                raise
            report.add(name, result)
            artifacts.update(files)
        return report, artifacts

    def _require_field(self):
        if self.field is None:
            self.solve()
        return self.field

    def _check_thm11(self):
        cfg = self.config["verify"]
        result = check_theorem_1_1(
            self._require_field(), self.profile,
            gradient_mode=cfg["gradient_mode"],
            k_min=cfg["k_min"],
            tol=self.config["solver"]["tol"],
            near_exclusion=cfg["near_exclusion"] or None,
            bin_width=cfg["bin_width"] or None,
        )
        fit = result.fit
        path = write_csv(self.output_dir / "thm11_samples.csv", [fit.d, fit.e, fit.bound(fit.d)], ("d", "e", "envelope"))
        data = result.as_dict()
        data["samples_csv_path"] = path.name
        return data, {"thm11_samples": path.name}

    def _check_thm12(self):
        cfg = self.config["verify"]
        curve = check_theorem_1_2(
            self._require_field(), self.profile,
            eps_target=cfg["eps_target"],
            r_max=cfg["r_max"] or None,
            bin_width=cfg["bin_width"] or None,
        )
        path = write_csv(self.output_dir / "thm12_curve.csv", [curve.R, curve.q_emp], ("R", "q_emp"))
        data = curve.as_dict()
        data["samples_csv_path"] = path.name
        return data, {"thm12_curve": path.name}

    def _m0(self):
        m0 = self.config["verify"]["m0"]
        if self.solve_report is not None and self.solve_report.m0_observed > m0:
            self.logger.warning(f"Observed M0={self.solve_report.m0_observed:.3f} exceeds verify.m0={m0}; using it")
            m0 = self.solve_report.m0_observed
        return m0

    def _check_thm14(self):
        cfg = self.config["comparison"]
        report = check_theorem_1_4(
            self._require_field(), self.profile, self._m0(),
            n=cfg["n"], R_range=(cfg["r_min"], cfg["r_max"]), points=cfg["points"], c=cfg["c"] or None, ode_h=cfg["h"],
        )
        bound = report.bound
        path = write_csv(self.output_dir / "thm14_bound.csv", [bound.R, bound.empirical, bound.phi0], ("R", "max_u_hat", "phi0"))
        rq_path = write_csv(self.output_dir / "thm14_rq.csv", [report.rq.q, report.rq.R], ("q", "R"))
        data = report.as_dict()
        data["samples_csv_path"] = path.name
        return data, {"thm14_bound": path.name, "thm14_rq": rq_path.name}

    def _check_lemma31(self):
        cfg = self.config["spectral"]
        sr = self.spectrum()
        sample = sample_lemma31(sr, self.profile, cfg["samples"], seed=self.config["seed"])
        path = write_csv(self.output_dir / "spectrum.csv", [sr.s, sr.vec_even, sr.vec_odd], ("s", "even", "odd"))
        data = {
            "check": "lemma31",
            "pass": sample.passed,
            "constants": sr.as_dict(),
            "samples": sample.samples,
            "min_ratio": sample.min_ratio,
            "far_min": sample.far_min,
            "curvature_min": sample.curvature_min,
            "samples_csv_path": path.name,
        }
        return data, {"spectrum": path.name}

    def _check_lemma32(self):
        result = lemma32_rows(slice_decompose(self._require_field(), self.profile))
        rows = result.pop("rows")
        path = write_csv(self.output_dir / "lemma32_rows.csv", [rows[key] for key in ("x2", "sup", "bound", "K")], ("x2", "sup", "bound", "K"))
        result["samples_csv_path"] = path.name
        return result, {"lemma32_rows": path.name}

    def _check_sigma(self):
        cfg = self.config["verify"]
        u_hat = shifted_positive_part(self._require_field())
        m0 = self._m0()
        constants = lemma41_constants(self.potential.shifted(), m0)
        q_bar = 0.5 * constants.q_star
        rb = r_bar(constants.q_star, q_bar, m0)

        whole = distance_field(self.grid, "whole")
        positive = distance_field(self.grid, "positive")
        deepest = np.nanargmax(np.where(self.grid.positive, positive.values, -np.inf))
        j, i = np.unravel_index(deepest, self.grid.shape)
        x0 = (float(self.grid.x1[i]), float(self.grid.x2[j]))
        room = float(whole.values[j, i]) - rb - self.grid.h
        j_max = min(cfg["j_max"], int(np.floor(room / cfg["lambda"])) - 1)
        if j_max < 0:
            self.logger.warning(f"No ball of radius R_bar + lambda fits around {x0}; level-set diagnostic skipped")
            constants = {"center": list(x0), "lambda": cfg["lambda"], "q_bar": q_bar, "r_bar": rb}
            return {"check": "sigma", "pass": True, "skipped": True, "constants": constants, "samples_csv_path": None}, {}
        diagnostic = level_set_growth(u_hat, x0, q_bar, cfg["lambda"], j_max, rb)
        radii = rb + np.arange(diagnostic.sigma.size) * cfg["lambda"]
        path = write_csv(self.output_dir / "sigma.csv", [np.arange(diagnostic.sigma.size), radii, diagnostic.sigma], ("j", "radius", "sigma"))
        data = diagnostic.as_dict()
        data["samples_csv_path"] = path.name
        return data, {"sigma": path.name}

    def _check_probe(self):
        cfg = self.config["verify"]
        f = self._require_field()
        m_prime = self.solve_report.m_prime if self.solve_report is not None else None
        passed = local_minimality_probe(
            f, self.potential, trials=cfg["probe_trials"], radius=cfg["probe_radius"], seed=self.config["seed"], m_prime=m_prime,
        )
        constants = {"trials": cfg["probe_trials"], "radius": cfg["probe_radius"], "m_prime": m_prime}
        return {"check": "probe", "pass": passed, "constants": constants, "samples_csv_path": None}, {}

    def run(self):
        """profile → solve → проверки; отчёт report.json детерминирован, времена отдельно в timings.json"""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        report = {"config": self.config, "artifacts": {}, "checks": {}, "exit_code": EXIT_OK}
        try:
            pr = self.profile
            report["profile"] = {
                "l_max": pr.l_max,
                "h": pr.h,
                "energy": pr.energy(),
                "k": pr.decay_k,
                "K": pr.decay_K,
            }
            field, solve_report = self.solve()
            report["solve"] = solve_report.as_dict()
            report["artifacts"]["field"] = write_field_csv(field, self.output_dir / "field.csv").name

            if not solve_report.converged:
                self.logger.error(f"Solver did not converge (residual {solve_report.residual:.3e}); writing partial report")
                report["exit_code"] = EXIT_NOT_CONVERGED
            else:
                verdicts, artifacts = self.verify()
                report["checks"] = verdicts.checks
                report["artifacts"].update(artifacts)
                report["pass"] = verdicts.passed
                if not verdicts.passed:
                    report["exit_code"] = EXIT_CHECK_FAILED
        finally:
            write_json(self.output_dir / "report.json", report)
            write_json(self.output_dir / "timings.json", self.timings)
        self.logger.info(f"Run complete | exit code {report['exit_code']} | report in {self.output_dir / 'report.json'}")
        return report


def _sweep_member(config_path, overrides):
    lab = AcLab(config_path, overrides=overrides)
    return lab.run()


def sweep(config_path, parameter, values, workers=None):
    """Прогон run() по значениям одного параметра в пуле процессов"""
    base = load_config(config_path)
    root = Path(base["output_dir"])
    workers = workers or min(len(values), os.cpu_count() or 1)
    jobs = [
        {parameter: value, "output_dir": str(root / f"sweep_{parameter.replace('.', '_')}_{i:03d}")}
        for i, value in enumerate(values)
    ]
    reports = [None] * len(jobs)
    logger.info(f"Sweep over {parameter} = {list(values)} with {workers} workers")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(_sweep_member, config_path, job): i for i, job in enumerate(jobs)}
        for future in tqdm(as_completed(futures), total=len(futures), desc="Sweep"):
            i = futures[future]
            try:
                reports[i] = future.result()
            except Exception as e:
                logger.error(f"Sweep member {parameter}={values[i]} failed: {str(e)}", exc_info=True)
                reports[i] = {"exit_code": EXIT_CONFIG_ERROR if isinstance(e, ConfigError) else EXIT_CHECK_FAILED, "error": str(e)}

    summary = [
        {"value": value, "exit_code": r["exit_code"], "output_dir": job["output_dir"], "pass": r.get("pass")}
        for value, job, r in zip(values, jobs, reports)
    ]
    write_json(root / f"sweep_{parameter.replace('.', '_')}.json", summary)
    return reports
