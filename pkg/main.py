import argparse
import json
import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

from aclab import EXIT_CHECK_FAILED, EXIT_CONFIG_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, AcLab, sweep
from engine.errors import AclabError, ConfigError
from engine.geometry import write_field_csv
from utils.helpers import CHECK_NAMES, load_config, write_csv, write_json


def run_log_path(output_dir):
    return Path(output_dir) / "logs" / "aclab.log"


def setup_logging(verbose=False, log_path=None):
    """Консоль всегда; файл с ротацией, когда известен каталог вывода"""
    logger = logging.getLogger()
    level = os.environ.get("ACLAB_LOG_LEVEL", "DEBUG" if verbose else "INFO").upper()
    logger.setLevel(getattr(logging, level, logging.INFO))
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    handlers = [logging.StreamHandler(sys.stdout)]
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(RotatingFileHandler(log_path, maxBytes=5 * 1024 * 1024, backupCount=3))
    for handler in handlers:
        handler.setFormatter(formatter)
        logger.addHandler(handler)
    return logger


def parse_value(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_overrides(pairs):
    """--set section.key=value"""
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(pair, "override must look like section.key=value")
        key, raw = pair.split("=", 1)
        overrides[key.strip()] = parse_value(raw)
    return overrides


def parse_cylinder(raw):
    try:
        l, r, eta = (float(x) for x in raw.split(","))
    except ValueError as e:
        raise ConfigError("--cylinder", f"expected l,r,eta, got '{raw}'") from e
    return l, r, eta


def build_parser():
    parser = argparse.ArgumentParser(description="aclab - symmetric Allen-Cahn minimizers and their decay estimates")
    parser.add_argument("--verbose", action="store_true", help="DEBUG level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=str, default=None, help="TOML experiment config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override a dotted config key")
        p.add_argument("--out", type=str, default=None, help="Output directory (overrides output_dir)")

    for name, help_text in (
        ("profile", "Heteroclinic profile: CSV s,u,du and JSON summary"),
        ("solve", "Dirichlet minimization: field CSV and solve report"),
        ("spectrum", "Parity-split spectrum of the linearized operator"),
        ("comparison", "Radial comparison function: CSV R,phi0 and JSON {k0, K0}"),
        ("run", "profile -> solve -> configured checks"),
    ):
        add_common(sub.add_parser(name, help=help_text))

    energy = sub.add_parser("energy", help="Energy of a solved or loaded field")
    add_common(energy)
    energy.add_argument("--field", type=str, default=None, help="Field CSV x1,x2,value instead of solving")
    energy.add_argument("--cylinder", type=str, default=None, help="Cylinder l,r,eta for the slice decomposition")

    verify = sub.add_parser("verify", help="Run selected checks")
    add_common(verify)
    verify.add_argument("--check", action="append", help=f"Check to run (repeatable): {', '.join(CHECK_NAMES)}")
    verify.add_argument("--field", type=str, default=None, help="Field CSV x1,x2,value instead of solving")

    sw = sub.add_parser("sweep", help="Repeat run over values of one parameter")
    sw.add_argument("--config", type=str, required=True)
    sw.add_argument("--param", type=str, required=True, help="Dotted key, e.g. grid.h")
    sw.add_argument("--values", type=str, required=True, help="Comma-separated values")
    sw.add_argument("--workers", type=int, default=None)
    return parser


def make_lab(args):
    overrides = parse_overrides(args.set)
    if args.out:
        overrides["output_dir"] = args.out
    return AcLab(args.config, overrides=overrides)


def cmd_profile(lab, args):
    pr = lab.profile
    out = lab.output_dir
    write_csv(out / "profile.csv", [pr.s, pr.u, pr.du], ("s", "u", "du"))
    kinetic, potential = pr.equipartition()
    write_json(out / "profile.json", {
        "l_max": pr.l_max,
        "h": pr.h,
        "energy": pr.energy(),
        "kinetic": kinetic,
        "potential": potential,
        "ode_residual": pr.ode_residual(),
        "k": pr.decay_k,
        "K": pr.decay_K,
    })
    return EXIT_OK


def cmd_solve(lab, args):
    field, report = lab.solve()
    write_field_csv(field, lab.output_dir / "field.csv")
    write_json(lab.output_dir / "solve.json", report.as_dict())
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_spectrum(lab, args):
    sr = lab.spectrum()
    write_csv(lab.output_dir / "spectrum.csv", [sr.s, sr.vec_even, sr.vec_odd], ("s", "even", "odd"))
    write_json(lab.output_dir / "spectrum.json", sr.as_dict())
    return EXIT_OK


def cmd_energy(lab, args):
    if args.field:
        lab.load_field(args.field)
    cylinder = parse_cylinder(args.cylinder) if args.cylinder else None
    write_json(lab.output_dir / "energy.json", lab.energy(cylinder))
    return EXIT_OK


def cmd_comparison(lab, args):
    result = lab.comparison()
    write_csv(lab.output_dir / "comparison.csv", [result.pop("R"), result.pop("phi0")], ("R", "phi0"))
    write_json(lab.output_dir / "comparison.json", result)
    return EXIT_OK


def cmd_verify(lab, args):
    lab.validate_checks(args.check)
    if args.field:
        lab.load_field(args.field)
    elif lab.field is None:
        _, report = lab.solve()
        if not report.converged:
            return EXIT_NOT_CONVERGED
    verdicts, _ = lab.verify(args.check)
    for name, result in verdicts.checks.items():
        write_json(lab.output_dir / f"verify_{name}.json", result)
    return EXIT_OK if verdicts.passed else EXIT_CHECK_FAILED


def cmd_run(lab, args):
    return lab.run()["exit_code"]


COMMANDS = {
    "profile": cmd_profile,
    "solve": cmd_solve,
    "spectrum": cmd_spectrum,
    "energy": cmd_energy,
    "comparison": cmd_comparison,
    "verify": cmd_verify,
    "run": cmd_run,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logger = setup_logging(args.verbose)
    try:
        if args.command == "sweep":
            logger = setup_logging(args.verbose, run_log_path(load_config(args.config)["output_dir"]))
            values = [parse_value(v) for v in args.values.split(",")]
            reports = sweep(args.config, args.param, values, args.workers)
            codes = [r["exit_code"] for r in reports]
            return max(codes) if codes else EXIT_OK
        lab = make_lab(args)
        logger = setup_logging(args.verbose, run_log_path(lab.output_dir))
        code = COMMANDS[args.command](lab, args)
        logger.info(f"Command {args.command} finished with exit code {code}")
        return code
    except ConfigError as e:
        logger.error(f"Configuration error: {str(e)}")
        return EXIT_CONFIG_ERROR
    except AclabError as e:
        logger.error(f"{args.command} failed: {str(e)}", exc_info=True)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
