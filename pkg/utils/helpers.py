import copy
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from dotenv import load_dotenv
from jsonschema import ValidationError, validate
from sklearn.linear_model import LinearRegression

from engine.errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

ENV_PREFIX = "ACLAB_"
CHECK_NAMES = ("thm11", "thm12", "thm14", "lemma31", "lemma32", "sigma", "probe")

DEFAULT_CONFIG = {
    "seed": 0,
    "checks": ["thm11"],
    "output_dir": "data/runs/default",
    "potential": {"kind": "quartic", "scale": 1.0, "M": 1.0, "table": ""},
    "profile": {"l_max": 20.0, "h": 0.01},
    "domain": {"kind": "strip", "a": 0.0, "b": 2.0, "params": {"w0": 8.0}},
    "grid": {"h": 0.1},
    "bc": {"kind": "profile", "g0": 1.0, "table": ""},
    "solver": {
        "tol": 1e-8,
        "max_iter": 2000,
        "scheme": "semi-implicit",
        "tau0": 1.0,
        "project": True,
        "clamp": True,
        "checkpoint_every": 0,
    },
    "spectral": {"l": 20.0, "h": 0.005, "m_dprime": 0.0, "samples": 200},
    "comparison": {"n": 2, "c": 0.0, "r_min": 5.0, "r_max": 20.0, "points": 31, "h": 0.01},
    "verify": {
        "k_min": 1.0,
        "eps_target": 1e-2,
        "r_max": 0.0,
        "bin_width": 0.0,
        "near_exclusion": 0.0,
        "gradient_mode": False,
        "m0": 2.5,
        "lambda": 1.0,
        "j_max": 3,
        "probe_trials": 100,
        "probe_radius": 1.0,
    },
}

_NUMBER = {"type": "number"}
_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_NON_NEGATIVE = {"type": "number", "minimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "checks": {"type": "array", "items": {"enum": list(CHECK_NAMES)}, "uniqueItems": True},
        "output_dir": {"type": "string", "minLength": 1},
        "potential": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["quartic", "table"]},
                "scale": _POSITIVE,
                "M": _POSITIVE,
                "table": {"type": "string"},
            },
            "additionalProperties": False,
        },
        "profile": {
            "type": "object",
            "properties": {"l_max": _POSITIVE, "h": _POSITIVE},
            "additionalProperties": False,
        },
        "domain": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["strip", "dumbbell", "trapezoid", "table"]},
                "a": _NUMBER,
                "b": _NUMBER,
                "params": {"type": "object"},
            },
            "additionalProperties": False,
        },
        "grid": {
            "type": "object",
            "properties": {"h": _POSITIVE},
            "additionalProperties": False,
        },
        "bc": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["profile", "sign", "table"]},
                "g0": _NON_NEGATIVE,
                "table": {"type": "string"},
            },
            "additionalProperties": False,
        },
        "solver": {
            "type": "object",
            "properties": {
                "tol": _POSITIVE,
                "max_iter": {"type": "integer", "minimum": 1},
                "scheme": {"enum": ["semi-implicit", "explicit"]},
                "tau0": _POSITIVE,
                "project": {"type": "boolean"},
                "clamp": {"type": "boolean"},
                "checkpoint_every": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "spectral": {
            "type": "object",
            "properties": {
                "l": _POSITIVE,
                "h": _POSITIVE,
                "m_dprime": _NON_NEGATIVE,
                "samples": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "comparison": {
            "type": "object",
            "properties": {
                "n": {"enum": [1, 2, 3]},
                "c": _NON_NEGATIVE,
                "r_min": _POSITIVE,
                "r_max": _POSITIVE,
                "points": {"type": "integer", "minimum": 3},
                "h": _POSITIVE,
            },
            "additionalProperties": False,
        },
        "verify": {
            "type": "object",
            "properties": {
                "k_min": _NON_NEGATIVE,
                "eps_target": _POSITIVE,
                "r_max": _NON_NEGATIVE,
                "bin_width": _NON_NEGATIVE,
                "near_exclusion": _NON_NEGATIVE,
                "gradient_mode": {"type": "boolean"},
                "m0": _POSITIVE,
                "lambda": _POSITIVE,
                "j_max": {"type": "integer", "minimum": 0},
                "probe_trials": {"type": "integer", "minimum": 0},
                "probe_radius": _POSITIVE,
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


def deep_merge(base, override):
    """Рекурсивное слияние словарей, override побеждает"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def set_dotted(config, dotted, value):
    parts = dotted.split(".")
    node = config
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "cannot override a scalar with a section")
    node[parts[-1]] = value


def _match_key_case(parts):
    """Имена из переменных окружения приводятся к регистру ключей DEFAULT_CONFIG"""
    node = DEFAULT_CONFIG
    resolved = []
    for part in parts:
        known = {key.lower(): key for key in node} if isinstance(node, dict) else {}
        key = known.get(part.lower(), part.lower())
        resolved.append(key)
        node = node.get(key) if isinstance(node, dict) else None
    return resolved


def env_overrides(environ=None):
    """ACLAB_<SECTION>__<KEY>=<json> -> {'section.key': value}"""
    environ = os.environ if environ is None else environ
    overrides = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        dotted = ".".join(_match_key_case(name[len(ENV_PREFIX):].split("__")))
        try:
            overrides[dotted] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[dotted] = raw
    return overrides


def validate_config(config):
    try:
        validate(instance=config, schema=CONFIG_SCHEMA)
    except ValidationError as e:
        parts = [str(part) for part in e.absolute_path]
        if e.validator == "additionalProperties" and isinstance(e.instance, dict):
            known = set(e.schema.get("properties", {}))
            parts += sorted(set(e.instance) - known)[:1]
        key = ".".join(parts) or "<root>"
        logger.error(f"Invalid config at {key}: {e.message}")
        raise ConfigError(key, e.message) from e

    if config["domain"]["b"] <= config["domain"]["a"]:
        raise ConfigError("domain.b", f"must exceed domain.a={config['domain']['a']}")
    if config["potential"]["kind"] == "table" and not config["potential"]["table"]:
        raise ConfigError("potential.table", "tabulated potential needs a CSV path")
    if config["bc"]["kind"] == "table" and not config["bc"]["table"]:
        raise ConfigError("bc.table", "tabulated boundary data needs a CSV path")
    if config["comparison"]["r_max"] <= config["comparison"]["r_min"]:
        raise ConfigError("comparison.r_max", "must exceed comparison.r_min")
    return True


def load_config(path=None, environ=None, overrides=None):
    """TOML-файл поверх DEFAULT_CONFIG, затем .env и переменные ACLAB_*"""
    load_dotenv()
    data = {}
    if path is not None:
        path = Path(path)
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except FileNotFoundError as e:
            raise ConfigError("<file>", f"config file {path} not found") from e
        except tomllib.TOMLDecodeError as e:
            logger.error(f"Failed to parse {path}: {str(e)}")
            raise ConfigError("<file>", f"TOML syntax error in {path}: {e}") from e

    config = deep_merge(DEFAULT_CONFIG, data)
    # параметры области не сливаются с дефолтными полосы
    if "domain" in data and "params" in data["domain"]:
        config["domain"]["params"] = copy.deepcopy(data["domain"]["params"])

    for dotted, value in {**env_overrides(environ), **(overrides or {})}.items():
        logger.info(f"Config override {dotted} = {value!r}")
        set_dotted(config, dotted, value)

    validate_config(config)
    return config


def manage_checkpoints(checkpoint_dir, prefix="field", max_keep=5):
    """Оставляет max_keep последних CSV-чекпоинтов"""
    checkpoint_dir = Path(checkpoint_dir)
    checkpoints = sorted(
        [f for f in checkpoint_dir.glob(f"{prefix}_*.csv") if f.is_file()],
        key=lambda f: (f.stat().st_mtime, f.name),
    )
    for old in checkpoints[:-max_keep] if max_keep > 0 else checkpoints:
        try:
            old.unlink()
            logger.debug(f"Removed old checkpoint: {old}")
        except OSError as e:
            logger.error(f"Failed to remove {old}: {str(e)}")


def fit_log_linear(x, y):
    """Наклон и сдвиг МНК для log(y) = slope * x + intercept"""
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("log-linear fit requires positive samples")
    model = LinearRegression().fit(x, np.log(y))
    return float(model.coef_[0]), float(model.intercept_)


def to_builtin(value):
    """numpy-скаляры и массивы в типы json"""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_builtin(v) for v in value.tolist()]
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if np.isnan(value):
            return None
        if np.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_builtin(data), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_csv(path, columns, header):
    """Столбцы одинаковой длины, заголовок обязателен, 17 значащих цифр"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = np.column_stack([np.asarray(c, dtype=float) for c in columns]) if columns else np.empty((0, 0))
    np.savetxt(path, table, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    return path
