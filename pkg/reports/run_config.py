"""Run configuration: schema validation, defaults, overrides and hashing."""
import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import jsonschema

from cocycle import RandomOpenSystem, SEED_LIMIT, system_from_dict
from errors import ConfigError
from transfer import default_battery
from .config import CONFIG_SCHEMA_PATH, DEFAULT_OUT_DIR, logger
from .envelope import canonical_json


@dataclass(frozen=True)
class RunConfig:
    system: Dict[str, Any]
    resolution: int = 256
    window: Tuple[int, int] = (64, 256)
    seed: int = 0
    t_grid: Tuple[float, ...] = (0.0, 0.5, 1.0)
    tol_lambda: float = 1e-10
    tol_t: float = 1e-3
    samples: int = 256
    depth: int = 30
    n_max: int = 200
    estimator: str = "sandwich"
    threads: int = 1
    battery: Tuple[Dict[str, Any], ...] = field(default_factory=lambda: tuple(default_battery()))
    orbits: int = 1
    check: Dict[str, int] = field(default_factory=lambda: {"N1": 1, "N2": 1, "max_escalation": 4})
    oracle: Dict[str, Any] = field(default_factory=lambda: {"depths": [4, 10]})
    box_count: bool = True
    out: str = DEFAULT_OUT_DIR

    def __post_init__(self) -> None:
        if not (self.tol_lambda > 0 and self.tol_t > 0):
            raise ConfigError("Tolerances tol_lambda and tol_t must be positive")
        if not 0 <= self.seed < SEED_LIMIT:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not self.t_grid:
            raise ConfigError("t_grid must not be empty")

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc["window"] = list(self.window)
        doc["t_grid"] = list(self.t_grid)
        doc["battery"] = [dict(b) for b in self.battery]
        return doc

    def build_system(self) -> RandomOpenSystem:
        return system_from_dict(self.system)

    def with_overrides(self, **overrides: Any) -> 'RunConfig':
        given = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **given) if given else self


def config_hash(config: RunConfig) -> str:
    """SHA-256 over the canonical JSON of the effective config; ``out`` is not part of it."""
    doc = config.to_dict()
    doc.pop("out", None)
    return hashlib.sha256(canonical_json(doc).encode('utf-8')).hexdigest()


def _line_of(raw: str, path: List[Any]) -> Optional[int]:
    """Line of the last object key on ``path`` in the raw config text, if it can be found."""
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return None
    match = re.search(r'"' + re.escape(keys[-1]) + r'"\s*:', raw)
    return raw.count("\n", 0, match.start()) + 1 if match else None


def validate_document(doc: Dict[str, Any], raw: str = "", schema_path: str = CONFIG_SCHEMA_PATH) -> None:
    with open(schema_path, 'r', encoding='utf-8') as f:
        schema = json.load(f)
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        first = errors[0]
        line = _line_of(raw, list(first.absolute_path)) if raw else None
        where = f"{first.json_path}" + (f" (line {line})" if line else "")
        logger.error(f"Config validation failed at {where}: {first.message}")
        raise ConfigError(f"Invalid config at {where}: {first.message}",
                          {"path": first.json_path, "line": line, "errors": len(errors)})


def config_from_dict(doc: Dict[str, Any], raw: str = "") -> RunConfig:
    validate_document(doc, raw)
    fields = dict(doc)
    for key in ("window", "t_grid"):
        if key in fields:
            fields[key] = tuple(fields[key])
    if "battery" in fields:
        fields["battery"] = tuple(fields["battery"])
    if "check" in fields:
        fields["check"] = {"N1": 1, "N2": 1, "max_escalation": 4, **fields["check"]}
    try:
        return RunConfig(**fields)
    except TypeError as e:
        raise ConfigError(f"Invalid config: {e}")


def load_config(path: str, **overrides: Any) -> RunConfig:
    """Reads, validates and overrides a run config (``seed``, ``threads``, ``estimator``, ``out``)."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            raw = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config {path} is not valid JSON (line {e.lineno}): {e.msg}", {"line": e.lineno})
    config = config_from_dict(doc, raw).with_overrides(**overrides)
    logger.info(f"Loaded config {path} (hash {config_hash(config)[:12]})")
    return config
