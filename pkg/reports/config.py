"""Report output configuration and constants."""
import logging
import os


logger: 'logging.Logger' = logging.getLogger("reports")


VERSION: str = "0.1.0"
PACKAGE_ROOT: str = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_SCHEMA_PATH: str = os.path.join(PACKAGE_ROOT, "docs", "config-schema.json")
REPORT_SCHEMA_PATH: str = os.path.join(PACKAGE_ROOT, "docs", "report-schema.json")
DEFAULT_OUT_DIR: str = "out"
JSON_INDENT: int = 2
CSV_FLOAT_FORMAT: str = "{:.17g}"

PRESSURE_COLUMNS: list[str] = ["t", "ep", "stderr", "n", "estimator"]
DECAY_COLUMNS: list[str] = ["n", "test_fn", "c_n"]
DENSITY_COLUMNS: list[str] = ["cell", "left", "right", "q"]
SURVIVOR_COLUMNS: list[str] = ["depth", "left", "right"]
RATIO_COLUMNS: list[str] = ["test_fn", "n", "min_ratio", "max_ratio", "support"]

COMMANDS: list[str] = ["pressure", "dimension", "escape", "density", "decay", "check", "oracle"]
