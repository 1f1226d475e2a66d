import logging
import os

LOG_PATH = "data/logs"

# One log file per component; the level is what the component logger lets through.
COMPONENT_LOGGERS = {
    "cocycle": logging.INFO,
    "transfer": logging.INFO,
    "quenched": logging.INFO,
    "analysis": logging.INFO,
    "conditions": logging.INFO,
    "oracle": logging.INFO,
    "orbit_worker": logging.INFO,
    "reports": logging.INFO,
}

FILE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def _attach_file(name: str, level: int, log_path: str) -> logging.Logger:
    """Gives the named logger its own file and stops it propagating to the console."""
    handler = logging.FileHandler(os.path.join(log_path, f"{name}.log"), encoding="utf-8")
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(logging.Formatter(FILE_FORMAT))

    component_logger = logging.getLogger(name)
    component_logger.setLevel(level)
    component_logger.handlers.clear()  # Clear any existing handlers
    component_logger.addHandler(handler)
    component_logger.propagate = False
    return component_logger


def setup_logging(log_path: str = LOG_PATH):
    """Sets up the logging configuration for the application."""

    # Create logs directory if it doesn't exist
    os.makedirs(log_path, exist_ok=True)

    # Clear all existing handlers to prevent duplication
    logging.getLogger().handlers.clear()

    # set up the root logger for console output only
    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG)

    # Create a console handler for user-facing output
    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.WARNING)  # Only show WARNING and above on the console
    console_handler.setFormatter(logging.Formatter('%(message)s'))
    root_logger.addHandler(console_handler)

    # App log will be for unexpected errors and misc logs not caught by specific loggers
    _attach_file("app", logging.INFO, log_path)

    for name, level in COMPONENT_LOGGERS.items():
        _attach_file(name, level, log_path)
