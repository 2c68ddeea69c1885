import logging
import sys

from pythonjsonlogger.json import JsonFormatter


def configure_logging(level: str | int = "INFO") -> logging.Logger:
    """One JSON handler on stderr for the root logger; repeated calls replace it."""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter("%(asctime)s %(levelname)s %(name)s %(message)s"))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level.upper() if isinstance(level, str) else level)
    return root
