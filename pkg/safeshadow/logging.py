"""Logging utilities (duh)"""

import sys
from typing import Any

from loguru import logger as logging

LOGGING_LEVELS = ["critical", "debug", "error", "info", "warning"]
"""
Allowed logging levels (case insensitive). See `setup_logging`.
"""

CONTEXT_KEYS = ["obstacle", "stage"]
"""
Keys of `logging.contextualize` that are rendered in front of the message when
they are set, e.g. the obstacle id inside a shadow search.
"""


def _format(record: Any) -> str:
    """
    Loguru format function. Contextual keys from `CONTEXT_KEYS` that are bound
    to the record show up as `key=value` tags.
    """
    tags = "".join(
        f"<cyan>{k}={{extra[{k}]}}</cyan> "
        for k in CONTEXT_KEYS
        if k in record["extra"]
    )
    return (
        "<green>{time:YYYY-MM-DD HH:mm:ss}</green> "
        + "[<level>{level: <8}</level>] "
        + tags
        + "<level>{message}</level>\n{exception}"
    )


def setup_logging(logging_level: str = "info") -> None:
    """
    Sets logging format and level. The format is

        %(asctime)s [%(levelname)-8s] [context tags] %(message)s

    e.g.

        2022-02-01 10:41:43,797 [INFO    ] Certified total risk 2.1e-05
        2022-02-01 10:42:12,488 [WARNING ] obstacle=B Volume hits the mean
        polytope

    Args:
        logging_level (str): Logging level in `LOGGING_LEVELS` (case
            insensitive).
    """
    if logging_level.lower() not in LOGGING_LEVELS:
        raise ValueError(
            "Logging level must be one of "
            + ", ".join(map(lambda s: f"'{s}'", LOGGING_LEVELS))
            + " (case insensitive)"
        )
    logging.remove()
    logging.add(
        sys.stderr,
        format=_format,
        level=logging_level.upper(),
        enqueue=True,
        colorize=True,
    )
