"""Logging utilities for the COMA bench.

This module provides logging functionality with support for secret material.
Keys, TRNs and PUF responses are passed as ``hidden`` data and are only
rendered when the environment explicitly allows it. Structured events are
emitted with an ``event`` field so they can be rendered as JSON lines.

Environment Variables:
    COMA_OUTPUT_IS_SHY (str): Controls whether secret data is hidden in logs.
        Set to "false" to show hidden information. Accepts various truthy/falsy values:
        - True values: "true", "1", "t", "yes", "y", "yup", "sure", "ok", "yep", "yeah", "shy", "on"
        - Any other value is considered False

Example:
    ```python
    from logging import getLogger, DEBUG, WARNING
    from ._logging import _log_message, _log_event

    logger = getLogger(__name__)

    # Basic logging
    _log_message(logger, DEBUG, "Activation completed")

    # Logging with secret data
    _log_message(logger, DEBUG, "TRN issued", trn.to_hex())

    # Structured event
    _log_event(logger, WARNING, "health_alarm", kind="RCT", count=21, cutoff=21)
    ```
"""
import json
import os
import sys
from typing import Any, Optional, TextIO
from logging import Formatter, Logger, LogRecord, StreamHandler, DEBUG, getLogger

OUTPUT_IS_SHY = os.getenv("COMA_OUTPUT_IS_SHY", "true").lower() in ("true", "1", "t", "yes", "y", "yup",
                                                                   "sure", "ok", "yep", "yeah", "shy", "on")
"""bool: Global flag controlling visibility of secret data in logs."""

_HIDDEN_PLACEHOLDER = "<INFO HIDDEN, set COMA_OUTPUT_IS_SHY=false to see>"

# Attributes every LogRecord has; anything else came in through ``extra``.
_RESERVED = set(LogRecord("", 0, "", 0, "", (), None).__dict__) | {"message", "asctime"}


def _log_message(logger: Logger, log_level: int, message: str, hidden: Any = None) -> None:
    """Log a message with optional hidden information.

    When hidden data is provided it is either appended to the message or
    replaced with a placeholder, depending on COMA_OUTPUT_IS_SHY.

    Args:
        logger: Logger instance to use for logging
        log_level: Logging level (e.g., DEBUG, INFO, WARNING, ERROR)
        message: Main message to log
        hidden: Optional secret data to include in logs. Will be hidden if
            OUTPUT_IS_SHY is True

    Example:
        ```python
        _log_message(logger, DEBUG, "SK derived", sk.hex())
        ```

        With COMA_OUTPUT_IS_SHY=true:
        ```
        <INFO HIDDEN, set COMA_OUTPUT_IS_SHY=false to see>
        SK derived
        ```
    """
    message = f"{message}"
    if hidden is not None:
        if OUTPUT_IS_SHY:
            logger.log(DEBUG, _HIDDEN_PLACEHOLDER)
        else:
            message += f" {hidden}"
    logger.log(log_level, message)


def _log_event(logger: Logger, log_level: int, event: str, **fields: Any) -> None:
    """Log a structured event.

    The event name and fields travel as ``extra`` record attributes, so the
    plain formatter shows a readable line and ``JsonLinesFormatter`` emits one
    JSON object per record.

    Args:
        logger: Logger instance to use for logging
        log_level: Logging level
        event: Event name, e.g. "health_alarm" or "activation"
        **fields: JSON-serializable event fields
    """
    details = " ".join(f"{key}={value}" for key, value in fields.items())
    logger.log(log_level, f"{event} {details}".strip(), extra={"event": event, **fields})


class JsonLinesFormatter(Formatter):
    """Render each log record as a single JSON object.

    The object always holds ``level``, ``logger`` and ``message``; records
    emitted through ``_log_event`` also carry ``event`` and their fields.
    """

    def format(self, record: LogRecord) -> str:
        payload = {
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        for key, value in record.__dict__.items():
            if key not in _RESERVED and not key.startswith("_"):
                payload[key] = value
        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)
        return json.dumps(payload, sort_keys=True, default=str)


def configure_logging(level: int | str = "WARNING", json_lines: bool = False,
                      stream: Optional[TextIO] = None) -> None:
    """Attach a single stream handler to the package logger.

    Library modules never call this; the command line front end does.

    Args:
        level: Logging level name or number
        json_lines: Render records as JSON lines instead of plain text
        stream: Destination stream (default: stderr)
    """
    package_logger = getLogger("coma_bench")
    for handler in list(package_logger.handlers):
        package_logger.removeHandler(handler)
    handler = StreamHandler(stream or sys.stderr)
    if json_lines:
        handler.setFormatter(JsonLinesFormatter())
    else:
        handler.setFormatter(Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    package_logger.addHandler(handler)
    package_logger.setLevel(level if isinstance(level, int) else level.upper())
