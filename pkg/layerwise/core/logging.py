"""
Structured logging for layerwise commands and experiments
"""

import logging
import sys
from typing import Any, Dict, Optional

import structlog
from structlog.contextvars import bind_contextvars, clear_contextvars, get_contextvars, merge_contextvars

from layerwise.core.config import settings


def setup_logging(level: Optional[str] = None, **context: Any) -> None:
    """Configure structlog and bind the run context (command, experiment, ...) to every event"""
    # stderr keeps stdout free for machine-readable command output
    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, (level or settings.LOG_LEVEL).upper()),
        force=True,
    )

    structlog.configure(
        processors=[
            merge_contextvars,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.stdlib.add_logger_name,
            structlog.processors.format_exc_info,
            structlog.processors.JSONRenderer()
            if settings.is_production
            else structlog.dev.ConsoleRenderer(),
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    clear_contextvars()
    bind_run_context(**context)


def bind_run_context(**values: Any) -> None:
    """Attach values to all later events of this run; None values are skipped"""
    bind_contextvars(**{key: value for key, value in values.items() if value is not None})


def run_context() -> Dict[str, Any]:
    """Snapshot of the bound run context, for handing to worker threads"""
    return get_contextvars()


def get_struct_logger(name: Optional[str] = None) -> structlog.stdlib.BoundLogger:
    return structlog.get_logger(name)


class LoggerMixin:
    """Class-named structured logger"""

    @property
    def logger(self) -> structlog.stdlib.BoundLogger:
        return get_struct_logger(f"{self.__class__.__module__}.{self.__class__.__name__}")

    def log_info(self, message: str, **kwargs: Any) -> None:
        self.logger.info(message, **kwargs)
