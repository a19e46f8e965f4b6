"""
Logging configuration for vfts.
Human-readable console logs by default, structured JSON when requested.
"""

import json
import logging
import sys

from vfts.config import get_log_level, use_json_logs


def setup_logging() -> logging.Logger:
    """
    Configure logging for the command-line pipeline.

    - Default: readable lines on stderr
    - VFTS_LOG_FORMAT=json: one JSON object per record

    Returns:
        Configured logger instance
    """
    root_logger = logging.getLogger()
    root_logger.setLevel(get_log_level())

    # Remove existing handlers to avoid duplicates
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    if use_json_logs():
        formatter = StructuredFormatter()
    else:
        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )

    # stdout carries the one-line stage summaries
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    return logging.getLogger('vfts')


class StructuredFormatter(logging.Formatter):
    """Formats each record as a single JSON object."""

    def format(self, record: logging.LogRecord) -> str:
        log_entry = {
            'timestamp': self.formatTime(record),
            'severity': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
            'module': record.module,
            'function': record.funcName,
            'line': record.lineno
        }

        if record.exc_info:
            log_entry['exception'] = self.formatException(record.exc_info)

        if hasattr(record, 'extra_fields'):
            log_entry.update(record.extra_fields)

        return json.dumps(log_entry)


def log_stage(stage: str, success: bool, duration_ms: float, error: str = None, **fields):
    """
    Log a pipeline stage outcome with structured fields.

    Args:
        stage: Subcommand / stage name
        success: Whether the stage succeeded
        duration_ms: Stage duration in milliseconds
        error: Error message if failed
        **fields: Stage-specific counters (cycles, q, order, ...)
    """
    logger = logging.getLogger('vfts.stage')

    extra_fields = {
        'stage': stage,
        'success': success,
        'duration_ms': duration_ms,
        'operation': 'pipeline_stage',
        **fields
    }

    if error:
        extra_fields['error'] = error

    message = f"Stage {stage} {'succeeded' if success else 'failed'} in {duration_ms:.2f}ms"
    if error:
        message += f": {error}"

    record = logging.LogRecord(
        name=logger.name,
        level=logging.INFO if success else logging.ERROR,
        pathname='',
        lineno=0,
        msg=message,
        args=(),
        exc_info=None
    )
    record.extra_fields = extra_fields

    logger.handle(record)
