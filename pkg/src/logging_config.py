"""
Logging configuration for cityscope

Provides centralized logging configuration with:
- File logging for persistent records
- Console logging on standard error, level set by CITYSCOPE_LOG
- Separate activity logs for training, evaluation and prediction runs
- Rotation to prevent disk space issues
"""

import logging
import logging.handlers
import os
import time
from datetime import datetime
from pathlib import Path

LEVELS = {
    'error': logging.ERROR,
    'info': logging.INFO,
    'debug': logging.DEBUG,
}


def console_level():
    """Console level from the CITYSCOPE_LOG environment variable (default info)"""
    return LEVELS.get(os.environ.get('CITYSCOPE_LOG', 'info').strip().lower(), logging.INFO)


def _log_root(log_dir=None):
    if log_dir is not None:
        return Path(log_dir)
    if os.environ.get('CITYSCOPE_LOG_DIR'):
        return Path(os.environ['CITYSCOPE_LOG_DIR'])
    # Project root (where src/ is located)
    return Path(__file__).parent.parent / 'logs'


def _ensure_dir(path):
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError:
        return False
    return os.access(path, os.W_OK)


def setup_logging(name='cityscope', log_dir=None, level=None):
    """
    Set up logging for one module of the application

    Args:
        name: Logger name
        log_dir: Directory to store log files (default: <project>/logs or CITYSCOPE_LOG_DIR)
        level: Console level (default: from CITYSCOPE_LOG)

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG)
    logger.propagate = False

    # Remove existing handlers to avoid duplicates
    logger.handlers.clear()

    detailed_formatter = logging.Formatter(
        '%(asctime)s | %(levelname)-8s | %(name)s | %(funcName)s | %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    simple_formatter = logging.Formatter(
        '%(asctime)s | %(levelname)-8s | %(message)s',
        datefmt='%H:%M:%S'
    )

    log_path = _log_root(log_dir)
    if _ensure_dir(log_path):
        all_log_file = log_path / f'cityscope_{datetime.now().strftime("%Y%m%d")}.log'
        file_handler = logging.handlers.RotatingFileHandler(
            all_log_file,
            maxBytes=10*1024*1024,  # 10MB
            backupCount=5,
            delay=True
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(detailed_formatter)
        logger.addHandler(file_handler)

        error_handler = logging.handlers.RotatingFileHandler(
            log_path / 'errors.log',
            maxBytes=5*1024*1024,  # 5MB
            backupCount=3,
            delay=True
        )
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(detailed_formatter)
        logger.addHandler(error_handler)

    # StreamHandler writes to standard error
    console_handler = logging.StreamHandler()
    console_handler.setLevel(level if level is not None else console_level())
    console_handler.setFormatter(simple_formatter)
    logger.addHandler(console_handler)

    return logger


def refresh_console_level(level=None):
    """Re-apply the console level to every cityscope logger (CLI calls this after parsing flags)"""
    target = level if level is not None else console_level()
    for logger in list(logging.Logger.manager.loggerDict.values()):
        if not isinstance(logger, logging.Logger):
            continue
        for handler in logger.handlers:
            if type(handler) is logging.StreamHandler:
                handler.setLevel(target)


def get_activity_logger(activity_name, log_dir=None):
    """
    Get a logger for a specific activity (train, finetune, evaluate, predict, ...)

    Args:
        activity_name: Name of the activity
        log_dir: Base log directory (activities go to <log_dir>/activities)

    Returns:
        Logger configured for the activity
    """
    logger = logging.getLogger(f'cityscope.activity.{activity_name}')
    logger.handlers.clear()
    logger.propagate = False
    logger.setLevel(logging.INFO)

    activity_dir = _log_root(log_dir) / 'activities'
    if _ensure_dir(activity_dir):
        log_file = activity_dir / f'{activity_name}_{datetime.now().strftime("%Y%m%d")}.log'
        handler = logging.handlers.RotatingFileHandler(
            log_file,
            maxBytes=5*1024*1024,
            backupCount=3,
            delay=True
        )
        handler.setFormatter(logging.Formatter(
            '%(asctime)s | %(levelname)s | %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        ))
        logger.addHandler(handler)
    else:
        logger.addHandler(logging.NullHandler())

    return logger


class ActivityLogger:
    """
    Wraps one command run in START / SUCCESS / FAILED records

    Results recorded with ``record`` are logged as they arrive and repeated on
    the SUCCESS line, so a finished run can be read from a single line. A
    failure logs the error code of domain errors and never swallows the
    exception.
    """

    def __init__(self, activity_name, description="", logger=None):
        self.activity_name = activity_name
        self.title = description or activity_name
        self.logger = logger or get_activity_logger(activity_name)
        self.results = {}
        self.success = False
        self._started = None

    def __enter__(self):
        self._started = time.perf_counter()
        self.logger.info(f"START: {self.title}")
        return self

    def record(self, key, value):
        self.results[key] = value
        self.logger.info(f"  {key} = {value}")

    def __exit__(self, exc_type, exc_val, exc_tb):
        elapsed = time.perf_counter() - self._started
        self.success = exc_type is None
        if self.success:
            summary = ', '.join(f"{k}={v}" for k, v in self.results.items())
            self.logger.info(f"SUCCESS: {self.title} ({elapsed:.2f}s)" + (f" [{summary}]" if summary else ""))
        else:
            code = getattr(exc_val, 'code', exc_type.__name__)
            self.logger.error(f"FAILED: {self.title} ({elapsed:.2f}s) {code}: {exc_val}")
        return False
