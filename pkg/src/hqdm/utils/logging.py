"""
Logging utilities for hqdm
"""

import logging
import sys
import colorlog

# Between INFO (20) and WARNING (30)
SUCCESS_LEVEL = 25


class SuccessLogger(logging.Logger):
    def success(self, msg, *args, **kwargs):
        """Log a message with severity 'SUCCESS' (level 25)."""
        if self.isEnabledFor(SUCCESS_LEVEL):
            self._log(SUCCESS_LEVEL, msg, args, **kwargs)


class ExceptionFormatter(colorlog.ColoredFormatter):
    def format(self, record):
        # Attach the active exception to ERROR records that did not pass exc_info themselves
        if (record.levelno >= logging.ERROR and
                not record.exc_info and
                sys.exc_info()[0] is not None and
                not getattr(record, '_exception_already_logged', False)):
            record.exc_info = sys.exc_info()
            record._exception_already_logged = True
        return super().format(record)


class DuplicateExceptionFilter(logging.Filter):
    """Drops records repeating an exception that was logged moments ago"""

    def __init__(self, window: int = 10):
        super().__init__()
        self.window = window
        self._recent = set()

    def filter(self, record):
        if record.exc_info:
            exc_hash = hash(str(record.exc_info))
            if exc_hash in self._recent:
                return False
            self._recent.add(exc_hash)
            if len(self._recent) > self.window:
                self._recent.clear()
        return True


def configure_logging(level=logging.INFO, show_tracebacks: bool = False):
    """Configure global logging: colored stdout records, diagnostics on stderr"""
    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    logging.addLevelName(SUCCESS_LEVEL, 'SUCCESS')
    logging.setLoggerClass(SuccessLogger)

    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    log_colors = {
        'DEBUG': 'cyan',
        'INFO': 'blue',
        'SUCCESS': 'green',
        'WARNING': 'yellow',
        'ERROR': 'red',
        'CRITICAL': 'red,bg_white',
    }
    fmt = '%(log_color)s%(asctime)s - %(levelname)s - %(name)s - %(message)s'

    out_handler = logging.StreamHandler(stream=sys.stdout)
    out_handler.setFormatter(colorlog.ColoredFormatter(fmt, log_colors=log_colors))
    out_handler.addFilter(lambda record: record.levelno < logging.ERROR)

    err_handler = logging.StreamHandler(stream=sys.stderr)
    err_handler.setLevel(logging.ERROR)
    if show_tracebacks:
        err_handler.setFormatter(ExceptionFormatter(fmt, log_colors=log_colors))
    else:
        err_handler.setFormatter(colorlog.ColoredFormatter(fmt, log_colors=log_colors))
    err_handler.addFilter(DuplicateExceptionFilter())

    root_logger.addHandler(out_handler)
    root_logger.addHandler(err_handler)

    # tqdm and numpy warnings go through the warnings module; keep them at WARNING
    logging.getLogger('py.warnings').setLevel(logging.WARNING)

    return root_logger
