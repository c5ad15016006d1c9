import logging

import coloredlogs

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"


def setup_logging(verbose: bool = False) -> None:
    """Attach a colored console handler to the package loggers"""
    coloredlogs.install(
        level=logging.DEBUG if verbose else logging.INFO,
        logger=logging.getLogger("src"),
        fmt=LOG_FORMAT,
    )
